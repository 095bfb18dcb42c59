//! Offline transition datasets and their line-oriented file format.
//!
//! A dataset file is JSON Lines. The first line is the header
//!
//! ```text
//! {"format_version":1,"env_id":"treatment-v0","state_dim":8,"action_dim":1,
//!  "episodes":50,"horizon":24,"seed":0,"noise_scale":0.05}
//! ```
//!
//! and every following line is one transition
//!
//! ```text
//! {"s":[..8 reals..],"a":[a],"r":r,"s_next":[..8 reals..],"terminal":0,"timeout":1}
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! yields bit-identical values. Readers reject any other `format_version`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub env_id: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    #[serde(with = "flag")]
    pub terminal: bool,
    #[serde(with = "flag")]
    pub timeout: bool,
}

mod flag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("flag must be 0 or 1, got {other}"))),
        }
    }
}

/// Minibatch in array form, one row per transition.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 for true terminations, 0.0 otherwise (timeouts bootstrap).
    pub terminals: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    header: DatasetHeader,
    transitions: Vec<Transition>,
}

impl OfflineDataset {
    pub fn new(header: DatasetHeader, transitions: Vec<Transition>) -> Result<Self> {
        if header.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(header.format_version));
        }
        if transitions.len() != header.episodes * header.horizon {
            return Err(Error::Parse(format!(
                "{} transitions, header promises {} episodes x {} steps",
                transitions.len(),
                header.episodes,
                header.horizon
            )));
        }
        for (i, t) in transitions.iter().enumerate() {
            let dims_ok = t.s.len() == header.state_dim
                && t.s_next.len() == header.state_dim
                && t.a.len() == header.action_dim;
            if !dims_ok {
                return Err(Error::Parse(format!("transition {i} has wrong dimensions")));
            }
            if t.terminal && t.timeout {
                return Err(Error::Parse(format!("transition {i} is both terminal and timeout")));
            }
        }
        Ok(Self { header, transitions })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.header.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.header.action_dim
    }

    pub fn batch_from_indices(&self, idx: &[usize]) -> Batch {
        let (sd, ad) = (self.state_dim(), self.action_dim());
        let mut b = Batch {
            states: Array2::zeros((idx.len(), sd)),
            actions: Array2::zeros((idx.len(), ad)),
            rewards: Array1::zeros(idx.len()),
            next_states: Array2::zeros((idx.len(), sd)),
            terminals: Array1::zeros(idx.len()),
        };
        for (row, &i) in idx.iter().enumerate() {
            let t = &self.transitions[i];
            b.states.row_mut(row).assign(&ndarray::aview1(&t.s));
            b.actions.row_mut(row).assign(&ndarray::aview1(&t.a));
            b.next_states.row_mut(row).assign(&ndarray::aview1(&t.s_next));
            b.rewards[row] = t.r;
            b.terminals[row] = if t.terminal { 1.0 } else { 0.0 };
        }
        b
    }

    /// Uniform sampling with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..self.len())).collect();
        Ok(self.batch_from_indices(&idx))
    }

    pub fn full_batch(&self) -> Batch {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch_from_indices(&idx)
    }

    /// States at `count` evenly spaced positions, in dataset order.
    pub fn probe_states(&self, count: usize) -> Array2<f64> {
        let n = count.min(self.len()).max(1);
        let idx: Vec<usize> = (0..n).map(|k| k * self.len() / n).collect();
        self.batch_from_indices(&idx).states
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        serde_json::to_writer(&mut *w, &self.header)?;
        w.write_all(b"\n")?;
        for t in &self.transitions {
            serde_json::to_writer(&mut *w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))??;
        let probe: serde_json::Value = serde_json::from_str(&first)?;
        let version = probe
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse("header lacks format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::UnsupportedVersion(version as u32));
        }
        let header: DatasetHeader = serde_json::from_value(probe)?;
        let mut transitions = Vec::with_capacity(header.episodes * header.horizon);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Transition =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
            transitions.push(t);
        }
        Self::new(header, transitions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
