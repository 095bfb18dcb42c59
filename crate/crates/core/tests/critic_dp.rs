//! The learned critic against exact policy evaluation of the empirical MDP.

use fat2thin::critic::{CriticOptimizer, CriticSpec};
use fat2thin::dataset::Batch;
use fat2thin::nn::AdamConfig;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA: f64 = 0.9;
const STATES: usize = 3;

/// (s, a, r, s', terminal) with a in {0, 1}.
const LOG: &[(usize, usize, f64, usize, bool)] = &[
    (0, 0, 1.0, 1, false),
    (0, 0, 1.0, 2, false),
    (0, 1, 0.0, 0, false),
    (1, 0, -1.0, 2, false),
    (1, 1, 2.0, 0, false),
    (1, 1, 2.0, 1, false),
    (1, 1, 2.0, 0, false),
    (2, 0, 0.5, 2, false),
    (2, 1, 3.0, 0, true),
    (2, 1, 3.0, 1, false),
];

fn one_hot(s: usize) -> [f64; STATES] {
    let mut v = [0.0; STATES];
    v[s] = 1.0;
    v
}

/// Q of the logging policy on the empirical MDP, with V(s) the mean of Q
/// over logged actions at s (the 0.5-expectile).
fn dynamic_programming() -> [[f64; 2]; STATES] {
    let mut q = [[0.0; 2]; STATES];
    for _ in 0..2000 {
        let mut v = [0.0; STATES];
        for s in 0..STATES {
            let at_s: Vec<_> = LOG.iter().filter(|t| t.0 == s).collect();
            v[s] = at_s.iter().map(|t| q[s][t.1]).sum::<f64>() / at_s.len() as f64;
        }
        let mut next = [[0.0; 2]; STATES];
        for s in 0..STATES {
            for a in 0..2 {
                let rows: Vec<_> = LOG.iter().filter(|t| t.0 == s && t.1 == a).collect();
                next[s][a] = rows
                    .iter()
                    .map(|t| t.2 + if t.4 { 0.0 } else { GAMMA * v[t.3] })
                    .sum::<f64>()
                    / rows.len() as f64;
            }
        }
        q = next;
    }
    q
}

#[test]
fn td_critic_matches_dynamic_programming() {
    let n = LOG.len();
    let batch = Batch {
        states: Array2::from_shape_fn((n, STATES), |(i, j)| one_hot(LOG[i].0)[j]),
        actions: Array2::from_shape_fn((n, 1), |(i, _)| LOG[i].1 as f64),
        rewards: Array1::from_shape_fn(n, |i| LOG[i].2),
        next_states: Array2::from_shape_fn((n, STATES), |(i, j)| one_hot(LOG[i].3)[j]),
        terminals: Array1::from_shape_fn(n, |i| if LOG[i].4 { 1.0 } else { 0.0 }),
    };
    let spec = CriticSpec {
        state_dim: STATES,
        action_dim: 1,
        hidden: vec![32, 32],
        expectile: 0.5,
        gamma: GAMMA,
        action_scale: 1.0,
    };
    let mut critic = spec.build(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut opt = CriticOptimizer::new(&critic, AdamConfig::with_lr(1e-3), 0.05);
    for _ in 0..10_000 {
        opt.step(&mut critic, &batch).unwrap();
    }
    let expect = dynamic_programming();
    for s in 0..STATES {
        for a in 0..2 {
            let got = critic
                .q_values(
                    Array2::from_shape_vec((1, STATES), one_hot(s).to_vec()).unwrap().view(),
                    Array2::from_elem((1, 1), a as f64).view(),
                )
                .unwrap()[0];
            assert!((got - expect[s][a]).abs() < 1e-2, "Q({s},{a}) = {got}, DP {}", expect[s][a]);
        }
    }
}
