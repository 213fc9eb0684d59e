//! Exact lambda-return advantages over rationals.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Q = BigRational;

pub fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

pub fn pow(x: &Q, n: usize) -> Q {
    (0..n).fold(Q::one(), |acc, _| acc * x)
}

pub struct Case {
    pub rewards: Vec<Q>,
    pub values: Vec<Q>,
    pub dones: Vec<bool>,
    pub last_value: Q,
    pub gamma: Q,
    pub lambda: Q,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(1..=32);
    let small = |rng: &mut ChaCha8Rng| q(rng.random_range(-400..400), rng.random_range(1..9));
    Case {
        rewards: (0..n).map(|_| small(rng)).collect(),
        values: (0..n).map(|_| small(rng)).collect(),
        dones: (0..n).map(|_| rng.random_bool(0.15)).collect(),
        last_value: small(rng),
        gamma: q(rng.random_range(80..=100), 100),
        lambda: q(rng.random_range(0..=100), 100),
    }
}

/// Advantage as the lambda-weighted mixture of n-step returns, minus the baseline.
pub fn lambda_return_advantages(c: &Case) -> Vec<Q> {
    let n = c.rewards.len();
    (0..n)
        .map(|t| {
            // First index past the segment that starts at t.
            let end = (t..n).find(|&k| c.dones[k]).map_or(n, |k| k + 1);
            let tail_value = if end == n && !c.dones[n - 1] { c.last_value.clone() } else { Q::zero() };
            let value_at = |k: usize| if k < end { c.values[k].clone() } else { tail_value.clone() };
            let horizon = end - t;
            let g_n = |steps: usize| {
                let discounted: Q = (0..steps).map(|k| pow(&c.gamma, k) * &c.rewards[t + k]).sum();
                discounted + pow(&c.gamma, steps) * value_at(t + steps)
            };
            let one_minus = Q::one() - &c.lambda;
            let mixed: Q = (1..horizon).map(|m| &one_minus * pow(&c.lambda, m - 1) * g_n(m)).sum::<Q>()
                + pow(&c.lambda, horizon - 1) * g_n(horizon);
            mixed - &c.values[t]
        })
        .collect()
}

