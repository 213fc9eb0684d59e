use platoon::comms::{Observation, OBSERVATION_LEN};
use platoon::policy::{gaussian_log_prob, gradients, init_policy, loss_value, LossDefinition, PolicyParameters, PolicyShape, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn small_net(seed: u64) -> PolicyParameters<f64> {
    let shape = PolicyShape {
        input: OBSERVATION_LEN,
        hidden: vec![8],
    };
    let mut p = init_policy(&shape, seed);
    // Larger weights than the initializer so every term has a sizeable gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for v in p.data.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    p
}

pub fn minibatch(params: &PolicyParameters<f64>, rng: &mut ChaCha8Rng, n: usize) -> Vec<Sample<f64>> {
    (0..n)
        .map(|_| {
            let obs = Observation(std::array::from_fn(|_| rng.random_range(0.0..1.0)));
            let out = params.forward(obs.as_slice()).unwrap();
            let action = std::array::from_fn(|i| out.mean[i] + rng.random_range(-0.8..0.8));
            let logp = gaussian_log_prob(&action, &out.mean, params.log_std());
            Sample {
                obs,
                action,
                // Ratios spread over roughly [0.6, 1.6] so both clip branches occur.
                old_log_prob: logp + rng.random_range(-0.45..0.5),
                advantage: rng.random_range(-2.0..2.0),
                ret: out.value + rng.random_range(-1.5..1.5),
            }
        })
        .collect()
}

pub fn finite_difference(params: &PolicyParameters<f64>, batch: &[Sample<f64>], loss: &LossDefinition<f64>) -> Vec<f64> {
    let mut p = params.clone();
    (0..p.data.len())
        .map(|k| {
            let orig = p.data[k];
            p.data[k] = orig + H;
            let up = loss_value(&p, batch, loss).unwrap().total;
            p.data[k] = orig - H;
            let down = loss_value(&p, batch, loss).unwrap().total;
            p.data[k] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn worst_error(loss: LossDefinition<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    (0..20)
        .map(|b| {
            let params = small_net(100 + b);
            let n = rng.random_range(4..24);
            let batch = minibatch(&params, &mut rng, n);
            let (analytic, _) = gradients(&params, &batch, &loss).unwrap();
            relative_error(&analytic, &finite_difference(&params, &batch, &loss))
        })
        .fold(0.0, f64::max)
}

pub fn only(surrogate: f64, value: f64, entropy: f64) -> LossDefinition<f64> {
    LossDefinition {
        clip_epsilon: 0.2,
        surrogate_coef: surrogate,
        value_coef: value,
        entropy_coef: entropy,
    }
}
