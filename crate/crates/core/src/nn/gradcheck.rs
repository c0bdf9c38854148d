//! Central finite-difference checks of [`Network::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HiddenActivation, Matrix, Network, Normalization, OutputActivation};
use crate::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor: gradients smaller than this are compared on an absolute scale, since
/// central-difference roundoff is about 1e-10 here.
pub const FD_FLOOR: f64 = 1e-4;

/// Worst relative error found on one network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub sizes: Vec<usize>,
    pub hidden: HiddenActivation,
    pub output: OutputActivation,
    pub params: usize,
    pub max_param_error: f64,
    pub max_input_error: f64,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Objective `Σ upstream ⊙ net(x)`, whose gradient is exactly what `backward` returns for
/// that upstream.
fn objective(net: &Network, x: &Matrix, upstream: &Matrix) -> Result<f64> {
    Ok(net
        .forward(x)?
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(y, u)| y * u)
        .sum())
}

fn param_mut(net: &mut Network, layer: usize, which: usize, i: usize) -> &mut f64 {
    let l = &mut net.layers_mut()[layer];
    if which == 0 {
        &mut l.weights[i]
    } else {
        &mut l.bias[i]
    }
}

/// Compares every parameter and input gradient of `net` at `x` with central differences.
pub fn check_network(net: &Network, x: &Matrix, upstream: &Matrix) -> Result<GradCheck> {
    let (_, trace) = net.forward_traced(x)?;
    let (grads, grad_in) = net.backward(&trace, upstream)?;
    let mut probe = net.clone();
    let mut max_param_error = 0.0f64;
    for (l, g) in grads.layers.iter().enumerate() {
        for (which, analytic) in [(0, &g.weights), (1, &g.bias)] {
            for (i, &a) in analytic.iter().enumerate() {
                let orig = *param_mut(&mut probe, l, which, i);
                *param_mut(&mut probe, l, which, i) = orig + FD_STEP;
                let up = objective(&probe, x, upstream)?;
                *param_mut(&mut probe, l, which, i) = orig - FD_STEP;
                let down = objective(&probe, x, upstream)?;
                *param_mut(&mut probe, l, which, i) = orig;
                let fd = (up - down) / (2.0 * FD_STEP);
                max_param_error = max_param_error.max(rel_error(a, fd));
            }
        }
    }
    let mut xp = x.clone();
    let mut max_input_error = 0.0f64;
    for i in 0..x.data().len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let up = objective(net, &xp, upstream)?;
        xp.data_mut()[i] = orig - FD_STEP;
        let down = objective(net, &xp, upstream)?;
        xp.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        max_input_error = max_input_error.max(rel_error(grad_in.data()[i], fd));
    }
    Ok(GradCheck {
        sizes: net.layer_sizes(),
        hidden: net.hidden_activation(),
        output: net.output_activation(),
        params: net.param_count(),
        max_param_error,
        max_input_error,
    })
}

/// Checks `count` random networks of at most `max_params` parameters, cycling through every
/// hidden/output activation pairing, with random biases and input/output normalization.
pub fn gradient_suite(count: usize, max_params: usize, seed: u64) -> Result<Vec<GradCheck>> {
    let combos = [
        (HiddenActivation::Relu, OutputActivation::Linear),
        (HiddenActivation::Relu, OutputActivation::Sigmoid),
        (HiddenActivation::leaky(), OutputActivation::Linear),
        (HiddenActivation::leaky(), OutputActivation::Sigmoid),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let (hidden, output) = combos[k % combos.len()];
        let sizes = loop {
            let depth = rng.random_range(1..=4);
            let s: Vec<usize> = (0..=depth).map(|_| rng.random_range(2..=14)).collect();
            let params: usize = s.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            if params <= max_params {
                break s;
            }
        };
        let mut net = Network::new(&sizes, hidden, output, rng.random())?;
        // Zero biases can park pre-activations exactly on a ReLU kink.
        for l in net.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let random_norm = |rng: &mut ChaCha8Rng, d: usize| Normalization {
            mean: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            scale: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        net.set_input_norm(random_norm(&mut rng, sizes[0]))?;
        if output == OutputActivation::Linear {
            net.set_output_norm(random_norm(&mut rng, *sizes.last().unwrap()))?;
        }
        let rows = rng.random_range(1..=4);
        let mut batch = |cols: usize| {
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect(),
            )
        };
        let x = batch(sizes[0])?;
        let upstream = batch(*sizes.last().unwrap())?;
        out.push(check_network(&net, &x, &upstream)?);
    }
    Ok(out)
}
