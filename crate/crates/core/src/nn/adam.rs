use super::network::{Gradients, Network};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Adam moments for one network. Moments start at zero.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Gradients,
    second: Gradients,
    step_count: u64,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Self {
            config,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update of `net` with `grads`.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if net.is_frozen() {
            return Err(Error::Frozen);
        }
        let shapes_match = grads.layers.len() == net.layers().len()
            && self.first.layers.len() == net.layers().len()
            && net
                .layers()
                .iter()
                .zip(&grads.layers)
                .zip(&self.first.layers)
                .all(|((l, g), m)| {
                    l.weights.len() == g.weights.len()
                        && l.bias.len() == g.bias.len()
                        && m.weights.len() == g.weights.len()
                });
        if !shapes_match {
            return Err(Error::Architecture(
                "gradient or optimizer state shapes do not match the network".into(),
            ));
        }
        if let Some((li, _)) = grads
            .layers
            .iter()
            .enumerate()
            .find(|(_, g)| !g.weights.iter().chain(&g.bias).all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite(format!(
                "gradient of layer {li} at optimizer step {}",
                self.step_count + 1
            )));
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= learning_rate * mh / (vh.sqrt() + epsilon);
            }
        };
        for (((layer, g), m), v) in net
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.first.layers.iter_mut())
            .zip(self.second.layers.iter_mut())
        {
            update(
                &mut layer.weights,
                &g.weights,
                &mut m.weights,
                &mut v.weights,
            );
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
        if !net.all_finite() {
            return Err(Error::NonFinite(format!(
                "parameters after optimizer step {}",
                self.step_count
            )));
        }
        Ok(())
    }
}
