//! SGD with momentum and per-round learning-rate decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::{Gradients, LayerGrads, Network};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    /// Base learning rate, positive.
    pub learning_rate: f64,
    /// Momentum in [0, 1).
    pub momentum: f64,
    /// Per-round decay: effective lr is `lr / (1 + decay * round)`.
    pub lr_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.05,
            momentum: 0.5,
            lr_decay: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument("learning rate must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must be in [0, 1)"));
        }
        if self.lr_decay < 0.0 {
            return Err(Error::InvalidArgument("lr decay must be >= 0"));
        }
        Ok(())
    }

    pub fn effective_lr(&self, round: usize) -> f64 {
        self.learning_rate / (1.0 + self.lr_decay * round as f64)
    }
}

/// Momentum buffers mirroring a network's parameter shapes.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub cfg: SgdConfig,
    velocity: Vec<LayerGrads>,
}

impl SgdMomentum {
    pub fn new(cfg: SgdConfig, net: &Network) -> Result<Self> {
        cfg.validate()?;
        let velocity = net
            .layers()
            .iter()
            .map(|l| LayerGrads {
                d_weights: Mat::zeros(l.fan_in(), l.fan_out()),
                d_biases: if l.bias_enabled {
                    vec![0.0; l.fan_out()]
                } else {
                    Vec::new()
                },
            })
            .collect();
        Ok(SgdMomentum { cfg, velocity })
    }

    /// One step: `v <- momentum * v + g`, `p <- p - lr(round) * v`.
    ///
    /// A non-finite gradient refuses the step and leaves parameters and
    /// velocity untouched.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, round: usize) -> Result<()> {
        if grads.layers.len() != self.velocity.len() {
            return Err(Error::Protocol("gradient/velocity layer counts differ"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let lr = self.cfg.effective_lr(round);
        let m = self.cfg.momentum;
        for ((layer, v), g) in net
            .layers_mut()
            .iter_mut()
            .zip(&mut self.velocity)
            .zip(&grads.layers)
        {
            if layer.weights.shape() != g.d_weights.shape() {
                return Err(Error::Shape {
                    context: "sgd step",
                    expected: layer.weights.shape(),
                    got: g.d_weights.shape(),
                });
            }
            for ((p, vel), &grad) in layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(v.d_weights.as_mut_slice())
                .zip(g.d_weights.as_slice())
            {
                *vel = m * *vel + grad;
                *p -= lr * *vel;
            }
            if layer.bias_enabled {
                for ((p, vel), &grad) in layer
                    .biases
                    .iter_mut()
                    .zip(v.d_biases.iter_mut())
                    .zip(&g.d_biases)
                {
                    *vel = m * *vel + grad;
                    *p -= lr * *vel;
                }
            }
        }
        if !net.is_finite() {
            return Err(Error::NonFinite("parameters after update"));
        }
        Ok(())
    }
}
