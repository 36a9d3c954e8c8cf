//! Finite-difference verification of the analytic gradients.

use alloc::vec::Vec;

use crate::error::Result;
use crate::mat::Mat;
use crate::nn::loss::{cross_entropy, squared_error};
use crate::nn::{Gradients, Mode, Network};

/// Loss to check against.
pub enum LossKind<'a> {
    CrossEntropy(&'a [usize]),
    Squared(&'a Mat),
}

impl LossKind<'_> {
    fn eval(&self, net: &Network, batch: &Mat) -> Result<f64> {
        let pass = net.forward(batch, Mode::Eval, None)?;
        Ok(match self {
            LossKind::CrossEntropy(labels) => cross_entropy(pass.logits(), labels)?.0,
            LossKind::Squared(targets) => squared_error(pass.logits(), targets)?.0,
        })
    }

    fn grad(&self, net: &Network, batch: &Mat) -> Result<Gradients> {
        let pass = net.forward(batch, Mode::Eval, None)?;
        let loss_grad = match self {
            LossKind::CrossEntropy(labels) => cross_entropy(pass.logits(), labels)?.1,
            LossKind::Squared(targets) => squared_error(pass.logits(), targets)?.1,
        };
        net.backward(&pass, &loss_grad)
    }
}

/// Which parameter a coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Worst coordinate found by a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCoord {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<WorstCoord>,
    pub tolerance: f64,
    pub passed: bool,
}

const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-6;

fn rel_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(REL_FLOOR);
    (a - b).abs() / scale
}

/// Checks the network's own backward pass against central finite
/// differences with step `1e-5`. Evaluation happens in `Eval` mode so both
/// routes see the same deterministic function. Intended for nets small
/// enough that `O(params)` extra forward passes are cheap.
pub fn grad_check(
    net: &Network,
    batch: &Mat,
    loss: &LossKind<'_>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic = loss.grad(net, batch)?;
    compare_to_fd(net, batch, loss, &analytic, tolerance)
}

/// Compares a supplied gradient against finite differences. [`grad_check`]
/// passes the freshly computed analytic gradient; tests can pass a corrupted
/// one to prove the check has teeth.
pub fn compare_to_fd(
    net: &Network,
    batch: &Mat,
    loss: &LossKind<'_>,
    candidate: &Gradients,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut probe = net.clone();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for l in 0..net.depth() {
        let coords: Vec<(ParamKind, usize)> = {
            let layer = &net.layers()[l];
            let w = layer.weights.rows() * layer.weights.cols();
            let b = if layer.bias_enabled {
                layer.biases.len()
            } else {
                0
            };
            (0..w)
                .map(|i| (ParamKind::Weight, i))
                .chain((0..b).map(|i| (ParamKind::Bias, i)))
                .collect()
        };
        for (kind, i) in coords {
            let original = match kind {
                ParamKind::Weight => probe.layers()[l].weights.as_slice()[i],
                ParamKind::Bias => probe.layers()[l].biases[i],
            };
            let set = |p: &mut Network, v: f64| match kind {
                ParamKind::Weight => p.layers_mut()[l].weights.as_mut_slice()[i] = v,
                ParamKind::Bias => p.layers_mut()[l].biases[i] = v,
            };
            set(&mut probe, original + FD_STEP);
            let plus = loss.eval(&probe, batch)?;
            set(&mut probe, original - FD_STEP);
            let minus = loss.eval(&probe, batch)?;
            set(&mut probe, original);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = match kind {
                ParamKind::Weight => candidate.layers[l].d_weights.as_slice()[i],
                ParamKind::Bias => candidate.layers[l].d_biases[i],
            };
            let rel = rel_error(a, numeric);
            if rel > max_rel {
                max_rel = rel;
                worst = Some(WorstCoord {
                    layer: l,
                    kind,
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        tolerance,
        passed: max_rel < tolerance,
    })
}
