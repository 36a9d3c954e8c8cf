//! Test-time inference for trained federations.

use alloc::vec::Vec;

use crate::data::{AccessRole, Dataset, DeviceShard};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::loss::{accuracy, argmax};
use crate::nn::{Mode, NetSpec, ParamLayer};

use super::aggregate;

/// Per-device accuracies plus the test-count-weighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTestReport {
    /// NaN for devices without a test split.
    pub per_device: Vec<f64>,
    pub mean: f64,
}

/// Local test: the owner of each test row is known, so device `m`'s rows are
/// scored by its own pipeline `(local_m, global)`.
pub fn evaluate_local_test(
    spec: &NetSpec,
    locals: &[Vec<ParamLayer>],
    global_seg: &[ParamLayer],
    shards: &[DeviceShard],
) -> Result<LocalTestReport> {
    if locals.len() != shards.len() {
        return Err(Error::Protocol("one local segment per device required"));
    }
    let mut per_device = Vec::with_capacity(shards.len());
    let mut weighted = 0.0;
    let mut total = 0usize;
    for (shard, local) in shards.iter().zip(locals) {
        let test = shard.test(AccessRole::Device);
        if test.is_empty() {
            per_device.push(f64::NAN);
            continue;
        }
        let net = spec.assemble(local, global_seg)?;
        let pass = net.forward(&test.features, Mode::Eval, None)?;
        let acc = accuracy(pass.logits(), &test.labels);
        per_device.push(acc);
        weighted += acc * test.len() as f64;
        total += test.len();
    }
    if total == 0 {
        return Err(Error::InvalidArgument("no device has a test split"));
    }
    Ok(LocalTestReport {
        per_device,
        mean: weighted / total as f64,
    })
}

/// Summed logits of every device pipeline on a batch.
fn ensemble_logits(
    spec: &NetSpec,
    locals: &[Vec<ParamLayer>],
    global_seg: &[ParamLayer],
    features: &Mat,
) -> Result<Mat> {
    let mut sum: Option<Mat> = None;
    for local in locals {
        let net = spec.assemble(local, global_seg)?;
        let pass = net.forward(features, Mode::Eval, None)?;
        match &mut sum {
            None => sum = Some(pass.logits().clone()),
            Some(acc) => acc.add_assign(pass.logits())?,
        }
    }
    let mut logits = sum.ok_or(Error::InvalidArgument("ensemble needs >= 1 device model"))?;
    logits.scale(1.0 / locals.len() as f64);
    Ok(logits)
}

/// New test: the row's device is unknown. Every sample runs through all `M`
/// local pipelines into the global model, the logit vectors are averaged,
/// and ties at the argmax break toward the smallest class index.
pub fn evaluate_new_test(
    spec: &NetSpec,
    locals: &[Vec<ParamLayer>],
    global_seg: &[ParamLayer],
    heldout: &Dataset,
) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::InvalidArgument("held-out set is empty"));
    }
    // identical pipelines reduce to a single model
    let effective: &[Vec<ParamLayer>] =
        if locals.iter().all(|l| l.is_empty()) && !locals.is_empty() {
            &locals[..1]
        } else {
            locals
        };
    let logits = ensemble_logits(spec, effective, global_seg, &heldout.features)?;
    let mut hits = 0usize;
    for (r, &label) in heldout.labels.iter().enumerate() {
        if argmax(logits.row(r)) == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / heldout.len() as f64)
}

/// Variant that averages the local *weights* once instead of ensembling
/// logits, then predicts with the single averaged pipeline.
pub fn evaluate_new_test_weight_avg(
    spec: &NetSpec,
    locals: &[Vec<ParamLayer>],
    global_seg: &[ParamLayer],
    heldout: &Dataset,
) -> Result<f64> {
    if locals.is_empty() {
        return Err(Error::InvalidArgument("ensemble needs >= 1 device model"));
    }
    let avg_local = if locals[0].is_empty() {
        Vec::new()
    } else {
        let contributions: Vec<(&[ParamLayer], usize)> =
            locals.iter().map(|l| (l.as_slice(), 1)).collect();
        aggregate(&contributions)?
    };
    let net = spec.assemble(&avg_local, global_seg)?;
    let pass = net.forward(&heldout.features, Mode::Eval, None)?;
    Ok(accuracy(pass.logits(), &heldout.labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::class_blobs;
    use crate::nn::NetSpec;

    #[test]
    fn single_member_ensemble_equals_single_model() {
        let spec = NetSpec::mlp(&[4, 5, 3]);
        let net = spec.init(3).unwrap();
        let (local, global_seg) = net.split_at(1);
        let ds = class_blobs(30, 4, 3, 2.0, 1).unwrap();
        let ens = evaluate_new_test(&spec, &[local.clone()], &global_seg, &ds).unwrap();
        let pass = net.forward(&ds.features, Mode::Eval, None).unwrap();
        let single = accuracy(pass.logits(), &ds.labels);
        assert_eq!(ens, single);
    }

    #[test]
    fn identical_locals_match_single_model_predictions() {
        let spec = NetSpec::mlp(&[4, 5, 3]);
        let net = spec.init(5).unwrap();
        let (local, global_seg) = net.split_at(1);
        let ds = class_blobs(40, 4, 3, 2.0, 2).unwrap();
        let many = alloc::vec![local.clone(); 7];
        let ens = evaluate_new_test(&spec, &many, &global_seg, &ds).unwrap();
        let one = evaluate_new_test(&spec, &[local], &global_seg, &ds).unwrap();
        assert_eq!(ens, one);
    }

    #[test]
    fn logit_tie_breaks_toward_class_zero() {
        // two "devices" whose logits average to an exact tie
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn weight_average_variant_runs() {
        let spec = NetSpec::mlp(&[4, 5, 3]);
        let a = spec.init(1).unwrap().split_at(1);
        let b = spec.init(2).unwrap().split_at(1);
        let ds = class_blobs(30, 4, 3, 2.0, 3).unwrap();
        let acc =
            evaluate_new_test_weight_avg(&spec, &[a.0, b.0], &a.1, &ds).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
