//! Adversarial fair-representation training.
//!
//! Every device pits its local model against a private adversary that tries
//! to read the protected attribute off the local representation. Per batch,
//! three gradients are evaluated at the batch-start parameters and applied
//! in order: the local segment descends `L_cls - lambda * L_adv`, the global
//! copy descends `L_cls`, and the adversary descends its own `L_adv`. With
//! `lambda = 0` the classifier trajectory is bit-identical to the plain
//! client update (the adversary draws from a separate stream) and the
//! adversary degenerates into a passive probe.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{AccessRole, DeviceShard};
use crate::error::{Error, Result};
use crate::exec::{pool_map, TaskPool};
use crate::fed::aggregate;
use crate::mat::Mat;
use crate::metrics::roc_auc;
use crate::nn::loss::{accuracy, binary_scores, cross_entropy};
use crate::nn::optim::{SgdConfig, SgdMomentum};
use crate::nn::{Mode, NetSpec, Network, ParamLayer};
use crate::rng::{derive_rng, tag};

/// Which training scheme to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FairVariant {
    /// Global classifier and a single federated adversary; the classifier is
    /// never penalized (raw data already reached it, so there is nothing to
    /// hide).
    FedAvgGlobal,
    /// Split model with per-device adversaries but no penalty on the local
    /// segment.
    LgNoPenalty,
    /// Split model, local segments penalized by `lambda * L_adv`.
    LgAdversarial,
}

/// Hyperparameters for a fairness run.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessConfig {
    /// Adversarial tradeoff weight.
    pub lambda: f64,
    /// Per-device epochs before any aggregation (split variants only).
    pub pretrain_epochs: usize,
    /// Joint training rounds.
    pub rounds: usize,
    /// Local epochs per round.
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Fraction of devices sampled per round.
    pub participation: f64,
    pub optimizer: SgdConfig,
    /// Rounds of federated training for the post-fit probe.
    pub probe_rounds: usize,
    pub seed: u64,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        FairnessConfig {
            lambda: 1.0,
            pretrain_epochs: 10,
            rounds: 10,
            local_epochs: 10,
            batch_size: 32,
            participation: 1.0,
            optimizer: SgdConfig {
                learning_rate: 0.1,
                momentum: 0.5,
                lr_decay: 0.0,
            },
            probe_rounds: 10,
            seed: 0,
        }
    }
}

/// The four reported metrics, all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessReport {
    pub classifier_accuracy: f64,
    pub classifier_auc: f64,
    pub adversary_auc: f64,
    pub probe_auc: f64,
}

/// Trained parameter state of a fairness run.
#[derive(Debug, Clone)]
pub struct FairState {
    pub spec: NetSpec,
    pub adv_spec: NetSpec,
    pub split_index: usize,
    /// Layer whose output feeds the adversary.
    pub rep_layer: usize,
    pub locals: Vec<Vec<ParamLayer>>,
    pub global_seg: Vec<ParamLayer>,
    /// Per-device adversaries, or a single entry for the federated one.
    pub adversaries: Vec<Vec<ParamLayer>>,
}

/// One adversarial client update's return.
#[derive(Debug, Clone)]
pub struct AdvClientOutput {
    pub device: usize,
    pub n_train: usize,
    pub local: Vec<ParamLayer>,
    pub global_seg: Vec<ParamLayer>,
    pub adversary: Vec<ParamLayer>,
    pub cls_loss: f64,
    pub adv_loss: f64,
    pub updated: bool,
}

/// Scalars for one adversarial client update.
#[derive(Debug, Clone, Copy)]
pub struct AdvClientPass<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: &'a SgdConfig,
    pub round: usize,
    pub seed: u64,
    pub lambda: f64,
    /// Layer index whose (post-activation) output is the representation.
    pub rep_layer: usize,
}

/// Runs `E` epochs of the alternating minimax updates on one device.
///
/// Gradients for all three parameter groups are computed at the batch-start
/// point; the local segment steps along `-(grad L_cls - lambda * grad
/// L_adv)`, the global copy along `-grad L_cls`, and the adversary along
/// `-grad L_adv` of its own cross-entropy (gradient ascent on the minimax
/// objective).
#[allow(clippy::too_many_arguments)]
pub fn adversarial_client_update(
    shard: &DeviceShard,
    spec: &NetSpec,
    split_index: usize,
    local: &[ParamLayer],
    global_seg: &[ParamLayer],
    adv_spec: &NetSpec,
    adversary: &[ParamLayer],
    pass: &AdvClientPass<'_>,
) -> Result<AdvClientOutput> {
    let train = shard.train(AccessRole::Device);
    if train.is_empty() {
        return Ok(AdvClientOutput {
            device: shard.device_id,
            n_train: 0,
            local: local.to_vec(),
            global_seg: global_seg.to_vec(),
            adversary: adversary.to_vec(),
            cls_loss: f64::NAN,
            adv_loss: f64::NAN,
            updated: false,
        });
    }
    let protected = train.protected.as_ref().ok_or(Error::MissingProtected)?;
    let depth = spec.depth();
    if pass.rep_layer + 1 > depth {
        return Err(Error::InvalidArgument("rep_layer exceeds network depth"));
    }
    // bottom covers layers [0, rep_layer], top the rest
    let cut = pass.rep_layer + 1;
    let mut all: Vec<ParamLayer> = Vec::with_capacity(depth);
    all.extend(local.iter().cloned());
    all.extend(global_seg.iter().cloned());
    let bottom_spec = spec.slice(0, cut);
    let top_spec = spec.slice(cut, depth);
    let mut bottom = bottom_spec.assemble(&all[..cut], &[])?;
    let mut top = top_spec.assemble(&all[cut..], &[])?;
    let mut adv = adv_spec.assemble(adversary, &[])?;
    if adv.input_dim() != bottom.output_dim() {
        return Err(Error::Shape {
            context: "adversary input",
            expected: (1, bottom.output_dim()),
            got: (1, adv.input_dim()),
        });
    }

    let mut opt_bottom = SgdMomentum::new(*pass.optimizer, &bottom)?;
    let mut opt_top = SgdMomentum::new(*pass.optimizer, &top)?;
    let mut opt_adv = SgdMomentum::new(*pass.optimizer, &adv)?;
    let mut rng_cls = derive_rng(
        pass.seed,
        &[tag::CLIENT, pass.round as u64, shard.device_id as u64],
    );
    let mut rng_adv = derive_rng(
        pass.seed,
        &[tag::ADVERSARY, pass.round as u64, shard.device_id as u64],
    );

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cls_loss_sum = 0.0;
    let mut adv_loss_sum = 0.0;
    let mut batches = 0usize;
    for _epoch in 0..pass.epochs {
        order.shuffle(&mut rng_cls);
        for chunk in order.chunks(pass.batch_size) {
            let batch = train.features.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let p_labels: Vec<usize> = chunk.iter().map(|&i| protected[i] as usize).collect();

            let bottom_pass = bottom.forward(&batch, Mode::Train, Some(&mut rng_cls))?;
            let rep = bottom_pass.logits().clone();
            let top_pass = top.forward(&rep, Mode::Train, Some(&mut rng_cls))?;
            let (cls_loss, cls_grad) = cross_entropy(top_pass.logits(), &labels)?;
            let (top_grads, rep_grad_cls) = top.backward_with_input_grad(&top_pass, &cls_grad)?;
            let mut bottom_grads = bottom.backward(&bottom_pass, &rep_grad_cls)?;

            let adv_pass = adv.forward(&rep, Mode::Train, Some(&mut rng_adv))?;
            let (adv_loss, adv_grad) = cross_entropy(adv_pass.logits(), &p_labels)?;
            let (adv_grads, rep_grad_adv) = adv.backward_with_input_grad(&adv_pass, &adv_grad)?;
            if pass.lambda != 0.0 {
                let bottom_adv = bottom.backward(&bottom_pass, &rep_grad_adv)?;
                bottom_grads.add_scaled(&bottom_adv, -pass.lambda)?;
            }

            opt_bottom.step(&mut bottom, &bottom_grads, pass.round)?;
            opt_top.step(&mut top, &top_grads, pass.round)?;
            opt_adv.step(&mut adv, &adv_grads, pass.round)?;
            cls_loss_sum += cls_loss;
            adv_loss_sum += adv_loss;
            batches += 1;
        }
    }

    let mut all_out: Vec<ParamLayer> = Vec::with_capacity(depth);
    all_out.extend(bottom.layers().iter().cloned());
    all_out.extend(top.layers().iter().cloned());
    let local_out = all_out[..split_index].to_vec();
    let global_out = all_out[split_index..].to_vec();
    Ok(AdvClientOutput {
        device: shard.device_id,
        n_train: n,
        local: local_out,
        global_seg: global_out,
        adversary: adv.layers().to_vec(),
        cls_loss: cls_loss_sum / batches.max(1) as f64,
        adv_loss: adv_loss_sum / batches.max(1) as f64,
        updated: true,
    })
}

/// Representations of a dataset through a frozen pipeline (eval mode).
fn representations(
    spec: &NetSpec,
    rep_layer: usize,
    local: &[ParamLayer],
    global_seg: &[ParamLayer],
    features: &Mat,
) -> Result<Mat> {
    let cut = rep_layer + 1;
    let mut all: Vec<ParamLayer> = Vec::with_capacity(spec.depth());
    all.extend(local.iter().cloned());
    all.extend(global_seg.iter().cloned());
    let bottom_spec = spec.slice(0, cut);
    let bottom = bottom_spec.assemble(&all[..cut], &[])?;
    let pass = bottom.forward(features, Mode::Eval, None)?;
    Ok(pass.logits().clone())
}

fn scores_through(net: &Network, inputs: &Mat) -> Result<Vec<f64>> {
    let pass = net.forward(inputs, Mode::Eval, None)?;
    binary_scores(pass.logits())
}

/// Runs the chosen variant and reports the four fairness metrics.
///
/// Devices must carry a binary protected attribute. The probe metric comes
/// from [`post_fit_probe`] on the trained state.
pub fn run_fair_fed(
    shards: &[DeviceShard],
    spec: &NetSpec,
    split_index: usize,
    adv_spec: &NetSpec,
    variant: FairVariant,
    cfg: &FairnessConfig,
    pool: &dyn TaskPool,
) -> Result<(FairnessReport, FairState)> {
    cfg.optimizer.validate()?;
    if shards.is_empty() {
        return Err(Error::InvalidArgument("need at least one device"));
    }
    if shards.iter().any(|s| !s.has_protected()) {
        return Err(Error::MissingProtected);
    }
    if spec.output_dim() != 2 || adv_spec.output_dim() != 2 {
        return Err(Error::InvalidArgument(
            "fairness nets are binary: two-class logits expected",
        ));
    }
    let devices = shards.len();
    let depth = spec.depth();
    let (k, rep_layer, lambda, federated_adversary) = match variant {
        FairVariant::FedAvgGlobal => (0usize, depth - 2, 0.0, true),
        FairVariant::LgNoPenalty => (split_index, split_index - 1, 0.0, false),
        FairVariant::LgAdversarial => (split_index, split_index - 1, cfg.lambda, false),
    };
    if matches!(
        variant,
        FairVariant::LgNoPenalty | FairVariant::LgAdversarial
    ) && (split_index == 0 || split_index >= depth)
    {
        return Err(Error::InvalidArgument(
            "split variants need 1 <= split_index < depth",
        ));
    }

    let net = spec.init(cfg.seed)?;
    let (local_init, mut global_seg) = net.split_at(k);
    let mut locals: Vec<Vec<ParamLayer>> = vec![local_init; devices];
    let mut adversaries: Vec<Vec<ParamLayer>> = if federated_adversary {
        vec![adv_spec.init(cfg.seed ^ 0xad)?.layers().to_vec()]
    } else {
        (0..devices)
            .map(|m| {
                Ok(adv_spec
                    .init(cfg.seed ^ 0xad ^ ((m as u64) << 8))?
                    .layers()
                    .to_vec())
            })
            .collect::<Result<_>>()?
    };

    // pre-training: split variants specialize local models and adversaries
    // on-device before any aggregation; global copies from this phase are
    // discarded so the joint phase starts from the shared initialization.
    if !federated_adversary && cfg.pretrain_epochs > 0 {
        let outputs: Vec<Result<AdvClientOutput>> = {
            let locals_ref: &[Vec<ParamLayer>] = &locals;
            let advs_ref: &[Vec<ParamLayer>] = &adversaries;
            let global_ref: &[ParamLayer] = &global_seg;
            pool_map(pool, devices, |m| {
                let pass = AdvClientPass {
                    epochs: cfg.pretrain_epochs,
                    batch_size: cfg.batch_size,
                    optimizer: &cfg.optimizer,
                    round: 0,
                    seed: cfg.seed ^ 0x9e7,
                    lambda,
                    rep_layer,
                };
                adversarial_client_update(
                    &shards[m],
                    spec,
                    k,
                    &locals_ref[m],
                    global_ref,
                    adv_spec,
                    &advs_ref[m],
                    &pass,
                )
            })
        };
        for (m, out) in outputs.into_iter().enumerate() {
            let out = out?;
            if out.updated {
                locals[m] = out.local;
                adversaries[m] = out.adversary;
            }
        }
    }

    // joint rounds
    let sampled_count = ((cfg.participation * devices as f64) as usize)
        .max(1)
        .min(devices);
    for round in 0..cfg.rounds {
        let chosen = crate::fed::sample_clients(devices, sampled_count, cfg.seed, round);
        let outputs: Vec<Result<AdvClientOutput>> = {
            let locals_ref: &[Vec<ParamLayer>] = &locals;
            let advs_ref: &[Vec<ParamLayer>] = &adversaries;
            let global_ref: &[ParamLayer] = &global_seg;
            pool_map(pool, chosen.len(), |i| {
                let m = chosen[i];
                let adv_m = if federated_adversary { 0 } else { m };
                let pass = AdvClientPass {
                    epochs: cfg.local_epochs,
                    batch_size: cfg.batch_size,
                    optimizer: &cfg.optimizer,
                    round: round + 1,
                    seed: cfg.seed,
                    lambda,
                    rep_layer,
                };
                adversarial_client_update(
                    &shards[m],
                    spec,
                    k,
                    &locals_ref[m],
                    global_ref,
                    adv_spec,
                    &advs_ref[adv_m],
                    &pass,
                )
            })
        };
        let mut updated: Vec<AdvClientOutput> = Vec::new();
        for out in outputs {
            let out = out?;
            if out.updated {
                updated.push(out);
            }
        }
        if updated.is_empty() {
            continue;
        }
        let contributions: Vec<(&[ParamLayer], usize)> = updated
            .iter()
            .map(|o| (o.global_seg.as_slice(), o.n_train))
            .collect();
        global_seg = aggregate(&contributions)?;
        if federated_adversary {
            let adv_contribs: Vec<(&[ParamLayer], usize)> = updated
                .iter()
                .map(|o| (o.adversary.as_slice(), o.n_train))
                .collect();
            adversaries[0] = aggregate(&adv_contribs)?;
        }
        for out in updated {
            locals[out.device] = out.local;
            if !federated_adversary {
                adversaries[out.device] = out.adversary;
            }
        }
    }

    let state = FairState {
        spec: spec.clone(),
        adv_spec: adv_spec.clone(),
        split_index: k,
        rep_layer,
        locals,
        global_seg,
        adversaries,
    };
    let report = evaluate_fairness(shards, &state, cfg, pool)?;
    Ok((report, state))
}

fn evaluate_fairness(
    shards: &[DeviceShard],
    state: &FairState,
    cfg: &FairnessConfig,
    pool: &dyn TaskPool,
) -> Result<FairnessReport> {
    let mut cls_scores = Vec::new();
    let mut cls_labels = Vec::new();
    let mut hits = 0.0;
    let mut total = 0usize;
    let mut adv_scores = Vec::new();
    let mut adv_labels = Vec::new();
    for (m, shard) in shards.iter().enumerate() {
        let test = shard.test(AccessRole::Device);
        if test.is_empty() {
            continue;
        }
        let protected = test.protected.as_ref().ok_or(Error::MissingProtected)?;
        let net = state.spec.assemble(&state.locals[m], &state.global_seg)?;
        let pass = net.forward(&test.features, Mode::Eval, None)?;
        hits += accuracy(pass.logits(), &test.labels) * test.len() as f64;
        total += test.len();
        cls_scores.extend(binary_scores(pass.logits())?);
        cls_labels.extend(test.labels.iter().map(|&l| l as u8));

        let rep = representations(
            &state.spec,
            state.rep_layer,
            &state.locals[m],
            &state.global_seg,
            &test.features,
        )?;
        let adv_m = if state.adversaries.len() == 1 { 0 } else { m };
        let adv = state.adv_spec.assemble(&state.adversaries[adv_m], &[])?;
        adv_scores.extend(scores_through(&adv, &rep)?);
        adv_labels.extend(protected.iter().copied());
    }
    if total == 0 {
        return Err(Error::InvalidArgument("no device has a test split"));
    }
    let probe_auc = post_fit_probe(shards, state, cfg, pool)?;
    Ok(FairnessReport {
        classifier_accuracy: hits / total as f64,
        classifier_auc: roc_auc(&cls_scores, &cls_labels)?,
        adversary_auc: roc_auc(&adv_scores, &adv_labels)?,
        probe_auc,
    })
}

/// Trains a fresh adversary-architecture network on the frozen local
/// representations, federated across devices so protected attributes stay
/// on-device, and reports its test AUC.
pub fn post_fit_probe(
    shards: &[DeviceShard],
    state: &FairState,
    cfg: &FairnessConfig,
    pool: &dyn TaskPool,
) -> Result<f64> {
    let devices = shards.len();
    let mut probe = state.adv_spec.init(cfg.seed ^ 0x9306)?.layers().to_vec();
    for round in 0..cfg.probe_rounds {
        let outputs: Vec<Result<(Vec<ParamLayer>, usize)>> = {
            let probe_ref: &[ParamLayer] = &probe;
            pool_map(pool, devices, |m| {
                let shard = &shards[m];
                let train = shard.train(AccessRole::Device);
                if train.is_empty() {
                    return Ok((probe_ref.to_vec(), 0));
                }
                let protected = train.protected.as_ref().ok_or(Error::MissingProtected)?;
                let rep = representations(
                    &state.spec,
                    state.rep_layer,
                    &state.locals[m],
                    &state.global_seg,
                    &train.features,
                )?;
                let mut net = state.adv_spec.assemble(probe_ref, &[])?;
                let mut opt = SgdMomentum::new(cfg.optimizer, &net)?;
                let mut rng = derive_rng(cfg.seed, &[tag::PROBE, round as u64, m as u64]);
                let mut order: Vec<usize> = (0..rep.rows()).collect();
                for _ in 0..cfg.local_epochs {
                    order.shuffle(&mut rng);
                    for chunk in order.chunks(cfg.batch_size) {
                        let batch = rep.select_rows(chunk);
                        let labels: Vec<usize> =
                            chunk.iter().map(|&i| protected[i] as usize).collect();
                        let fwd = net.forward(&batch, Mode::Train, Some(&mut rng))?;
                        let (_, grad) = cross_entropy(fwd.logits(), &labels)?;
                        let grads = net.backward(&fwd, &grad)?;
                        opt.step(&mut net, &grads, round)?;
                    }
                }
                Ok((net.layers().to_vec(), train.len()))
            })
        };
        let mut contribs: Vec<(Vec<ParamLayer>, usize)> = Vec::new();
        for out in outputs {
            let (params, n) = out?;
            if n > 0 {
                contribs.push((params, n));
            }
        }
        if contribs.is_empty() {
            return Err(Error::InvalidArgument("no device has training data"));
        }
        let refs: Vec<(&[ParamLayer], usize)> =
            contribs.iter().map(|(p, n)| (p.as_slice(), *n)).collect();
        probe = aggregate(&refs)?;
    }

    let probe_net = state.adv_spec.assemble(&probe, &[])?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (m, shard) in shards.iter().enumerate() {
        let test = shard.test(AccessRole::Device);
        if test.is_empty() {
            continue;
        }
        let protected = test.protected.as_ref().ok_or(Error::MissingProtected)?;
        let rep = representations(
            &state.spec,
            state.rep_layer,
            &state.locals[m],
            &state.global_seg,
            &test.features,
        )?;
        scores.extend(scores_through(&probe_net, &rep)?);
        labels.extend(protected.iter().copied());
    }
    roc_auc(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition, planted_tabular, PartitionMode, PartitionPlan, PlantedConfig};
    use crate::exec::SerialPool;
    use crate::fed::{client_update, ClientPass};

    fn fair_shards_sized(
        n_devices: usize,
        per_device: usize,
        leak: f64,
        seed: u64,
    ) -> Vec<DeviceShard> {
        let cfg = PlantedConfig {
            n: per_device * n_devices,
            leak_strength: leak,
            ..PlantedConfig::default()
        };
        let ds = planted_tabular(&cfg, seed).unwrap();
        let plan = PartitionPlan {
            mode: PartitionMode::Iid,
            devices: n_devices,
            seed,
        };
        partition(&ds, &plan).unwrap().shards
    }

    fn fair_shards(n_devices: usize, leak: f64, seed: u64) -> Vec<DeviceShard> {
        fair_shards_sized(n_devices, 160, leak, seed)
    }

    fn tiny_specs() -> (NetSpec, NetSpec) {
        let spec = NetSpec::mlp(&[12, 8, 6, 2]);
        let adv = NetSpec::mlp(&[6, 8, 2]);
        (spec, adv)
    }

    #[test]
    fn lambda_zero_matches_plain_client_update() {
        let shards = fair_shards(2, 1.0, 3);
        let (spec, adv_spec) = tiny_specs();
        let net = spec.init(7).unwrap();
        let k = 2;
        let (local, global_seg) = net.split_at(k);
        let adv = adv_spec.init(8).unwrap().layers().to_vec();

        let pass = AdvClientPass {
            epochs: 2,
            batch_size: 16,
            optimizer: &SgdConfig::default(),
            round: 4,
            seed: 21,
            lambda: 0.0,
            rep_layer: k - 1,
        };
        let adv_out = adversarial_client_update(
            &shards[0], &spec, k, &local, &global_seg, &adv_spec, &adv, &pass,
        )
        .unwrap();

        let plain_pass = ClientPass {
            epochs: 2,
            batch_size: 16,
            optimizer: &SgdConfig::default(),
            round: 4,
            seed: 21,
        };
        let plain =
            client_update(&shards[0], &spec, k, &local, &global_seg, &plain_pass).unwrap();
        assert_eq!(adv_out.local, plain.local);
        assert_eq!(adv_out.global_seg, plain.global_seg);
        // the adversary did train
        assert_ne!(adv_out.adversary, adv);
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        // dropout-free nets so train mode is deterministic
        let spec = NetSpec::mlp(&[5, 4, 3, 2]);
        let adv_spec = NetSpec::mlp(&[4, 4, 2]);
        let net = spec.init(3).unwrap();
        let k = 1;
        let rep_layer = 0;
        let (local, global_seg) = net.split_at(k);
        let adv = adv_spec.init(5).unwrap();
        let lambda = 0.7;

        let ds = planted_tabular(
            &PlantedConfig {
                n: 12,
                label_dims: 2,
                leak_dims: 2,
                noise_dims: 1,
                ..PlantedConfig::default()
            },
            2,
        )
        .unwrap();
        let labels = ds.labels.clone();
        let p_labels: Vec<usize> = ds
            .protected
            .as_ref()
            .unwrap()
            .iter()
            .map(|&p| p as usize)
            .collect();

        // composite objective as a function of the local (bottom) params
        let objective = |local_params: &[ParamLayer]| -> f64 {
            let bottom_spec = spec.slice(0, rep_layer + 1);
            let top_spec = spec.slice(rep_layer + 1, spec.depth());
            let mut all = local_params.to_vec();
            all.extend(global_seg.iter().cloned());
            let bottom = bottom_spec.assemble(&all[..rep_layer + 1], &[]).unwrap();
            let top = top_spec.assemble(&all[rep_layer + 1..], &[]).unwrap();
            let rep = bottom
                .forward(&ds.features, Mode::Eval, None)
                .unwrap()
                .logits()
                .clone();
            let cls = top.forward(&rep, Mode::Eval, None).unwrap();
            let (cls_loss, _) = cross_entropy(cls.logits(), &labels).unwrap();
            let adv_pass = adv.forward(&rep, Mode::Eval, None).unwrap();
            let (adv_loss, _) = cross_entropy(adv_pass.logits(), &p_labels).unwrap();
            cls_loss - lambda * adv_loss
        };

        // analytic composite gradient, assembled the same way the update does
        let bottom_spec = spec.slice(0, rep_layer + 1);
        let top_spec = spec.slice(rep_layer + 1, spec.depth());
        let bottom = bottom_spec.assemble(&local, &[]).unwrap();
        let top = top_spec.assemble(&global_seg, &[]).unwrap();
        let bottom_pass = bottom.forward(&ds.features, Mode::Eval, None).unwrap();
        let rep = bottom_pass.logits().clone();
        let top_pass = top.forward(&rep, Mode::Eval, None).unwrap();
        let (_, cls_grad) = cross_entropy(top_pass.logits(), &labels).unwrap();
        let (_, rep_grad_cls) = top.backward_with_input_grad(&top_pass, &cls_grad).unwrap();
        let mut composite = bottom.backward(&bottom_pass, &rep_grad_cls).unwrap();
        let adv_pass = adv.forward(&rep, Mode::Eval, None).unwrap();
        let (_, adv_grad) = cross_entropy(adv_pass.logits(), &p_labels).unwrap();
        let (_, rep_grad_adv) = adv
            .backward_with_input_grad(&adv_pass, &adv_grad)
            .unwrap();
        let bottom_adv = bottom.backward(&bottom_pass, &rep_grad_adv).unwrap();
        composite.add_scaled(&bottom_adv, -lambda).unwrap();

        // finite differences over every local weight coordinate
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (li, layer) in local.iter().enumerate() {
            for i in 0..layer.weights.rows() * layer.weights.cols() {
                let mut plus = local.clone();
                plus[li].weights.as_mut_slice()[i] += h;
                let mut minus = local.clone();
                minus[li].weights.as_mut_slice()[i] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let analytic = composite.layers[li].d_weights.as_slice()[i];
                let rel =
                    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn independent_protected_attribute_keeps_adversary_at_chance() {
        // leak_strength = 0 plants full independence; average over draws so
        // finite-test AUC noise (std ~ 1/sqrt(12 n)) stays inside the band
        let (spec, adv_spec) = tiny_specs();
        let mut aucs = Vec::new();
        for seed in [11, 12, 13] {
            let shards = fair_shards_sized(3, 400, 0.0, seed);
            let cfg = FairnessConfig {
                rounds: 3,
                local_epochs: 2,
                pretrain_epochs: 2,
                probe_rounds: 2,
                seed,
                ..FairnessConfig::default()
            };
            let (report, _) = run_fair_fed(
                &shards,
                &spec,
                2,
                &adv_spec,
                FairVariant::LgNoPenalty,
                &cfg,
                &SerialPool,
            )
            .unwrap();
            aucs.push(report.adversary_auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean - 0.5).abs() < 0.08, "adversary AUCs {aucs:?}");
    }

    #[test]
    fn probe_sees_leaked_attribute_and_misses_constant_reps() {
        let shards = fair_shards(2, 1.2, 13);
        let (spec, adv_spec) = tiny_specs();
        // untrained split state: raw features still leak into the representation
        let net = spec.init(1).unwrap();
        let (local, global_seg) = net.split_at(2);
        let state = FairState {
            spec: spec.clone(),
            adv_spec: adv_spec.clone(),
            split_index: 2,
            rep_layer: 1,
            locals: alloc::vec![local; 2],
            global_seg,
            adversaries: alloc::vec![adv_spec.init(2).unwrap().layers().to_vec(); 2],
        };
        let cfg = FairnessConfig {
            probe_rounds: 6,
            local_epochs: 4,
            ..FairnessConfig::default()
        };
        let auc = post_fit_probe(&shards, &state, &cfg, &SerialPool).unwrap();
        assert!(auc > 0.65, "probe should find the leak, got {auc}");

        // zero local weights make the representation constant: chance AUC
        let mut zero_state = state.clone();
        for local in &mut zero_state.locals {
            for layer in local.iter_mut() {
                layer.weights.scale(0.0);
                for b in &mut layer.biases {
                    *b = 0.0;
                }
            }
        }
        let auc = post_fit_probe(&shards, &zero_state, &cfg, &SerialPool).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "constant reps gave {auc}");
    }
}
