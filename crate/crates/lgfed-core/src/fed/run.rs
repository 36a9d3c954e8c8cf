//! Training drivers: FedAvg, split local-global training, local-only, and
//! mean-regularized multitask baselines, plus the online heterogeneous-device
//! protocol.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{AccessRole, Dataset, DeviceShard};
use crate::error::{Error, Result};
use crate::exec::{pool_map, TaskPool};
use crate::nn::loss::cross_entropy;
use crate::nn::optim::{SgdConfig, SgdMomentum};
use crate::nn::{Gradients, Mode, NetSpec, Network, ParamLayer};
use crate::rng::{derive_rng, tag};

use super::{
    aggregate, client_update, evaluate_local_test, evaluate_new_test, sample_clients,
    ClientOutput, ClientPass, CommLedger, FederationConfig, RoundRecord, TrainedFederation,
};

struct PhasePlan {
    name: &'static str,
    rounds: usize,
    split_index: usize,
    goal: Option<f64>,
}

struct Engine<'a> {
    shards: &'a [DeviceShard],
    spec: &'a NetSpec,
    cfg: &'a FederationConfig,
    heldout: Option<&'a Dataset>,
    pool: &'a dyn TaskPool,
}

impl Engine<'_> {
    /// Runs one phase, mutating the parameter state in place. Returns the
    /// number of rounds actually completed (goal accuracy can end a phase
    /// early).
    #[allow(clippy::too_many_arguments)]
    fn run_phase(
        &self,
        plan: &PhasePlan,
        round_offset: usize,
        locals: &mut [Vec<ParamLayer>],
        global_seg: &mut Vec<ParamLayer>,
        ledger: &mut CommLedger,
        history: &mut Vec<RoundRecord>,
        warnings: &mut Vec<String>,
    ) -> Result<usize> {
        let devices = self.shards.len();
        let depth = self.spec.depth();
        let seg_params = self.spec.segment_param_count(plan.split_index, depth) as u64;
        let local_params = self.spec.segment_param_count(0, plan.split_index) as u64;
        let sampled_count = self.cfg.sampled_per_round(devices);
        let phase_idx = ledger.phase(plan.name);
        let mut completed = 0;
        for r in 0..plan.rounds {
            let round = round_offset + r;
            let chosen = sample_clients(devices, sampled_count, self.cfg.seed, round);
            let outputs: Vec<Result<ClientOutput>> = {
                let locals_ref: &[Vec<ParamLayer>] = locals;
                let global_ref: &[ParamLayer] = global_seg;
                pool_map(self.pool, chosen.len(), |i| {
                    let device = chosen[i];
                    let pass = ClientPass {
                        epochs: self.cfg.local_epochs,
                        batch_size: self.cfg.batch_size,
                        optimizer: &self.cfg.optimizer,
                        round,
                        seed: self.cfg.seed,
                    };
                    client_update(
                        &self.shards[device],
                        self.spec,
                        plan.split_index,
                        &locals_ref[device],
                        global_ref,
                        &pass,
                    )
                })
            };
            let mut updated: Vec<ClientOutput> = Vec::with_capacity(outputs.len());
            for out in outputs {
                let out = out?;
                if out.updated {
                    updated.push(out);
                } else {
                    warnings.push(format!(
                        "round {round}: device {} has no training data, skipped",
                        out.device
                    ));
                }
            }
            ledger.record_round(
                phase_idx,
                devices as u64 * seg_params,
                chosen.len() as u64 * seg_params,
            );
            completed += 1;
            if updated.is_empty() {
                warnings.push(format!("round {round}: no client contributed"));
                continue;
            }
            let contributions: Vec<(&[ParamLayer], usize)> = updated
                .iter()
                .map(|o| (o.global_seg.as_slice(), o.n_train))
                .collect();
            *global_seg = aggregate(&contributions)?;
            let mean_loss = updated.iter().map(|o| o.train_loss).sum::<f64>()
                / updated.len() as f64;
            for out in updated {
                locals[out.device] = out.local;
            }

            let due = self.cfg.eval_every > 0 && (r + 1) % self.cfg.eval_every == 0;
            let last = r + 1 == plan.rounds;
            if due || last {
                let local_acc =
                    evaluate_local_test(self.spec, locals, global_seg, self.shards)?.mean;
                let new_acc = match self.heldout {
                    Some(heldout) => {
                        if plan.split_index > 0 && ledger.one_time_local_exchange == 0 {
                            ledger.one_time_local_exchange = devices as u64 * local_params;
                        }
                        Some(evaluate_new_test(self.spec, locals, global_seg, heldout)?)
                    }
                    None => None,
                };
                history.push(RoundRecord {
                    round: round + 1,
                    phase: plan.name,
                    mean_train_loss: mean_loss,
                    local_test_acc: Some(local_acc),
                    new_test_acc: new_acc,
                    params_comm: ledger.total_params(),
                });
                if let Some(goal) = plan.goal {
                    if local_acc >= goal {
                        return Ok(completed);
                    }
                }
            } else {
                history.push(RoundRecord {
                    round: round + 1,
                    phase: plan.name,
                    mean_train_loss: mean_loss,
                    local_test_acc: None,
                    new_test_acc: None,
                    params_comm: ledger.total_params(),
                });
            }
        }
        Ok(completed)
    }
}

/// Plain FedAvg: the whole model federates for `rounds_phase1` rounds.
pub fn run_fedavg(
    shards: &[DeviceShard],
    spec: &NetSpec,
    cfg: &FederationConfig,
    heldout: Option<&Dataset>,
    pool: &dyn TaskPool,
) -> Result<TrainedFederation> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(Error::InvalidArgument("need at least one device"));
    }
    let net = spec.init(cfg.seed)?;
    let (_, mut global_seg) = net.split_at(0);
    let mut locals = vec![Vec::new(); shards.len()];
    let mut ledger = CommLedger::default();
    let mut history = Vec::new();
    let mut warnings = Vec::new();
    let engine = Engine {
        shards,
        spec,
        cfg,
        heldout,
        pool,
    };
    let plan = PhasePlan {
        name: "fedavg",
        rounds: cfg.rounds_phase1,
        split_index: 0,
        goal: None,
    };
    let completed = engine.run_phase(
        &plan,
        0,
        &mut locals,
        &mut global_seg,
        &mut ledger,
        &mut history,
        &mut warnings,
    )?;
    Ok(TrainedFederation {
        spec: spec.clone(),
        split_index: 0,
        phase1_full: Some(global_seg.clone()),
        global: global_seg,
        locals,
        ledger,
        history,
        completed_rounds: completed,
        warnings,
    })
}

/// Two-phase split training: full-model FedAvg until the goal accuracy (or
/// `rounds_phase1`), then the bottom `split_index` layers become per-device
/// and only the top segment keeps federating for `rounds_phase2` rounds.
pub fn run_lg_fedavg(
    shards: &[DeviceShard],
    spec: &NetSpec,
    cfg: &FederationConfig,
    heldout: Option<&Dataset>,
    pool: &dyn TaskPool,
) -> Result<TrainedFederation> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(Error::InvalidArgument("need at least one device"));
    }
    if cfg.split_index > spec.depth() {
        return Err(Error::InvalidArgument("split index exceeds network depth"));
    }
    let net = spec.init(cfg.seed)?;
    let (_, mut global_seg) = net.split_at(0);
    let mut locals = vec![Vec::new(); shards.len()];
    let mut ledger = CommLedger::default();
    let mut history = Vec::new();
    let mut warnings = Vec::new();
    let engine = Engine {
        shards,
        spec,
        cfg,
        heldout,
        pool,
    };

    let phase1 = PhasePlan {
        name: "fedavg",
        rounds: cfg.rounds_phase1,
        split_index: 0,
        goal: cfg.goal_accuracy,
    };
    let done1 = engine.run_phase(
        &phase1,
        0,
        &mut locals,
        &mut global_seg,
        &mut ledger,
        &mut history,
        &mut warnings,
    )?;
    if let Some(goal) = cfg.goal_accuracy {
        if done1 == cfg.rounds_phase1 {
            warnings.push(format!(
                "goal accuracy {goal} not reached within {} rounds; proceeding to split phase",
                cfg.rounds_phase1
            ));
        }
    }

    // phase switch: warm-start every device's bottom segment from the
    // phase-1 shared weights
    let phase1_full = global_seg.clone();
    let k = cfg.split_index;
    let local_init: Vec<ParamLayer> = global_seg[..k].to_vec();
    let top: Vec<ParamLayer> = global_seg[k..].to_vec();
    for local in locals.iter_mut() {
        *local = local_init.clone();
    }
    global_seg = top;

    let phase2 = PhasePlan {
        name: "local-global",
        rounds: cfg.rounds_phase2,
        split_index: k,
        goal: None,
    };
    let done2 = engine.run_phase(
        &phase2,
        done1,
        &mut locals,
        &mut global_seg,
        &mut ledger,
        &mut history,
        &mut warnings,
    )?;

    Ok(TrainedFederation {
        spec: spec.clone(),
        split_index: k,
        global: global_seg,
        locals,
        phase1_full: Some(phase1_full),
        ledger,
        history,
        completed_rounds: done1 + done2,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// isolated baselines
// ---------------------------------------------------------------------------

/// Models that never federate, wrapped in the common result shape: the whole
/// net is the per-device "local" segment and the global segment is empty.
pub type PerDeviceModels = TrainedFederation;

fn one_device_epoch(
    net: &mut Network,
    opt: &mut SgdMomentum,
    train: &Dataset,
    batch_size: usize,
    epoch: usize,
    device: usize,
    seed: u64,
    reg: Option<(&[f64], f64, f64)>,
) -> Result<f64> {
    let mut rng = derive_rng(seed, &[tag::CLIENT, device as u64, epoch as u64]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size) {
        let batch = train.features.select_rows(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
        let fwd = net.forward(&batch, Mode::Train, Some(&mut rng))?;
        let (loss, grad) = cross_entropy(fwd.logits(), &labels)?;
        let mut grads = net.backward(&fwd, &grad)?;
        if let Some((mean, l1, l2)) = reg {
            add_mean_regularizer(&mut grads, net, mean, l1, l2)?;
        }
        opt.step(net, &grads, epoch)?;
        loss_sum += loss;
        batches += 1;
    }
    Ok(loss_sum / batches.max(1) as f64)
}

/// Each device trains its own full model in isolation; nothing is ever
/// communicated.
pub fn run_local_only(
    shards: &[DeviceShard],
    spec: &NetSpec,
    epochs: usize,
    optimizer: &SgdConfig,
    batch_size: usize,
    seed: u64,
    pool: &dyn TaskPool,
) -> Result<PerDeviceModels> {
    optimizer.validate()?;
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1"));
    }
    let devices = shards.len();
    let results: Vec<Result<(Vec<ParamLayer>, f64)>> = pool_map(pool, devices, |m| {
        let mut net = spec.init(derive_device_seed(seed, m))?;
        let mut opt = SgdMomentum::new(*optimizer, &net)?;
        let train = shards[m].train(AccessRole::Device);
        let mut last_loss = f64::NAN;
        if !train.is_empty() {
            for epoch in 0..epochs {
                last_loss = one_device_epoch(
                    &mut net, &mut opt, train, batch_size, epoch, m, seed, None,
                )?;
            }
        }
        Ok((net.split_at(spec.depth()).0, last_loss))
    });
    let mut locals = Vec::with_capacity(devices);
    let mut losses = Vec::with_capacity(devices);
    for r in results {
        let (params, loss) = r?;
        locals.push(params);
        losses.push(loss);
    }
    let mean_loss = losses.iter().filter(|l| l.is_finite()).sum::<f64>()
        / losses.iter().filter(|l| l.is_finite()).count().max(1) as f64;
    Ok(TrainedFederation {
        spec: spec.clone(),
        split_index: spec.depth(),
        global: Vec::new(),
        locals,
        phase1_full: None,
        ledger: CommLedger::default(),
        history: vec![RoundRecord {
            round: epochs,
            phase: "local-only",
            mean_train_loss: mean_loss,
            local_test_acc: None,
            new_test_acc: None,
            params_comm: 0,
        }],
        completed_rounds: epochs,
        warnings: Vec::new(),
    })
}

fn derive_device_seed(seed: u64, device: usize) -> u64 {
    seed ^ (device as u64).wrapping_mul(0x2545_f491_4f6c_dd1d) ^ 0x9e37
}

/// Flattened parameter vector: per layer, weights row-major, then enabled
/// biases.
pub fn flatten_params(net: &Network) -> Vec<f64> {
    let mut out = Vec::with_capacity(net.param_count());
    for layer in net.layers() {
        out.extend_from_slice(layer.weights.as_slice());
        if layer.bias_enabled {
            out.extend_from_slice(&layer.biases);
        }
    }
    out
}

/// Mean-regularized multitask penalty `l1 * tr(W Omega W^T) + l2 *
/// ||W||_F^2` where column `m` of `W` is device `m`'s flattened parameters
/// and `Omega` mean-centers the columns: the trace term is
/// `sum_m ||w_m - mean_w||^2`.
pub fn mean_reg_penalty(params: &[Vec<f64>], lambda1: f64, lambda2: f64) -> f64 {
    if params.is_empty() {
        return 0.0;
    }
    let dim = params[0].len();
    let m = params.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for w in params {
        for (acc, &v) in mean.iter_mut().zip(w) {
            *acc += v / m;
        }
    }
    let mut trace = 0.0;
    let mut fro = 0.0;
    for w in params {
        for (&v, &mu) in w.iter().zip(&mean) {
            trace += (v - mu) * (v - mu);
            fro += v * v;
        }
    }
    lambda1 * trace + lambda2 * fro
}

/// Adds the penalty gradient `2 l1 (w - mean) + 2 l2 w` coordinate-wise.
fn add_mean_regularizer(
    grads: &mut Gradients,
    net: &Network,
    mean: &[f64],
    lambda1: f64,
    lambda2: f64,
) -> Result<()> {
    let mut idx = 0usize;
    for (g, layer) in grads.layers.iter_mut().zip(net.layers()) {
        for (gv, &w) in g
            .d_weights
            .as_mut_slice()
            .iter_mut()
            .zip(layer.weights.as_slice())
        {
            *gv += 2.0 * lambda1 * (w - mean[idx]) + 2.0 * lambda2 * w;
            idx += 1;
        }
        if layer.bias_enabled {
            for (gv, &b) in g.d_biases.iter_mut().zip(&layer.biases) {
                *gv += 2.0 * lambda1 * (b - mean[idx]) + 2.0 * lambda2 * b;
                idx += 1;
            }
        }
    }
    if idx != mean.len() {
        return Err(Error::Protocol("regularizer mean vector length mismatch"));
    }
    Ok(())
}

/// Mean-regularized multitask learning: per-device full models whose loss
/// carries a penalty pulling weights toward the across-device mean. The mean
/// refreshes once per epoch.
#[allow(clippy::too_many_arguments)]
pub fn run_mtl(
    shards: &[DeviceShard],
    spec: &NetSpec,
    lambda1: f64,
    lambda2: f64,
    epochs: usize,
    optimizer: &SgdConfig,
    batch_size: usize,
    seed: u64,
    pool: &dyn TaskPool,
) -> Result<PerDeviceModels> {
    optimizer.validate()?;
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1"));
    }
    let devices = shards.len();
    let mut nets: Vec<Network> = (0..devices)
        .map(|m| spec.init(derive_device_seed(seed, m)))
        .collect::<Result<_>>()?;
    let mut opts: Vec<SgdMomentum> = nets
        .iter()
        .map(|n| SgdMomentum::new(*optimizer, n))
        .collect::<Result<_>>()?;
    let mut mean_loss = f64::NAN;
    for epoch in 0..epochs {
        let dim = nets[0].param_count();
        let mut mean = vec![0.0f64; dim];
        for net in &nets {
            for (acc, v) in mean.iter_mut().zip(flatten_params(net)) {
                *acc += v / devices as f64;
            }
        }
        let snapshot: Vec<(Network, SgdMomentum)> = nets
            .iter()
            .cloned()
            .zip(opts.iter().cloned())
            .collect();
        let results: Vec<Result<(Network, SgdMomentum, f64)>> =
            pool_map(pool, devices, |m| {
                let (mut net, mut opt) = snapshot[m].clone();
                let train = shards[m].train(AccessRole::Device);
                let loss = if train.is_empty() {
                    f64::NAN
                } else {
                    one_device_epoch(
                        &mut net,
                        &mut opt,
                        train,
                        batch_size,
                        epoch,
                        m,
                        seed,
                        Some((&mean, lambda1, lambda2)),
                    )?
                };
                Ok((net, opt, loss))
            });
        let mut losses = Vec::with_capacity(devices);
        for (m, r) in results.into_iter().enumerate() {
            let (net, opt, loss) = r?;
            nets[m] = net;
            opts[m] = opt;
            losses.push(loss);
        }
        let finite: Vec<f64> = losses.into_iter().filter(|l| l.is_finite()).collect();
        if !finite.is_empty() {
            mean_loss = finite.iter().sum::<f64>() / finite.len() as f64;
        }
    }
    let locals: Vec<Vec<ParamLayer>> = nets
        .iter()
        .map(|n| n.split_at(spec.depth()).0)
        .collect();
    Ok(TrainedFederation {
        spec: spec.clone(),
        split_index: spec.depth(),
        global: Vec::new(),
        locals,
        phase1_full: None,
        ledger: CommLedger::default(),
        history: vec![RoundRecord {
            round: epochs,
            phase: "mtl",
            mean_train_loss: mean_loss,
            local_test_acc: None,
            new_test_acc: None,
            params_comm: 0,
        }],
        completed_rounds: epochs,
        warnings: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// online heterogeneous device
// ---------------------------------------------------------------------------

/// Accuracies before and after online adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroReport {
    /// Mean local-test accuracy over the original devices, before.
    pub pre_normal: f64,
    /// New-device test accuracy through its pipeline, before adaptation.
    pub pre_transformed: f64,
    pub post_normal: f64,
    pub post_transformed: f64,
    /// Parameters communicated during the online rounds.
    pub online_params: u64,
}

fn new_device_accuracy(
    spec: &NetSpec,
    local: &[ParamLayer],
    global_seg: &[ParamLayer],
    shard: &DeviceShard,
) -> Result<f64> {
    let test = shard.test(AccessRole::Device);
    let net = spec.assemble(local, global_seg)?;
    let pass = net.forward(&test.features, Mode::Eval, None)?;
    Ok(crate::nn::loss::accuracy(pass.logits(), &test.labels))
}

/// Introduces a new device to a trained federation. Its local segment starts
/// from the phase-1 shared weights; each online round it trains on its own
/// data, optionally joined by a fraction `c_finetune` of the original
/// devices, and the global segment aggregates from the participants.
///
/// With `split_index = 0` this is full-model fine-tuning (the FedAvg
/// protocol); positive splits adapt a fresh local representation instead.
pub fn run_hetero_online(
    state: &mut TrainedFederation,
    originals: &[DeviceShard],
    new_shard: &DeviceShard,
    c_finetune: f64,
    rounds: usize,
    cfg: &FederationConfig,
    pool: &dyn TaskPool,
) -> Result<HeteroReport> {
    cfg.validate()?;
    if originals.len() != state.locals.len() {
        return Err(Error::Protocol("state does not match the original devices"));
    }
    if !(0.0..=1.0).contains(&c_finetune) {
        return Err(Error::InvalidArgument("c_finetune must be in [0, 1]"));
    }
    let full = state
        .phase1_full
        .as_ref()
        .ok_or(Error::InvalidArgument("state lacks a full-model snapshot"))?;
    let k = state.split_index;
    let mut new_local: Vec<ParamLayer> = full[..k].to_vec();

    let pre_normal =
        evaluate_local_test(&state.spec, &state.locals, &state.global, originals)?.mean;
    let pre_transformed = new_device_accuracy(&state.spec, &new_local, &state.global, new_shard)?;

    let devices = originals.len();
    let finetune_count = (c_finetune * devices as f64) as usize;
    let seg_params = state.spec.segment_param_count(k, state.spec.depth()) as u64;
    let phase_idx = state.ledger.phase("online");

    for r in 0..rounds {
        let round = state.completed_rounds + r;
        let chosen = sample_clients(devices, finetune_count, cfg.seed, round);
        let participants = chosen.len() + 1;

        let outputs: Vec<Result<ClientOutput>> = {
            let locals_ref: &[Vec<ParamLayer>] = &state.locals;
            let global_ref: &[ParamLayer] = &state.global;
            let new_local_ref: &[ParamLayer] = &new_local;
            pool_map(pool, participants, |i| {
                let pass = ClientPass {
                    epochs: cfg.local_epochs,
                    batch_size: cfg.batch_size,
                    optimizer: &cfg.optimizer,
                    round,
                    seed: cfg.seed,
                };
                if i == 0 {
                    client_update(new_shard, &state.spec, k, new_local_ref, global_ref, &pass)
                } else {
                    let device = chosen[i - 1];
                    client_update(
                        &originals[device],
                        &state.spec,
                        k,
                        &locals_ref[device],
                        global_ref,
                        &pass,
                    )
                }
            })
        };
        // participant 0 is always the new device
        let mut updated: Vec<(usize, ClientOutput)> = Vec::with_capacity(participants);
        for (i, out) in outputs.into_iter().enumerate() {
            let out = out?;
            if out.updated {
                updated.push((i, out));
            }
        }
        state.ledger.record_round(
            phase_idx,
            participants as u64 * seg_params,
            participants as u64 * seg_params,
        );
        if updated.is_empty() {
            continue;
        }
        let contributions: Vec<(&[ParamLayer], usize)> = updated
            .iter()
            .map(|(_, o)| (o.global_seg.as_slice(), o.n_train))
            .collect();
        state.global = aggregate(&contributions)?;
        for (i, out) in updated {
            if i == 0 {
                new_local = out.local;
            } else {
                state.locals[out.device] = out.local;
            }
        }
    }
    state.completed_rounds += rounds;

    let post_normal =
        evaluate_local_test(&state.spec, &state.locals, &state.global, originals)?.mean;
    let post_transformed = new_device_accuracy(&state.spec, &new_local, &state.global, new_shard)?;
    let online = &state.ledger.phases[phase_idx];
    Ok(HeteroReport {
        pre_normal,
        pre_transformed,
        post_normal,
        post_transformed,
        online_params: online.params_down + online.params_up,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::nn::LayerGrads;

    fn one_param_net(w: f64) -> Network {
        let mut spec = NetSpec::mlp(&[1, 1]);
        spec.bias = false;
        let mut net = spec.init(0).unwrap();
        net.layers_mut()[0].weights.set(0, 0, w);
        net
    }

    #[test]
    fn penalty_vanishes_on_identical_weights() {
        let w = vec![alloc::vec![1.5, -2.0, 0.25]; 5];
        assert_eq!(mean_reg_penalty(&w, 3.0, 0.0), 0.0);
    }

    #[test]
    fn two_device_penalty_and_gradient_arithmetic() {
        // one-parameter models w = (a, b): trace term is (a-b)^2 / 2
        let (a, b) = (3.0, -1.0);
        let params = alloc::vec![alloc::vec![a], alloc::vec![b]];
        let lambda1 = 0.7;
        let penalty = mean_reg_penalty(&params, lambda1, 0.0);
        assert!((penalty - lambda1 * (a - b) * (a - b) / 2.0).abs() < 1e-12);

        // gradient with respect to a is lambda1 * (a - b)
        let net = one_param_net(a);
        let mean = [(a + b) / 2.0];
        let mut grads = Gradients {
            layers: alloc::vec![LayerGrads {
                d_weights: Mat::zeros(1, 1),
                d_biases: alloc::vec![],
            }],
        };
        add_mean_regularizer(&mut grads, &net, &mean, lambda1, 0.0).unwrap();
        let g = grads.layers[0].d_weights.get(0, 0);
        assert!((g - lambda1 * (a - b)).abs() < 1e-12, "got {g}");
    }

    #[test]
    fn frobenius_term_gradient() {
        let net = one_param_net(2.0);
        let mean = [2.0];
        let mut grads = Gradients {
            layers: alloc::vec![LayerGrads {
                d_weights: Mat::zeros(1, 1),
                d_biases: alloc::vec![],
            }],
        };
        add_mean_regularizer(&mut grads, &net, &mean, 0.0, 0.25).unwrap();
        // 2 * lambda2 * w
        assert!((grads.layers[0].d_weights.get(0, 0) - 1.0).abs() < 1e-12);
    }
}
