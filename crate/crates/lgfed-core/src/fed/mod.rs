//! Round-based federation simulator.
//!
//! A model is split at `split_index`: the bottom layers are per-device
//! (they never leave the device record), the top layers are shared and
//! travel between server and clients every round. `split_index = 0` is plain
//! FedAvg, `split_index = depth` is local-only training.
//!
//! Within a round, client updates are pure functions of the immutable shard,
//! the parameter snapshot, and a seed derived from `(run seed, round,
//! device)`, so they may run on any number of workers; aggregation is the
//! synchronization barrier.

mod eval;
mod run;

pub use eval::{evaluate_local_test, evaluate_new_test, evaluate_new_test_weight_avg, LocalTestReport};
pub use run::{
    flatten_params, mean_reg_penalty, run_fedavg, run_hetero_online, run_lg_fedavg,
    run_local_only, run_mtl, HeteroReport, PerDeviceModels,
};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{AccessRole, DeviceShard};
use crate::error::{Error, Result};
use crate::nn::loss::cross_entropy;
use crate::nn::optim::{SgdConfig, SgdMomentum};
use crate::nn::{Mode, NetSpec, ParamLayer};
use crate::rng::{derive_rng, tag};

/// Round and budget hyperparameters for a federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    /// Fraction of devices sampled per round; the sampled count is
    /// `max(floor(C * M), 1)`.
    pub participation: f64,
    /// Local epochs per client update.
    pub local_epochs: usize,
    /// Local mini-batch size.
    pub batch_size: usize,
    /// Full-model rounds (the only phase for plain FedAvg).
    pub rounds_phase1: usize,
    /// Split-model rounds after the phase switch.
    pub rounds_phase2: usize,
    /// Optional local-test accuracy that ends phase 1 early.
    pub goal_accuracy: Option<f64>,
    /// Number of leading layers kept on-device during phase 2.
    pub split_index: usize,
    pub optimizer: SgdConfig,
    /// Evaluate every this many rounds (0: only at phase ends).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            participation: 0.1,
            local_epochs: 1,
            batch_size: 10,
            rounds_phase1: 100,
            rounds_phase2: 0,
            goal_accuracy: None,
            split_index: 0,
            optimizer: SgdConfig::default(),
            eval_every: 0,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(0.0..=1.0).contains(&self.participation) {
            return Err(Error::InvalidArgument("participation must be in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidArgument("local epochs must be >= 1"));
        }
        if self.goal_accuracy.is_some() && self.eval_every == 0 {
            return Err(Error::InvalidArgument(
                "goal accuracy needs eval_every >= 1 to be observable",
            ));
        }
        Ok(())
    }

    /// Sampled client count for `devices` total.
    pub fn sampled_per_round(&self, devices: usize) -> usize {
        (((self.participation * devices as f64) as usize).max(1)).min(devices)
    }
}

/// Parameters communicated, tracked per phase and direction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommLedger {
    pub phases: Vec<PhaseCounters>,
    /// The single all-local-weights exchange used by ensemble prediction.
    pub one_time_local_exchange: u64,
}

/// Counters for one training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCounters {
    pub name: &'static str,
    pub rounds: u64,
    /// Server-to-device parameters.
    pub params_down: u64,
    /// Device-to-server parameters.
    pub params_up: u64,
}

impl CommLedger {
    pub fn phase(&mut self, name: &'static str) -> usize {
        self.phases.push(PhaseCounters {
            name,
            rounds: 0,
            params_down: 0,
            params_up: 0,
        });
        self.phases.len() - 1
    }

    pub fn record_round(&mut self, phase: usize, down: u64, up: u64) {
        let p = &mut self.phases[phase];
        p.rounds += 1;
        p.params_down += down;
        p.params_up += up;
    }

    pub fn total_params(&self) -> u64 {
        self.phases
            .iter()
            .map(|p| p.params_down + p.params_up)
            .sum()
    }

    pub fn total_with_exchange(&self) -> u64 {
        self.total_params() + self.one_time_local_exchange
    }
}

/// Closed-form communication total for one phase: every round broadcasts the
/// phase's parameter set to all `devices` and collects uploads from the
/// sampled clients.
pub fn ledger_closed_form(rounds: u64, devices: u64, participation: f64, params: u64) -> u64 {
    let sampled = (((participation * devices as f64) as u64).max(1)).min(devices);
    rounds * (devices + sampled) * params
}

/// One metric snapshot along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// Absolute round index, 1-based at the time of recording.
    pub round: usize,
    pub phase: &'static str,
    pub mean_train_loss: f64,
    pub local_test_acc: Option<f64>,
    pub new_test_acc: Option<f64>,
    /// Cumulative parameters communicated up to this point.
    pub params_comm: u64,
}

/// Everything a federated run leaves behind.
#[derive(Debug, Clone)]
pub struct TrainedFederation {
    pub spec: NetSpec,
    pub split_index: usize,
    /// Shared top segment.
    pub global: Vec<ParamLayer>,
    /// Per-device bottom segments (empty vectors when `split_index = 0`).
    pub locals: Vec<Vec<ParamLayer>>,
    /// Full-model snapshot taken at the phase switch; seeds new devices.
    pub phase1_full: Option<Vec<ParamLayer>>,
    pub ledger: CommLedger,
    pub history: Vec<RoundRecord>,
    pub completed_rounds: usize,
    pub warnings: Vec<String>,
}

impl TrainedFederation {
    pub fn device_count(&self) -> usize {
        self.locals.len()
    }
}

/// What one client returns from a round.
#[derive(Debug, Clone)]
pub struct ClientOutput {
    pub device: usize,
    pub n_train: usize,
    /// Updated bottom segment; stays on the device record.
    pub local: Vec<ParamLayer>,
    /// Updated top segment; returned to the server.
    pub global_seg: Vec<ParamLayer>,
    pub train_loss: f64,
    /// False when the device had no training data and was skipped.
    pub updated: bool,
}

/// Scalars a single client update needs.
#[derive(Debug, Clone, Copy)]
pub struct ClientPass<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: &'a SgdConfig,
    /// Absolute round index; drives learning-rate decay and seed derivation.
    pub round: usize,
    pub seed: u64,
}

/// Runs `E` local epochs of mini-batch SGD on the assembled split model and
/// returns both updated segments. Only the global segment is meant to travel
/// back to the server; the local segment is written back into the device
/// record by the caller.
pub fn client_update(
    shard: &DeviceShard,
    spec: &NetSpec,
    split_index: usize,
    local: &[ParamLayer],
    global_seg: &[ParamLayer],
    pass: &ClientPass<'_>,
) -> Result<ClientOutput> {
    let train = shard.train(AccessRole::Device);
    if train.is_empty() {
        return Ok(ClientOutput {
            device: shard.device_id,
            n_train: 0,
            local: local.to_vec(),
            global_seg: global_seg.to_vec(),
            train_loss: f64::NAN,
            updated: false,
        });
    }
    let mut net = spec.assemble(local, global_seg)?;
    let mut opt = SgdMomentum::new(*pass.optimizer, &net)?;
    let mut rng = derive_rng(
        pass.seed,
        &[tag::CLIENT, pass.round as u64, shard.device_id as u64],
    );
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for _epoch in 0..pass.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(pass.batch_size) {
            let batch = train.features.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let fwd = net.forward(&batch, Mode::Train, Some(&mut rng))?;
            let (loss, grad) = cross_entropy(fwd.logits(), &labels)?;
            let grads = net.backward(&fwd, &grad)?;
            opt.step(&mut net, &grads, pass.round)?;
            loss_sum += loss;
            batches += 1;
        }
    }
    let (local_out, global_out) = net.split_at(split_index);
    Ok(ClientOutput {
        device: shard.device_id,
        n_train: n,
        local: local_out,
        global_seg: global_out,
        train_loss: loss_sum / batches.max(1) as f64,
        updated: true,
    })
}

/// Sample-size-weighted average of returned global segments; weights are
/// renormalized over the contributing set and sum to one.
pub fn aggregate(contributions: &[(&[ParamLayer], usize)]) -> Result<Vec<ParamLayer>> {
    if contributions.is_empty() {
        return Err(Error::Protocol("aggregate needs at least one contribution"));
    }
    let total: usize = contributions.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Protocol("aggregate weights sum to zero"));
    }
    let (first, _) = contributions[0];
    let mut out: Vec<ParamLayer> = first
        .iter()
        .map(|l| ParamLayer {
            weights: crate::mat::Mat::zeros(l.fan_in(), l.fan_out()),
            biases: vec![0.0; l.biases.len()],
            bias_enabled: l.bias_enabled,
        })
        .collect();
    for (params, n) in contributions {
        if params.len() != out.len() {
            return Err(Error::Protocol("contribution layer counts differ"));
        }
        let w = *n as f64 / total as f64;
        for (acc, p) in out.iter_mut().zip(params.iter()) {
            if acc.weights.shape() != p.weights.shape() {
                return Err(Error::Shape {
                    context: "aggregate",
                    expected: acc.weights.shape(),
                    got: p.weights.shape(),
                });
            }
            for (a, &v) in acc
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(p.weights.as_slice())
            {
                *a += w * v;
            }
            for (a, &v) in acc.biases.iter_mut().zip(&p.biases) {
                *a += w * v;
            }
        }
    }
    Ok(out)
}

/// Samples `count` distinct device ids for a round.
pub(crate) fn sample_clients(devices: usize, count: usize, seed: u64, round: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..devices).collect();
    let mut rng = derive_rng(seed, &[tag::SAMPLE, round as u64]);
    ids.shuffle(&mut rng);
    ids.truncate(count.min(devices));
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{class_blobs, AccessRole, Dataset, DeviceShard, PartitionMode, PartitionPlan};
    use crate::mat::Mat;
    use crate::nn::Mode;

    fn tiny_shard(n: usize, seed: u64) -> DeviceShard {
        let ds = class_blobs(n + 8, 4, 3, 2.0, seed).unwrap();
        let (train, rest) = ds.shuffled_split(n, seed).unwrap();
        let (val, test) = rest.shuffled_split(4, seed ^ 1).unwrap();
        DeviceShard::new(0, train, val, test)
    }

    #[test]
    fn zero_lr_client_update_changes_nothing() {
        let shard = tiny_shard(12, 1);
        let spec = NetSpec::mlp(&[4, 6, 3]);
        let net = spec.init(3).unwrap();
        let (local, global_seg) = net.split_at(1);
        let pass = ClientPass {
            epochs: 2,
            batch_size: 4,
            optimizer: &SgdConfig {
                learning_rate: 0.0,
                momentum: 0.5,
                lr_decay: 0.0,
            },
            round: 0,
            seed: 9,
        };
        let out = client_update(&shard, &spec, 1, &local, &global_seg, &pass).unwrap();
        assert!(out.updated);
        assert_eq!(out.local, local);
        assert_eq!(out.global_seg, global_seg);
    }

    #[test]
    fn split_zero_update_has_no_local_params() {
        let shard = tiny_shard(10, 2);
        let spec = NetSpec::mlp(&[4, 6, 3]);
        let net = spec.init(3).unwrap();
        let (local, global_seg) = net.split_at(0);
        assert!(local.is_empty());
        let pass = ClientPass {
            epochs: 1,
            batch_size: 5,
            optimizer: &SgdConfig::default(),
            round: 0,
            seed: 5,
        };
        let out = client_update(&shard, &spec, 0, &local, &global_seg, &pass).unwrap();
        assert!(out.local.is_empty());
        assert_eq!(out.global_seg.len(), 2);
    }

    #[test]
    fn small_steps_descend_on_a_tiny_device() {
        let shard = tiny_shard(4, 3);
        let spec = NetSpec::mlp(&[4, 5, 3]);
        let net = spec.init(7).unwrap();
        let (local, global_seg) = net.split_at(1);
        let train = shard.train(AccessRole::Device);
        let all: Vec<usize> = (0..train.len()).collect();
        let batch = train.features.select_rows(&all);
        let labels = train.labels.clone();

        let loss_of = |l: &[ParamLayer], g: &[ParamLayer]| {
            let net = spec.assemble(l, g).unwrap();
            let fwd = net.forward(&batch, Mode::Eval, None).unwrap();
            cross_entropy(fwd.logits(), &labels).unwrap().0
        };
        let before = loss_of(&local, &global_seg);
        for lr in [1e-3, 1e-4] {
            let pass = ClientPass {
                epochs: 1,
                batch_size: 4,
                optimizer: &SgdConfig {
                    learning_rate: lr,
                    momentum: 0.0,
                    lr_decay: 0.0,
                },
                round: 0,
                seed: 11,
            };
            let out = client_update(&shard, &spec, 1, &local, &global_seg, &pass).unwrap();
            let after = loss_of(&out.local, &out.global_seg);
            assert!(
                after <= before + 1e-12,
                "lr {lr}: loss rose from {before} to {after}"
            );
        }
    }

    #[test]
    fn empty_device_is_skipped() {
        let empty = Dataset::new(Mat::zeros(0, 4), alloc::vec![], None, 3).unwrap();
        let shard = DeviceShard::new(5, empty.clone(), empty.clone(), empty);
        let spec = NetSpec::mlp(&[4, 3]);
        let net = spec.init(0).unwrap();
        let (local, global_seg) = net.split_at(0);
        let pass = ClientPass {
            epochs: 1,
            batch_size: 2,
            optimizer: &SgdConfig::default(),
            round: 0,
            seed: 0,
        };
        let out = client_update(&shard, &spec, 0, &local, &global_seg, &pass).unwrap();
        assert!(!out.updated);
        assert_eq!(out.n_train, 0);
    }

    #[test]
    fn aggregate_is_a_fixed_point_on_identical_inputs() {
        let spec = NetSpec::mlp(&[3, 2]);
        let net = spec.init(1).unwrap();
        let (_, seg) = net.split_at(0);
        // dyadic weights keep the arithmetic exact
        let agg = aggregate(&[(&seg, 1), (&seg, 1)]).unwrap();
        assert_eq!(agg, seg);
        // general weights agree to rounding
        let agg = aggregate(&[(&seg, 10), (&seg, 3)]).unwrap();
        for (a, b) in agg.iter().zip(&seg) {
            for (x, y) in a.weights.as_slice().iter().zip(b.weights.as_slice()) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn aggregate_weighted_mean_arithmetic() {
        let layer = |vals: [f64; 2]| ParamLayer {
            weights: Mat::from_vec(1, 2, vals.to_vec()).unwrap(),
            biases: alloc::vec![0.0; 2],
            bias_enabled: true,
        };
        // equal weights: [0,2] and [2,0] -> [1,1]
        let a = [layer([0.0, 2.0])];
        let b = [layer([2.0, 0.0])];
        let out = aggregate(&[(&a, 1), (&b, 1)]).unwrap();
        assert_eq!(out[0].weights.row(0), &[1.0, 1.0]);
        // N1=1, N2=3: [4] and [0] -> [1]
        let c = [layer([4.0, 0.0])];
        let d = [layer([0.0, 0.0])];
        let out = aggregate(&[(&c, 1), (&d, 3)]).unwrap();
        assert_eq!(out[0].weights.get(0, 0), 1.0);
    }

    #[test]
    fn aggregate_is_permutation_invariant_and_convex() {
        let spec = NetSpec::mlp(&[5, 4]);
        let nets: Vec<_> = (0..4).map(|s| spec.init(s).unwrap()).collect();
        let segs: Vec<Vec<ParamLayer>> = nets.iter().map(|n| n.split_at(0).1).collect();
        let weights = [3usize, 7, 1, 9];
        let fwd: Vec<(&[ParamLayer], usize)> = segs
            .iter()
            .zip(weights)
            .map(|(s, w)| (s.as_slice(), w))
            .collect();
        let rev: Vec<(&[ParamLayer], usize)> = fwd.iter().rev().cloned().collect();
        let a = aggregate(&fwd).unwrap();
        let b = aggregate(&rev).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.weights.as_slice().iter().zip(y.weights.as_slice()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        // convex combination: every coordinate within the contribution range
        for (l, layer) in a.iter().enumerate() {
            for (i, &v) in layer.weights.as_slice().iter().enumerate() {
                let lo = segs
                    .iter()
                    .map(|s| s[l].weights.as_slice()[i])
                    .fold(f64::INFINITY, f64::min);
                let hi = segs
                    .iter()
                    .map(|s| s[l].weights.as_slice()[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_rejects_mismatched_shapes() {
        let a = [ParamLayer::zeros(2, 3, true)];
        let b = [ParamLayer::zeros(3, 2, true)];
        assert!(matches!(
            aggregate(&[(&a, 1), (&b, 1)]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn ledger_closed_form_matches_reported_totals() {
        // published configurations, two significant digits
        let cases: [(u64, u64, f64, u64, f64); 4] = [
            (1800, 100, 0.1, 64_102, 12.7e9),
            (800, 100, 0.1, 633_226, 5.6e10),
            (400, 100, 0.1, 633_226, 2.9e10 - 1.1e9), // phase-1 part of the split run
            (100, 100, 0.1, 99_978, 1.1e9),           // phase-2 part
        ];
        for (rounds, m, c, p, approx) in cases {
            let exact = ledger_closed_form(rounds, m, c, p) as f64;
            assert!(
                (exact - approx).abs() / approx < 0.05,
                "{rounds}x{p}: {exact} vs {approx}"
            );
        }
        // split totals: 400 full + 100 top rounds
        let split_total = ledger_closed_form(400, 100, 0.1, 633_226)
            + ledger_closed_form(100, 100, 0.1, 99_978);
        assert!((split_total as f64 - 2.9e10).abs() / 2.9e10 < 0.01);
        // 1200 + 100 with the smaller model
        let split_total = ledger_closed_form(1200, 100, 0.1, 64_102)
            + ledger_closed_form(100, 100, 0.1, 2_872);
        assert!((split_total as f64 - 8.5e9).abs() / 8.5e9 < 0.01);
    }

    #[test]
    fn shard_partition_arithmetic_on_a_synthetic_60k() {
        // 60000 rows, 100 devices, 2 classes each: 200 shards of 300
        let plan = PartitionPlan {
            mode: PartitionMode::ShardNonIid {
                classes_per_device: 2,
            },
            devices: 100,
            seed: 0,
        };
        let n = 60_000usize;
        let shard_size = n / (plan.devices * 2);
        assert_eq!(shard_size, 300);
    }
}
