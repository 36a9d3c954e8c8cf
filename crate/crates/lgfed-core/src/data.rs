//! Datasets, device shards, and non-iid partitioning.
//!
//! A [`DeviceShard`] is the unit of privacy: raw features and labels live on
//! the device and are read through role-tagged accessors. Reads attributed
//! to the server role are counted, so a full run can assert that nothing but
//! parameters ever crossed the device boundary.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{derive_rng, tag};

/// Feature matrix with integer class labels and an optional binary
/// protected attribute per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Mat,
    pub labels: Vec<usize>,
    pub protected: Option<Vec<u8>>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Mat,
        labels: Vec<usize>,
        protected: Option<Vec<u8>>,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Data(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(p) = &protected {
            if p.len() != features.rows() {
                return Err(Error::Data("protected column length mismatch".into()));
            }
            if p.iter().any(|&v| v > 1) {
                return Err(Error::Data("protected attribute must be binary".into()));
            }
        }
        Ok(Dataset {
            features,
            labels,
            protected,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows selected by index, preserving metadata.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            protected: self
                .protected
                .as_ref()
                .map(|p| idx.iter().map(|&i| p[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn distinct_labels(&self) -> usize {
        let set: BTreeSet<usize> = self.labels.iter().copied().collect();
        set.len()
    }

    /// Shuffled split into a front part of `n_first` rows and the rest.
    pub fn shuffled_split(&self, n_first: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if n_first > self.len() {
            return Err(Error::Capacity {
                needed: n_first,
                available: self.len(),
            });
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = derive_rng(seed, &[tag::SAMPLE]);
        idx.shuffle(&mut rng);
        Ok((self.select(&idx[..n_first]), self.select(&idx[n_first..])))
    }
}

/// Who is asking for device data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessRole {
    Device,
    Server,
}

/// One device's private splits plus an access-audit counter.
#[derive(Debug)]
pub struct DeviceShard {
    pub device_id: usize,
    train: Dataset,
    validation: Dataset,
    test: Dataset,
    n_train: usize,
    server_reads: AtomicU64,
}

impl Clone for DeviceShard {
    fn clone(&self) -> Self {
        DeviceShard {
            device_id: self.device_id,
            train: self.train.clone(),
            validation: self.validation.clone(),
            test: self.test.clone(),
            n_train: self.n_train,
            server_reads: AtomicU64::new(self.server_reads.load(Ordering::Relaxed)),
        }
    }
}

impl DeviceShard {
    pub fn new(device_id: usize, train: Dataset, validation: Dataset, test: Dataset) -> Self {
        let n_train = train.len();
        DeviceShard {
            device_id,
            train,
            validation,
            test,
            n_train,
            server_reads: AtomicU64::new(0),
        }
    }

    fn audit(&self, role: AccessRole) {
        if role == AccessRole::Server {
            self.server_reads.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn train(&self, role: AccessRole) -> &Dataset {
        self.audit(role);
        &self.train
    }

    pub fn validation(&self, role: AccessRole) -> &Dataset {
        self.audit(role);
        &self.validation
    }

    pub fn test(&self, role: AccessRole) -> &Dataset {
        self.audit(role);
        &self.test
    }

    /// Sample count is protocol metadata (it weights the aggregation), not
    /// private data.
    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn has_protected(&self) -> bool {
        self.train.protected.is_some()
    }

    /// How many times server-role code touched raw data on this device.
    pub fn server_data_reads(&self) -> u64 {
        self.server_reads.load(Ordering::Relaxed)
    }
}

/// How a dataset is spread over devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    Iid,
    /// Sort-by-label sharding; every device sees at most this many classes.
    ShardNonIid { classes_per_device: usize },
}

/// Partitioning recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionPlan {
    pub mode: PartitionMode,
    pub devices: usize,
    pub seed: u64,
}

/// Per-device row indices, kept for audit output.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceAssignment {
    pub device_id: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Result of partitioning: shards plus the exact assignment and any rows
/// dropped as shard remainder.
#[derive(Debug)]
pub struct Partitioned {
    pub shards: Vec<DeviceShard>,
    pub assignment: Vec<DeviceAssignment>,
    pub dropped: Vec<usize>,
    pub shard_size: usize,
}

const TRAIN_FRACTION: f64 = 0.8;
const VAL_FRACTION: f64 = 0.1;
const DEAL_ATTEMPTS: usize = 64;

/// Splits a dataset across simulated devices.
///
/// Shard mode sorts by label (shuffling within each label), cuts the stream
/// into `devices * s` equal contiguous shards (remainder dropped and
/// reported), and deals `s` shards per device at random subject to the
/// constraint that a device's shards span at most `s` distinct labels. Each
/// device's rows are then split 80/10/10 into train/validation/test.
pub fn partition(ds: &Dataset, plan: &PartitionPlan) -> Result<Partitioned> {
    if plan.devices == 0 {
        return Err(Error::InvalidArgument("need at least one device"));
    }
    match plan.mode {
        PartitionMode::Iid => partition_iid(ds, plan),
        PartitionMode::ShardNonIid { classes_per_device } => {
            partition_shards(ds, plan, classes_per_device)
        }
    }
}

fn split_device_rows(
    ds: &Dataset,
    device_id: usize,
    mut rows: Vec<usize>,
    seed: u64,
) -> (DeviceShard, DeviceAssignment) {
    let mut rng = derive_rng(seed, &[tag::PARTITION, 0x51, device_id as u64]);
    rows.shuffle(&mut rng);
    let n = rows.len();
    let n_train = (n as f64 * TRAIN_FRACTION) as usize;
    let n_val = (n as f64 * VAL_FRACTION) as usize;
    let train: Vec<usize> = rows[..n_train].to_vec();
    let validation: Vec<usize> = rows[n_train..n_train + n_val].to_vec();
    let test: Vec<usize> = rows[n_train + n_val..].to_vec();
    let shard = DeviceShard::new(
        device_id,
        ds.select(&train),
        ds.select(&validation),
        ds.select(&test),
    );
    (
        shard,
        DeviceAssignment {
            device_id,
            train,
            validation,
            test,
        },
    )
}

fn partition_iid(ds: &Dataset, plan: &PartitionPlan) -> Result<Partitioned> {
    let n = ds.len();
    if n < plan.devices {
        return Err(Error::Capacity {
            needed: plan.devices,
            available: n,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(plan.seed, &[tag::PARTITION, 0x1d]);
    idx.shuffle(&mut rng);
    let base = n / plan.devices;
    let extra = n % plan.devices;
    let mut shards = Vec::with_capacity(plan.devices);
    let mut assignment = Vec::with_capacity(plan.devices);
    let mut cursor = 0;
    for device_id in 0..plan.devices {
        let take = base + usize::from(device_id < extra);
        let rows = idx[cursor..cursor + take].to_vec();
        cursor += take;
        let (shard, assign) = split_device_rows(ds, device_id, rows, plan.seed);
        shards.push(shard);
        assignment.push(assign);
    }
    Ok(Partitioned {
        shards,
        assignment,
        dropped: Vec::new(),
        shard_size: base,
    })
}

fn partition_shards(ds: &Dataset, plan: &PartitionPlan, s: usize) -> Result<Partitioned> {
    if s == 0 {
        return Err(Error::InvalidArgument("classes_per_device must be >= 1"));
    }
    let n = ds.len();
    let total_shards = plan.devices * s;
    let shard_size = n / total_shards;
    if shard_size == 0 {
        return Err(Error::Capacity {
            needed: total_shards,
            available: n,
        });
    }

    // label-sorted stream, shuffled within each label
    let mut per_label: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        per_label[l].push(i);
    }
    let mut rng = derive_rng(plan.seed, &[tag::PARTITION, 0x5d]);
    let mut stream = Vec::with_capacity(n);
    for bucket in &mut per_label {
        bucket.shuffle(&mut rng);
        stream.extend_from_slice(bucket);
    }

    let used = total_shards * shard_size;
    let dropped: Vec<usize> = stream[used..].to_vec();
    let shard_rows: Vec<&[usize]> = stream[..used].chunks_exact(shard_size).collect();
    let shard_labels: Vec<BTreeSet<usize>> = shard_rows
        .iter()
        .map(|rows| rows.iter().map(|&i| ds.labels[i]).collect())
        .collect();

    // deal s shards per device; a device's label union may not exceed s
    let deal = deal_shards(&shard_labels, plan.devices, s, plan.seed)?;

    let mut shards = Vec::with_capacity(plan.devices);
    let mut assignment = Vec::with_capacity(plan.devices);
    for (device_id, shard_ids) in deal.iter().enumerate() {
        let mut rows = Vec::with_capacity(s * shard_size);
        for &sid in shard_ids {
            rows.extend_from_slice(shard_rows[sid]);
        }
        let (shard, assign) = split_device_rows(ds, device_id, rows, plan.seed);
        shards.push(shard);
        assignment.push(assign);
    }
    Ok(Partitioned {
        shards,
        assignment,
        dropped,
        shard_size,
    })
}

/// Deals shards onto devices, `s` shards each, keeping every device's label
/// union at `<= s` distinct classes.
///
/// Single-label shards can always share a device, so only shards straddling
/// a class boundary constrain the deal: equal label-sets are packed
/// together, and partially filled devices are topped up with pure shards of
/// classes already in their union (or fresh classes while budget remains).
fn deal_shards(
    shard_labels: &[BTreeSet<usize>],
    devices: usize,
    s: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let total = shard_labels.len();
    'attempt: for attempt in 0..DEAL_ATTEMPTS {
        let mut rng = derive_rng(seed, &[tag::PARTITION, 0xdea1, attempt as u64]);

        let mut pure: alloc::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        let mut straddle: alloc::collections::BTreeMap<Vec<usize>, Vec<usize>> =
            Default::default();
        for (sid, labels) in shard_labels.iter().enumerate() {
            if labels.len() > s {
                return Err(Error::Data(format!(
                    "a single shard spans {} labels, above the bound {s}",
                    labels.len()
                )));
            }
            if labels.len() <= 1 {
                let class = labels.iter().next().copied().unwrap_or(usize::MAX);
                pure.entry(class).or_default().push(sid);
            } else {
                let key: Vec<usize> = labels.iter().copied().collect();
                straddle.entry(key).or_default().push(sid);
            }
        }
        for ids in pure.values_mut().chain(straddle.values_mut()) {
            ids.shuffle(&mut rng);
        }

        let mut deal: Vec<Vec<usize>> = Vec::with_capacity(devices);
        let straddle_sets: Vec<Vec<usize>> = straddle.keys().cloned().collect();
        for set in &straddle_sets {
            loop {
                let remaining = straddle.get(set).map(Vec::len).unwrap_or(0);
                if remaining == 0 {
                    break;
                }
                let take = remaining.min(s);
                let ids = straddle.get_mut(set).expect("set exists");
                let mut device: Vec<usize> = ids.drain(ids.len() - take..).collect();
                let mut union: BTreeSet<usize> = set.iter().copied().collect();
                // top up with compatible shards
                while device.len() < s {
                    // pure shard of a class already in the union
                    let in_union = union
                        .iter()
                        .copied()
                        .find(|c| pure.get(c).is_some_and(|v| !v.is_empty()));
                    if let Some(c) = in_union {
                        device.push(pure.get_mut(&c).expect("class pool").pop().expect("nonempty"));
                        continue;
                    }
                    // fresh class while the budget allows
                    if union.len() < s {
                        let fresh = pure
                            .iter()
                            .find(|(_, v)| !v.is_empty())
                            .map(|(&c, _)| c);
                        if let Some(c) = fresh {
                            device.push(pure.get_mut(&c).expect("class pool").pop().expect("nonempty"));
                            union.insert(c);
                            continue;
                        }
                    }
                    // another straddler group fitting inside the budget
                    let fitting = straddle
                        .iter()
                        .find(|(other, v)| {
                            !v.is_empty()
                                && other
                                    .iter()
                                    .collect::<BTreeSet<_>>()
                                    .union(&union.iter().collect())
                                    .count()
                                    <= s
                        })
                        .map(|(other, _)| other.clone());
                    if let Some(other) = fitting {
                        let pool = straddle.get_mut(&other).expect("set exists");
                        device.push(pool.pop().expect("nonempty"));
                        union.extend(other.iter().copied());
                        continue;
                    }
                    continue 'attempt;
                }
                deal.push(device);
            }
        }

        // leftover pure shards: any grouping respects the bound
        let mut leftovers: Vec<usize> = pure.into_values().flatten().collect();
        leftovers.shuffle(&mut rng);
        for chunk in leftovers.chunks(s) {
            deal.push(chunk.to_vec());
        }
        if deal.len() == devices && deal.iter().all(|d| d.len() == s) {
            deal.shuffle(&mut rng);
            return Ok(deal);
        }
    }
    Err(Error::Data(format!(
        "could not deal {total} shards at <= {s} labels per device"
    )))
}

// ---------------------------------------------------------------------------
// transforms
// ---------------------------------------------------------------------------

/// Input transform applied when cloning data onto a new device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Counter-clockwise quarter turns on square-image rows.
    Rotate90 { times: u32 },
}

impl Transform {
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        match *self {
            Transform::Identity => Ok(ds.clone()),
            Transform::Rotate90 { times } => rotate90(ds, times),
        }
    }
}

/// Rotates every square-image row 90 degrees counter-clockwise, `times mod
/// 4` applications. Source pixel `(r, c)` lands at `(n-1-c, r)`.
pub fn rotate90(ds: &Dataset, times: u32) -> Result<Dataset> {
    let len = ds.features.cols();
    let n = libm::sqrt(len as f64) as usize;
    if n * n != len {
        return Err(Error::Shape {
            context: "rotate90",
            expected: (n, n),
            got: (1, len),
        });
    }
    let mut out = ds.clone();
    for _ in 0..(times % 4) {
        let prev = out.features.clone();
        for row in 0..prev.rows() {
            let src = prev.row(row);
            let dst = out.features.row_mut(row);
            for r in 0..n {
                for c in 0..n {
                    dst[(n - 1 - c) * n + r] = src[r * n + c];
                }
            }
        }
    }
    Ok(out)
}

/// Samples a fresh device without replacement from a source pool and applies
/// a transform to both of its splits. The validation split is left empty.
pub fn make_new_device(
    source: &Dataset,
    device_id: usize,
    n_train: usize,
    n_test: usize,
    transform: &Transform,
    seed: u64,
) -> Result<DeviceShard> {
    let needed = n_train + n_test;
    if needed > source.len() {
        return Err(Error::Capacity {
            needed,
            available: source.len(),
        });
    }
    let mut idx: Vec<usize> = (0..source.len()).collect();
    let mut rng = derive_rng(seed, &[tag::SAMPLE, 0xdef, device_id as u64]);
    idx.shuffle(&mut rng);
    let train = transform.apply(&source.select(&idx[..n_train]))?;
    let test = transform.apply(&source.select(&idx[n_train..needed]))?;
    let empty = Dataset::new(
        Mat::zeros(0, source.dim()),
        Vec::new(),
        source.protected.as_ref().map(|_| Vec::new()),
        source.num_classes,
    )?;
    Ok(DeviceShard::new(device_id, train, empty, test))
}

// ---------------------------------------------------------------------------
// synthetic generators
// ---------------------------------------------------------------------------

/// Gaussian class blobs, a stand-in image-free classification dataset.
pub fn class_blobs(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || dim == 0 {
        return Err(Error::InvalidArgument("classes and dim must be >= 1"));
    }
    let mut rng = derive_rng(seed, &[tag::SYNTH, 0xb10b]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng) * separation).collect())
        .collect();
    let mut features = Mat::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = rng.random_range(0..classes);
        let center = &centers[label];
        for (j, v) in features.row_mut(i).iter_mut().enumerate() {
            *v = center[j] + normal.sample(&mut rng);
        }
        labels.push(label);
    }
    Dataset::new(features, labels, None, classes)
}

/// Planted-correlation tabular generator: binary label and binary protected
/// attribute, with dedicated label-signal dimensions, leak dimensions that
/// carry the protected attribute plus a weak label signal, and pure noise
/// dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub n: usize,
    pub label_dims: usize,
    pub leak_dims: usize,
    pub noise_dims: usize,
    /// Mean shift of label-signal dimensions.
    pub label_strength: f64,
    /// Mean shift the protected attribute imprints on leak dimensions; zero
    /// plants full independence.
    pub leak_strength: f64,
    /// Weak label signal inside the leak dimensions, giving the classifier a
    /// reason to use them.
    pub leak_label_strength: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n: 2000,
            label_dims: 4,
            leak_dims: 4,
            noise_dims: 4,
            label_strength: 0.8,
            leak_strength: 1.0,
            leak_label_strength: 0.3,
        }
    }
}

/// Draws the planted-correlation dataset. Labels and protected bits are
/// independent fair coins; any recoverable correlation lives in the
/// features.
pub fn planted_tabular(cfg: &PlantedConfig, seed: u64) -> Result<Dataset> {
    let dim = cfg.label_dims + cfg.leak_dims + cfg.noise_dims;
    if dim == 0 || cfg.n == 0 {
        return Err(Error::InvalidArgument("empty planted generator"));
    }
    let mut rng = derive_rng(seed, &[tag::SYNTH, 0xfa1e]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Mat::zeros(cfg.n, dim);
    let mut labels = Vec::with_capacity(cfg.n);
    let mut protected = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let y = rng.random::<bool>() as usize;
        let p = rng.random::<bool>() as u8;
        let ysign = if y == 1 { 1.0 } else { -1.0 };
        let psign = if p == 1 { 1.0 } else { -1.0 };
        let row = features.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            let base = normal.sample(&mut rng);
            *v = if j < cfg.label_dims {
                base + ysign * cfg.label_strength
            } else if j < cfg.label_dims + cfg.leak_dims {
                base + psign * cfg.leak_strength + ysign * cfg.leak_label_strength
            } else {
                base
            };
        }
        labels.push(y);
        protected.push(p);
    }
    Dataset::new(features, labels, Some(protected), 2)
}
