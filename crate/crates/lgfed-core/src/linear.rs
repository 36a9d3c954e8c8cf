//! Linear teacher-student laboratory.
//!
//! Worlds consist of a shared teacher `v` plus per-device deviations
//! `r_m ~ N(0, rho^2 I)`, so device `m` labels with `u_m = v + r_m` and
//! train targets carry `N(0, sigma^2)` noise. Test targets are the noiseless
//! teacher values (excess-risk convention). Local and global estimators are
//! exact ridgeless least squares (minimum-norm when underdetermined), and a
//! Monte-Carlo oracle estimates the generalization error of the
//! alpha-interpolated predictor alongside the closed forms.
//!
//! Input laws:
//! - `GaussianIso`: isotropic Gaussian scaled to unit expected squared norm
//!   (`E[x^T x] = 1`), the convention under which the closed-form
//!   device-variance constant is exact.
//! - `UniformPm1`: coordinates i.i.d. uniform on `[-1, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::exec::{pool_map, TaskPool};
use crate::mat::{dot, Mat};
use crate::metrics::{mean, sample_std};
use crate::rng::{derive_rng, tag};

/// Input distribution for the synthetic worlds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputDist {
    GaussianIso,
    UniformPm1,
}

/// World hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldConfig {
    pub dim: usize,
    pub devices: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rho: f64,
    pub sigma: f64,
    pub input_dist: InputDist,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.devices == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument("world dims must be >= 1"));
        }
        if self.rho < 0.0 || self.sigma < 0.0 {
            return Err(Error::InvalidArgument("rho and sigma must be >= 0"));
        }
        Ok(())
    }
}

/// One device's share of a sampled world.
#[derive(Debug, Clone)]
pub struct LinearDevice {
    /// Teacher weights `u_m = v + r_m`.
    pub teacher: Vec<f64>,
    pub train_x: Mat,
    /// Noisy train targets.
    pub train_y: Vec<f64>,
    pub test_x: Mat,
    /// Noiseless test targets `u_m^T x`.
    pub test_y: Vec<f64>,
}

/// A sampled teacher-student world.
#[derive(Debug, Clone)]
pub struct LinearWorld {
    pub cfg: WorldConfig,
    /// Shared teacher `v`, drawn uniform on [0, 1] per coordinate.
    pub global_teacher: Vec<f64>,
    /// Per-device deviations `r_m`.
    pub deviations: Vec<Vec<f64>>,
    pub devices: Vec<LinearDevice>,
}

fn sample_input_row(dist: InputDist, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match dist {
        InputDist::GaussianIso => {
            let scale = 1.0 / libm::sqrt(dim as f64);
            let normal = Normal::new(0.0, scale).expect("valid std");
            (0..dim).map(|_| normal.sample(rng)).collect()
        }
        InputDist::UniformPm1 => (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
    }
}

/// Samples a full world: teachers, deviations, and per-device train/test
/// sets. Train labels carry noise; test labels are the noiseless teacher
/// values.
pub fn generate_world(cfg: &WorldConfig, seed: u64) -> Result<LinearWorld> {
    cfg.validate()?;
    let mut rng = derive_rng(seed, &[tag::WORLD]);
    let d = cfg.dim;
    let global_teacher: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let dev_noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut deviations = Vec::with_capacity(cfg.devices);
    let mut devices = Vec::with_capacity(cfg.devices);
    for _ in 0..cfg.devices {
        let r: Vec<f64> = (0..d).map(|_| dev_noise.sample(&mut rng) * cfg.rho).collect();
        let teacher: Vec<f64> = global_teacher.iter().zip(&r).map(|(&v, &rm)| v + rm).collect();
        let mut train_x = Mat::zeros(cfg.n_train, d);
        let mut train_y = vec![0.0; cfg.n_train];
        for i in 0..cfg.n_train {
            let row = sample_input_row(cfg.input_dist, d, &mut rng);
            let eps = dev_noise.sample(&mut rng) * cfg.sigma;
            train_y[i] = dot(&teacher, &row) + eps;
            train_x.row_mut(i).copy_from_slice(&row);
        }
        let mut test_x = Mat::zeros(cfg.n_test, d);
        let mut test_y = vec![0.0; cfg.n_test];
        for i in 0..cfg.n_test {
            let row = sample_input_row(cfg.input_dist, d, &mut rng);
            test_y[i] = dot(&teacher, &row);
            test_x.row_mut(i).copy_from_slice(&row);
        }
        deviations.push(r);
        devices.push(LinearDevice {
            teacher,
            train_x,
            train_y,
            test_x,
            test_y,
        });
    }
    Ok(LinearWorld {
        cfg: *cfg,
        global_teacher,
        deviations,
        devices,
    })
}

// ---------------------------------------------------------------------------
// ridgeless least squares
// ---------------------------------------------------------------------------

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the orthogonal matrix with eigenvectors in
/// columns.
pub fn sym_eigen(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    if a.rows() != a.cols() {
        return Err(Error::Shape {
            context: "sym_eigen",
            expected: (a.rows(), a.rows()),
            got: a.shape(),
        });
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Mat::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 });
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if off <= 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + libm::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + libm::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eigvals: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    Ok((eigvals, v))
}

/// Minimum-norm solution of `G w = b` through a thresholded eigen
/// pseudoinverse; `G` must be symmetric positive semi-definite (a Gram
/// matrix). An all-zero `G` yields the zero vector.
pub fn pinv_solve(gram: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let (eigvals, q) = sym_eigen(gram)?;
    let n = eigvals.len();
    if b.len() != n {
        return Err(Error::Shape {
            context: "pinv_solve",
            expected: (n, 1),
            got: (b.len(), 1),
        });
    }
    let lmax = eigvals.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()));
    let tol = lmax * n as f64 * 1e-12;
    let mut w = vec![0.0; n];
    for i in 0..n {
        if eigvals[i].abs() <= tol {
            continue;
        }
        let mut qi_b = 0.0;
        for k in 0..n {
            qi_b += q.get(k, i) * b[k];
        }
        let coef = qi_b / eigvals[i];
        for k in 0..n {
            w[k] += coef * q.get(k, i);
        }
    }
    Ok(w)
}

/// Exact ridgeless least squares for one device: solves the normal
/// equations through the Gram pseudoinverse, which is the minimum-norm
/// solution in every rank case.
pub fn fit_local(x: &Mat, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != x.rows() {
        return Err(Error::Shape {
            context: "fit_local",
            expected: (x.rows(), 1),
            got: (y.len(), 1),
        });
    }
    let gram = x.gram();
    let xty = x.t_mul_vec(y)?;
    pinv_solve(&gram, &xty)
}

/// Ridgeless least squares on the pooled data of several devices.
pub fn fit_global(data: &[(&Mat, &[f64])]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("fit_global needs at least one device"));
    }
    let d = data[0].0.cols();
    let mut gram = Mat::zeros(d, d);
    let mut xty = vec![0.0; d];
    for (x, y) in data {
        if x.cols() != d {
            return Err(Error::Shape {
                context: "fit_global",
                expected: (x.rows(), d),
                got: x.shape(),
            });
        }
        gram.add_assign(&x.gram())?;
        for (acc, v) in xty.iter_mut().zip(x.t_mul_vec(y)?) {
            *acc += v;
        }
    }
    pinv_solve(&gram, &xty)
}

/// `alpha * u_hat^T x + (1 - alpha) * v_hat^T x`.
pub fn predict_alpha(u_hat: &[f64], v_hat: &[f64], alpha: f64, x: &[f64]) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument("alpha must be in [0, 1]"));
    }
    Ok(alpha * dot(u_hat, x) + (1.0 - alpha) * dot(v_hat, x))
}

// ---------------------------------------------------------------------------
// closed forms
// ---------------------------------------------------------------------------

/// Closed-form generalization errors of the local, global, and
/// alpha-interpolated predictors plus the optimal mixing weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormErrors {
    pub e_local: f64,
    pub e_global: f64,
    pub e_alpha: f64,
    pub alpha_star: f64,
}

/// Evaluates the closed forms:
/// `E_local = (d/N) sigma^2`,
/// `E_global = ((M-1)/M) rho^2 + (d/(MN)) sigma^2`,
/// `E_alpha = a^2 (d/N) sigma^2 + (1-a)^2 ((M-1)/M) rho^2 + (1-a^2) (d/(MN)) sigma^2`,
/// `alpha* = rho^2 / (rho^2 + (d/N) sigma^2)`.
pub fn closed_form_errors(
    dim: usize,
    n_train: usize,
    devices: usize,
    rho: f64,
    sigma: f64,
    alpha: f64,
) -> ClosedFormErrors {
    let d = dim as f64;
    let n = n_train as f64;
    let m = devices as f64;
    let s2 = sigma * sigma;
    let r2 = rho * rho;
    let data_local = d / n * s2;
    let device_term = (m - 1.0) / m * r2;
    let data_global = d / (m * n) * s2;
    let e_alpha =
        alpha * alpha * data_local + (1.0 - alpha) * (1.0 - alpha) * device_term
            + (1.0 - alpha * alpha) * data_global;
    let alpha_star = if r2 == 0.0 { 0.0 } else { r2 / (r2 + data_local) };
    ClosedFormErrors {
        e_local: data_local,
        e_global: device_term + data_global,
        e_alpha,
        alpha_star,
    }
}

// ---------------------------------------------------------------------------
// Monte-Carlo oracle
// ---------------------------------------------------------------------------

/// Per-alpha Monte-Carlo estimate of the generalization error.
#[derive(Debug, Clone, PartialEq)]
pub struct McCurve {
    pub alphas: Vec<f64>,
    /// Mean test error across trials, one entry per alpha.
    pub mean: Vec<f64>,
    /// Sample standard deviation across trials.
    pub std: Vec<f64>,
    pub trials: usize,
}

/// The default evaluation grid: 0 to 1 in steps of 0.05.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

/// Runs `trials` independent worlds. Each trial regenerates teachers,
/// deviations, noise, and data, fits every estimator, and averages the
/// squared test error against the noiseless teachers over devices and test
/// points.
pub fn mc_generalization(
    cfg: &WorldConfig,
    alphas: &[f64],
    trials: usize,
    seed: u64,
    pool: &dyn TaskPool,
) -> Result<McCurve> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1"));
    }
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidArgument("alpha grid must lie in [0, 1]"));
    }
    let per_trial: Vec<Result<Vec<f64>>> = pool_map(pool, trials, |t| {
        let world = generate_world(cfg, derive_trial_seed(seed, t))?;
        trial_errors(&world, alphas)
    });
    let mut columns = vec![Vec::with_capacity(trials); alphas.len()];
    for trial in per_trial {
        let errs = trial?;
        for (col, e) in columns.iter_mut().zip(errs) {
            col.push(e);
        }
    }
    Ok(McCurve {
        alphas: alphas.to_vec(),
        mean: columns.iter().map(|c| mean(c)).collect(),
        std: columns.iter().map(|c| sample_std(c)).collect(),
        trials,
    })
}

fn derive_trial_seed(seed: u64, trial: usize) -> u64 {
    seed ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5bd1_e995
}

/// Mean squared test error per alpha for one sampled world.
fn trial_errors(world: &LinearWorld, alphas: &[f64]) -> Result<Vec<f64>> {
    let m = world.devices.len();
    let u_hats: Vec<Vec<f64>> = world
        .devices
        .iter()
        .map(|dev| fit_local(&dev.train_x, &dev.train_y))
        .collect::<Result<_>>()?;
    let pooled: Vec<(&Mat, &[f64])> = world
        .devices
        .iter()
        .map(|dev| (&dev.train_x, dev.train_y.as_slice()))
        .collect();
    let v_hat = fit_global(&pooled)?;

    let mut acc = vec![0.0f64; alphas.len()];
    for (dev, u_hat) in world.devices.iter().zip(&u_hats) {
        let n_test = dev.test_x.rows();
        for i in 0..n_test {
            let x = dev.test_x.row(i);
            let local_pred = dot(u_hat, x);
            let global_pred = dot(&v_hat, x);
            let target = dev.test_y[i];
            for (a_idx, &alpha) in alphas.iter().enumerate() {
                let pred = alpha * local_pred + (1.0 - alpha) * global_pred;
                let err = pred - target;
                acc[a_idx] += err * err / n_test as f64;
            }
        }
    }
    for v in &mut acc {
        *v /= m as f64;
    }
    Ok(acc)
}

/// Grid argmin of the Monte-Carlo mean, ties broken toward smaller alpha.
pub fn empirical_alpha_star(curve: &McCurve) -> f64 {
    let mut best = 0;
    for i in 1..curve.mean.len() {
        if curve.mean[i] < curve.mean[best] {
            best = i;
        }
    }
    curve.alphas[best]
}

/// Bias/variance split of the alpha predictor, estimated by redrawing the
/// label noise on a frozen set of inputs and deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionReport {
    pub total_error: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub delta_sq: f64,
    pub alpha: f64,
}

/// Freezes inputs and deviations from one world draw, then redraws the label
/// noise `redraws` times. The mean prediction per test point yields the bias
/// term, the spread around it the variance, and the discrepancy between
/// teachers and the mean global prediction the device-variance term.
pub fn mc_decomposition(
    cfg: &WorldConfig,
    alpha: f64,
    redraws: usize,
    seed: u64,
) -> Result<DecompositionReport> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument("alpha must be in [0, 1]"));
    }
    if redraws < 2 {
        return Err(Error::InvalidArgument("need at least two noise redraws"));
    }
    let world = generate_world(cfg, seed)?;
    let m = world.devices.len();
    let total_test = m * cfg.n_test;

    // per device: clean targets on the train set, so noise can be redrawn
    let clean_train: Vec<Vec<f64>> = world
        .devices
        .iter()
        .map(|dev| {
            (0..dev.train_x.rows())
                .map(|i| dot(&dev.teacher, dev.train_x.row(i)))
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pred_sum = vec![0.0f64; total_test];
    let mut pred_sq_sum = vec![0.0f64; total_test];
    let mut global_pred_sum = vec![0.0f64; total_test];
    let mut total_err = 0.0f64;

    for k in 0..redraws {
        let mut rng = derive_rng(seed, &[tag::TRIAL, k as u64]);
        let mut noisy: Vec<Vec<f64>> = Vec::with_capacity(m);
        for clean in &clean_train {
            noisy.push(
                clean
                    .iter()
                    .map(|&y| y + noise.sample(&mut rng) * cfg.sigma)
                    .collect(),
            );
        }
        let u_hats: Vec<Vec<f64>> = world
            .devices
            .iter()
            .zip(&noisy)
            .map(|(dev, y)| fit_local(&dev.train_x, y))
            .collect::<Result<_>>()?;
        let pooled: Vec<(&Mat, &[f64])> = world
            .devices
            .iter()
            .zip(&noisy)
            .map(|(dev, y)| (&dev.train_x, y.as_slice()))
            .collect();
        let v_hat = fit_global(&pooled)?;

        let mut idx = 0;
        for (dev, u_hat) in world.devices.iter().zip(&u_hats) {
            for i in 0..cfg.n_test {
                let x = dev.test_x.row(i);
                let global_pred = dot(&v_hat, x);
                let pred = alpha * dot(u_hat, x) + (1.0 - alpha) * global_pred;
                pred_sum[idx] += pred;
                pred_sq_sum[idx] += pred * pred;
                global_pred_sum[idx] += global_pred;
                let err = pred - dev.test_y[i];
                total_err += err * err;
                idx += 1;
            }
        }
    }

    let kf = redraws as f64;
    let mut bias_sq = 0.0;
    let mut variance = 0.0;
    let mut delta_sq = 0.0;
    let mut idx = 0;
    for dev in &world.devices {
        for i in 0..cfg.n_test {
            let mean_pred = pred_sum[idx] / kf;
            let mean_global = global_pred_sum[idx] / kf;
            bias_sq += (dev.test_y[i] - mean_pred) * (dev.test_y[i] - mean_pred);
            variance += pred_sq_sum[idx] / kf - mean_pred * mean_pred;
            delta_sq += (dev.test_y[i] - mean_global) * (dev.test_y[i] - mean_global);
            idx += 1;
        }
    }
    let scale = 1.0 / total_test as f64;
    Ok(DecompositionReport {
        total_error: total_err * scale / kf,
        bias_sq: bias_sq * scale,
        variance: variance * scale,
        delta_sq: delta_sq * scale,
        alpha,
    })
}
