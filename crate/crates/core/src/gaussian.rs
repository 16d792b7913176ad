//! Correlated Gaussian benchmark with closed-form mutual information.
//!
//! `X, Y` are `dim`-dimensional standard normals with cross-covariance
//! `nu * I`, so every coordinate pair `(x_i, y_i)` is an independent
//! bivariate normal with correlation `nu`. The mutual information is
//! `-(dim/2) ln(1 - nu^2)` nats and the density ratio `dP/dQ` against the
//! product of marginals factorizes over coordinates.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("nu = {0} must lie in (0, 1)")]
    Correlation(f64),
    #[error("batch size must be positive")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianTaskConfig {
    pub dim: usize,
    pub nu: f64,
    pub seed: u64,
}

impl GaussianTaskConfig {
    pub fn new(dim: usize, nu: f64, seed: u64) -> Result<Self, TaskError> {
        let cfg = Self { dim, nu, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.dim == 0 {
            return Err(TaskError::ZeroDim);
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(TaskError::Correlation(self.nu));
        }
        Ok(())
    }

    /// Data generator for this task. It runs on stream 1 of the seed so that
    /// a critic initialized from the same seed draws unrelated numbers.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        rng
    }
}

/// `I(X;Y) = -(dim/2) ln(1 - nu^2)` in nats.
pub fn true_mi(config: &GaussianTaskConfig) -> f64 {
    -0.5 * config.dim as f64 * (-config.nu * config.nu).ln_1p()
}

/// One batch of joint pairs plus the shuffled pairing used as marginal samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub xs: Array2<f64>,
    pub ys: Array2<f64>,
    /// Rows of `ys` in a uniformly random order.
    pub ys_shuffled: Array2<f64>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.xs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.nrows() == 0
    }
}

/// Draws `n_batch` joint pairs, then Fisher-Yates shuffles the `y` rows.
pub fn sample_pair_batch<R: Rng + ?Sized>(
    config: &GaussianTaskConfig,
    n_batch: usize,
    rng: &mut R,
) -> Result<PairBatch, TaskError> {
    config.validate()?;
    if n_batch == 0 {
        return Err(TaskError::EmptyBatch);
    }
    let dim = config.dim;
    let noise = (1.0 - config.nu * config.nu).sqrt();
    let mut xs = Array2::zeros((n_batch, dim));
    let mut ys = Array2::zeros((n_batch, dim));
    for (x, y) in xs.iter_mut().zip(ys.iter_mut()) {
        let u: f64 = rng.sample(StandardNormal);
        let w: f64 = rng.sample(StandardNormal);
        *x = u;
        *y = config.nu * u + noise * w;
    }
    let mut order: Vec<usize> = (0..n_batch).collect();
    order.shuffle(rng);
    let ys_shuffled = ys.select(ndarray::Axis(0), &order);
    Ok(PairBatch {
        xs,
        ys,
        ys_shuffled,
    })
}

/// `log dP/dQ (x, y)` for the joint `P` and the product of marginals `Q`.
pub fn exact_log_ratio(x: ArrayView1<f64>, y: ArrayView1<f64>, config: &GaussianTaskConfig) -> f64 {
    let nu = config.nu;
    let one_minus = 1.0 - nu * nu;
    let quad: f64 = x
        .iter()
        .zip(y.iter())
        .map(|(&xi, &yi)| {
            -(xi * xi - 2.0 * nu * xi * yi + yi * yi) / (2.0 * one_minus)
                + (xi * xi + yi * yi) / 2.0
        })
        .sum();
    quad - 0.5 * config.dim as f64 * (-nu * nu).ln_1p()
}

/// Oracle scores `exact_log_ratio + shift` for every row pair.
pub fn oracle_scores(
    xs: &Array2<f64>,
    ys: &Array2<f64>,
    config: &GaussianTaskConfig,
    shift: f64,
) -> Vec<f64> {
    xs.outer_iter()
        .zip(ys.outer_iter())
        .map(|(x, y)| exact_log_ratio(x, y, config) + shift)
        .collect()
}
