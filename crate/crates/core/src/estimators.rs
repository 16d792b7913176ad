//! Variational mutual information objectives evaluated on critic scores.
//!
//! Every estimator is written as `value = joint_term - marg_term`, where the
//! joint term is the mean score on pairs drawn from the joint distribution and
//! the marginal term depends only on scores of shuffled (product of marginals)
//! pairs. The reverse Jensen estimators replace `log E_Q[e^T]` by an
//! expectation of `log(1 + e^T)` scaled by `1 / zeta`, which pulls the
//! expectation outside the logarithm.
//!
//! All exponential averages are computed in max-subtracted log space.

use rand::Rng;
use thiserror::Error;

use crate::critic::{
    backward_batch, forward_joint_and_marginal, init_critic, optimizer_step, split_scores,
    AdamConfig, CriticConfig, CriticError, OptimizerState,
};
use crate::gaussian::{oracle_scores, sample_pair_batch, true_mi, GaussianTaskConfig, TaskError};

/// Floor applied to the RJE-a denominator `1 - c r m`.
pub const RJE_A_GUARD: f64 = 1e-6;

/// Smallest sample count accepted by [`evaluate_at_oracle`].
pub const MIN_ORACLE_SAMPLES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("invalid score batch: {0}")]
    InvalidBatch(String),
    #[error("invalid estimator parameter: {0}")]
    Parameter(String),
    #[error("score overflow (max marginal score {max})")]
    ScoreOverflow { max: f64 },
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// Critic scores on joint pairs and on shuffled pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    joint: Vec<f64>,
    marg: Vec<f64>,
}

impl ScoreBatch {
    pub fn new(joint: Vec<f64>, marg: Vec<f64>) -> Result<Self> {
        if joint.is_empty() || marg.is_empty() {
            return Err(EstimatorError::InvalidBatch(
                "scores must be nonempty".into(),
            ));
        }
        if joint.len() != marg.len() {
            return Err(EstimatorError::InvalidBatch(format!(
                "{} joint scores vs {} marginal scores",
                joint.len(),
                marg.len()
            )));
        }
        if joint.iter().chain(&marg).any(|s| !s.is_finite()) {
            return Err(EstimatorError::InvalidBatch("scores must be finite".into()));
        }
        Ok(Self { joint, marg })
    }

    pub fn joint(&self) -> &[f64] {
        &self.joint
    }

    pub fn marg(&self) -> &[f64] {
        &self.marg
    }

    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }

    /// Adds `offset` to every score.
    pub fn shifted(&self, offset: f64) -> Result<Self> {
        Self::new(
            self.joint.iter().map(|s| s + offset).collect(),
            self.marg.iter().map(|s| s + offset).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Mine,
    Nwj,
    Smile {
        tau: f64,
    },
    /// Reverse Jensen estimator with `a = c r`, `r` the batch moments ratio.
    /// With `detach_ratio` the ratio is a per-batch constant for gradients.
    RjeA {
        c: f64,
        detach_ratio: bool,
    },
    /// Reverse Jensen estimator with fixed `0 < b < a`.
    RjeB {
        a: f64,
        b: f64,
    },
}

impl EstimatorKind {
    pub fn rje_a(c: f64) -> Self {
        Self::RjeA {
            c,
            detach_ratio: true,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mine => "mine",
            Self::Nwj => "nwj",
            Self::Smile { .. } => "smile",
            Self::RjeA { .. } => "rje_a",
            Self::RjeB { .. } => "rje_b",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Mine | Self::Nwj => Ok(()),
            Self::Smile { tau } if tau > 0.0 => Ok(()),
            Self::Smile { tau } => Err(EstimatorError::Parameter(format!(
                "smile requires tau > 0, got {tau}"
            ))),
            Self::RjeA { c, .. } if c > 1.0 && c.is_finite() => Ok(()),
            Self::RjeA { c, .. } => Err(EstimatorError::Parameter(format!(
                "rje_a requires c > 1, got {c}"
            ))),
            Self::RjeB { a, b } if 0.0 < b && b < a && a.is_finite() => Ok(()),
            Self::RjeB { a, b } => Err(EstimatorError::Parameter(format!(
                "rje_b requires 0 < b < a, got a = {a}, b = {b}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    /// RJE-a moments ratio.
    pub r: Option<f64>,
    pub a_effective: Option<f64>,
    pub guard_triggered: bool,
    /// SMILE: fraction of marginal scores outside `(-tau, tau)`.
    pub clip_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOutput {
    pub value: f64,
    pub joint_term: f64,
    pub marg_term: f64,
    pub diagnostics: Diagnostics,
}

impl EstimateOutput {
    fn new(joint_term: f64, marg_term: f64, diagnostics: Diagnostics) -> Self {
        Self {
            value: joint_term - marg_term,
            joint_term,
            marg_term,
            diagnostics,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `log((1/n) sum exp(x_i))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + (sum / xs.len() as f64).ln()
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    if z >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

/// `e^{x_i - lme} / n`, the weights of `d log_mean_exp / d x_i`.
fn softmax_weights(xs: &[f64], lme: f64) -> Vec<f64> {
    let n = xs.len() as f64;
    xs.iter().map(|x| (x - lme).exp() / n).collect()
}

/// Donsker-Varadhan bound `mean(T_P) - log mean(e^{T_Q})`.
pub fn mine_value(scores: &ScoreBatch) -> EstimateOutput {
    EstimateOutput::new(
        mean(&scores.joint),
        log_mean_exp(&scores.marg),
        Diagnostics::default(),
    )
}

/// NWJ bound `mean(T_P) - e^{-1} mean(e^{T_Q})`.
pub fn nwj_value(scores: &ScoreBatch) -> Result<EstimateOutput> {
    let marg_term = (log_mean_exp(&scores.marg) - 1.0).exp();
    if !marg_term.is_finite() {
        let max = scores
            .marg
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        return Err(EstimatorError::ScoreOverflow { max });
    }
    Ok(EstimateOutput::new(
        mean(&scores.joint),
        marg_term,
        Diagnostics::default(),
    ))
}

/// MINE with every marginal exponent clamped to `[-tau, tau]`.
pub fn smile_value(scores: &ScoreBatch, tau: f64) -> Result<EstimateOutput> {
    EstimatorKind::Smile { tau }.validate()?;
    let clamped: Vec<f64> = scores.marg.iter().map(|s| s.clamp(-tau, tau)).collect();
    let clipped = scores.marg.iter().filter(|s| s.abs() > tau).count();
    Ok(EstimateOutput::new(
        mean(&scores.joint),
        log_mean_exp(&clamped),
        Diagnostics {
            clip_fraction: Some(clipped as f64 / scores.len() as f64),
            ..Diagnostics::default()
        },
    ))
}

/// `r = mean(e^{2 T_P}) / mean(e^{T_Q})^2`, second moment from the joint
/// scores and first moment from the marginal scores.
pub fn rje_a_moments_ratio(scores: &ScoreBatch) -> f64 {
    log_rje_a_ratio(scores).exp()
}

fn log_rje_a_ratio(scores: &ScoreBatch) -> f64 {
    let doubled: Vec<f64> = scores.joint.iter().map(|s| 2.0 * s).collect();
    log_mean_exp(&doubled) - 2.0 * log_mean_exp(&scores.marg)
}

/// Coefficient `c / (1 - sqrt(1/c))` of the RJE-a softplus term.
pub fn rje_a_coefficient(c: f64) -> f64 {
    c / (1.0 - (1.0 / c).sqrt())
}

/// Coefficient `a / (1 - sqrt(b/a))` of the RJE-b softplus term, which equals
/// `1 / zeta` at `p = q = 2`.
pub fn rje_b_coefficient(a: f64, b: f64) -> f64 {
    a / (1.0 - (b / a).sqrt())
}

/// RJE-a:
///
/// ```text
/// mean(T_P) - log(m / (1 - c r m)) - c/(1 - sqrt(1/c)) mean(log(1 + e^{T_Q}))
/// ```
///
/// with `m = mean(e^{T_Q})`. When `1 - c r m <= RJE_A_GUARD` the denominator
/// is clamped and the step is flagged.
pub fn rje_a_value(scores: &ScoreBatch, c: f64) -> Result<EstimateOutput> {
    let r = rje_a_moments_ratio(scores);
    rje_a_value_at_ratio(scores, c, r)
}

/// RJE-a with an externally supplied moments ratio `r`.
pub fn rje_a_value_at_ratio(scores: &ScoreBatch, c: f64, r: f64) -> Result<EstimateOutput> {
    EstimatorKind::rje_a(c).validate()?;
    let parts = rje_a_parts(scores, c, r.ln());
    Ok(EstimateOutput::new(
        mean(&scores.joint),
        parts.marg_term,
        Diagnostics {
            r: Some(r),
            a_effective: Some(c * r),
            guard_triggered: parts.guarded,
            clip_fraction: None,
        },
    ))
}

struct RjeAParts {
    lme: f64,
    /// `c r m`
    u: f64,
    denom: f64,
    guarded: bool,
    marg_term: f64,
}

fn rje_a_parts(scores: &ScoreBatch, c: f64, log_r: f64) -> RjeAParts {
    let lme = log_mean_exp(&scores.marg);
    let u = (c.ln() + log_r + lme).exp();
    let raw = 1.0 - u;
    let guarded = !(raw > RJE_A_GUARD);
    let denom = if guarded { RJE_A_GUARD } else { raw };
    let softplus_mean = scores.marg.iter().map(|&s| softplus(s)).sum::<f64>() / scores.len() as f64;
    RjeAParts {
        lme,
        u,
        denom,
        guarded,
        marg_term: lme - denom.ln() + rje_a_coefficient(c) * softplus_mean,
    }
}

/// `log(1/m + a)` from `lme = log m`.
fn log_inv_plus(lme: f64, a: f64) -> f64 {
    if lme > 0.0 {
        (a + (-lme).exp()).ln()
    } else {
        -lme + (a * lme.exp()).ln_1p()
    }
}

/// RJE-b:
///
/// ```text
/// mean(T_P) + log(1/m + a) - a/(1 - sqrt(b/a)) mean(log(1 + e^{T_Q}))
/// ```
pub fn rje_b_value(scores: &ScoreBatch, a: f64, b: f64) -> Result<EstimateOutput> {
    EstimatorKind::RjeB { a, b }.validate()?;
    let lme = log_mean_exp(&scores.marg);
    let softplus_mean = scores.marg.iter().map(|&s| softplus(s)).sum::<f64>() / scores.len() as f64;
    Ok(EstimateOutput::new(
        mean(&scores.joint),
        -log_inv_plus(lme, a) + rje_b_coefficient(a, b) * softplus_mean,
        Diagnostics {
            a_effective: Some(a),
            ..Diagnostics::default()
        },
    ))
}

/// Dispatches to the value function of `kind`.
pub fn evaluate(kind: &EstimatorKind, scores: &ScoreBatch) -> Result<EstimateOutput> {
    match *kind {
        EstimatorKind::Mine => Ok(mine_value(scores)),
        EstimatorKind::Nwj => nwj_value(scores),
        EstimatorKind::Smile { tau } => smile_value(scores, tau),
        EstimatorKind::RjeA { c, .. } => rje_a_value(scores, c),
        EstimatorKind::RjeB { a, b } => rje_b_value(scores, a, b),
    }
}

/// `d value / d score` for every joint and marginal score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradients {
    pub d_joint: Vec<f64>,
    pub d_marg: Vec<f64>,
}

/// Analytic partial derivatives of the estimator value.
///
/// For RJE-a with `detach_ratio` the ratio `r` is held fixed; when the guard
/// is active the clamped denominator contributes no gradient.
pub fn score_gradients(kind: &EstimatorKind, scores: &ScoreBatch) -> Result<ScoreGradients> {
    kind.validate()?;
    let n = scores.len() as f64;
    let d_joint_uniform = vec![1.0 / n; scores.len()];
    let marg = &scores.marg;
    let grads = match *kind {
        EstimatorKind::Mine => {
            let lme = log_mean_exp(marg);
            ScoreGradients {
                d_joint: d_joint_uniform,
                d_marg: softmax_weights(marg, lme).into_iter().map(|w| -w).collect(),
            }
        }
        EstimatorKind::Nwj => {
            let d_marg: Vec<f64> = marg.iter().map(|s| -(s - 1.0).exp() / n).collect();
            if d_marg.iter().any(|d| !d.is_finite()) {
                let max = marg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                return Err(EstimatorError::ScoreOverflow { max });
            }
            ScoreGradients {
                d_joint: d_joint_uniform,
                d_marg,
            }
        }
        EstimatorKind::Smile { tau } => {
            let clamped: Vec<f64> = marg.iter().map(|s| s.clamp(-tau, tau)).collect();
            let lme = log_mean_exp(&clamped);
            let weights = softmax_weights(&clamped, lme);
            ScoreGradients {
                d_joint: d_joint_uniform,
                d_marg: marg
                    .iter()
                    .zip(weights)
                    .map(|(s, w)| if s.abs() < tau { -w } else { 0.0 })
                    .collect(),
            }
        }
        EstimatorKind::RjeA { c, detach_ratio } => {
            let parts = rje_a_parts(scores, c, log_rje_a_ratio(scores));
            let coef = rje_a_coefficient(c) / n;
            let weights = softmax_weights(marg, parts.lme);
            let sig = marg.iter().map(|&s| sigmoid(s));
            if detach_ratio || parts.guarded {
                let scale = if parts.guarded {
                    1.0
                } else {
                    1.0 / parts.denom
                };
                ScoreGradients {
                    d_joint: d_joint_uniform,
                    d_marg: weights
                        .iter()
                        .zip(sig)
                        .map(|(w, g)| -w * scale - coef * g)
                        .collect(),
                }
            } else {
                // u = c mean(e^{2 T_P}) / m depends on both score sets
                let u = parts.u;
                let doubled: Vec<f64> = scores.joint.iter().map(|s| 2.0 * s).collect();
                let joint_weights = softmax_weights(&doubled, log_mean_exp(&doubled));
                ScoreGradients {
                    d_joint: joint_weights
                        .iter()
                        .map(|w| 1.0 / n - 2.0 * u * w / parts.denom)
                        .collect(),
                    d_marg: weights
                        .iter()
                        .zip(sig)
                        .map(|(w, g)| -w * (1.0 - 2.0 * u) / parts.denom - coef * g)
                        .collect(),
                }
            }
        }
        EstimatorKind::RjeB { a, b } => {
            let lme = log_mean_exp(marg);
            let inv = 1.0 / (1.0 + a * lme.exp());
            let coef = rje_b_coefficient(a, b) / n;
            ScoreGradients {
                d_joint: d_joint_uniform,
                d_marg: softmax_weights(marg, lme)
                    .into_iter()
                    .zip(marg)
                    .map(|(w, &s)| -w * inv - coef * sigmoid(s))
                    .collect(),
            }
        }
    };
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            steps: 5000,
            learning_rate: AdamConfig::default().learning_rate,
            seed: 0,
        }
    }
}

/// One training step.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub step: usize,
    pub estimator: String,
    pub dim: usize,
    pub nu: f64,
    pub estimate: f64,
    pub joint_term: f64,
    pub marg_term: f64,
    pub true_mi: f64,
    pub guard_triggered: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFailure {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub records: Vec<RunRecord>,
    /// Set when a non-finite value or gradient aborted the run. The record of
    /// the failing step is the last one in `records`.
    pub failure: Option<TrainingFailure>,
}

/// Maximizes the estimator over a freshly initialized critic.
///
/// Each step samples a batch, scores joint and shuffled pairs in one forward
/// pass, evaluates the estimator and applies an Adam step to `-value`. The
/// critic is initialized from `train.seed`; batches come from the task's own
/// generator.
pub fn train_estimator(
    task: &GaussianTaskConfig,
    critic_cfg: &CriticConfig,
    kind: &EstimatorKind,
    train: &TrainConfig,
) -> Result<TrainingRun> {
    task.validate()?;
    critic_cfg.validate()?;
    kind.validate()?;
    if train.batch_size < 2 {
        return Err(EstimatorError::Parameter(
            "batch_size must be at least 2".into(),
        ));
    }
    if critic_cfg.input_dim != 2 * task.dim {
        return Err(EstimatorError::Parameter(format!(
            "critic input_dim {} does not match 2 * dim = {}",
            critic_cfg.input_dim,
            2 * task.dim
        )));
    }
    let mi = true_mi(task);
    let mut params = init_critic(critic_cfg, train.seed)?;
    let mut optimizer = OptimizerState::new(
        &params,
        AdamConfig {
            learning_rate: train.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = task.rng();
    let mut records = Vec::with_capacity(train.steps);
    let make_record = |step: usize, out: Option<&EstimateOutput>| RunRecord {
        step,
        estimator: kind.name().to_string(),
        dim: task.dim,
        nu: task.nu,
        estimate: out.map_or(f64::NAN, |o| o.value),
        joint_term: out.map_or(f64::NAN, |o| o.joint_term),
        marg_term: out.map_or(f64::NAN, |o| o.marg_term),
        true_mi: mi,
        guard_triggered: out.is_some_and(|o| o.diagnostics.guard_triggered),
        seed: train.seed,
    };
    for step in 0..train.steps {
        let batch = sample_pair_batch(task, train.batch_size, &mut rng)?;
        let pass = forward_joint_and_marginal(
            &params,
            batch.xs.view(),
            batch.ys.view(),
            batch.ys_shuffled.view(),
        )?;
        let fail = |records: &mut Vec<RunRecord>, out: Option<&EstimateOutput>, reason: String| {
            // a failed step never carries a usable estimate
            records.push(RunRecord {
                estimate: f64::NAN,
                ..make_record(step, out)
            });
            Some(TrainingFailure { step, reason })
        };
        let (joint, marg) = split_scores(&pass.scores);
        let scores = match ScoreBatch::new(joint.to_vec(), marg.to_vec()) {
            Ok(s) => s,
            Err(e) => {
                let failure = fail(&mut records, None, e.to_string());
                return Ok(TrainingRun { records, failure });
            }
        };
        let out = match evaluate(kind, &scores) {
            Ok(out) if out.value.is_finite() => out,
            Ok(out) => {
                let failure = fail(&mut records, Some(&out), "non-finite estimate".into());
                return Ok(TrainingRun { records, failure });
            }
            Err(e) => {
                let failure = fail(&mut records, None, e.to_string());
                return Ok(TrainingRun { records, failure });
            }
        };
        let grads = match score_gradients(kind, &scores) {
            Ok(g) => g,
            Err(e) => {
                let failure = fail(&mut records, Some(&out), e.to_string());
                return Ok(TrainingRun { records, failure });
            }
        };
        let descent: Vec<f64> = grads
            .d_joint
            .iter()
            .chain(&grads.d_marg)
            .map(|g| -g)
            .collect();
        let param_grads = backward_batch(&params, &pass, &descent)?;
        if let Err(e) = optimizer_step(&mut params, &param_grads, &mut optimizer) {
            let failure = fail(&mut records, Some(&out), e.to_string());
            return Ok(TrainingRun { records, failure });
        }
        records.push(make_record(step, Some(&out)));
    }
    Ok(TrainingRun {
        records,
        failure: None,
    })
}

/// Draws `n_samples` joint pairs plus their shuffled pairing from `rng` and
/// scores both with the exact log density ratio plus `shift`.
pub fn oracle_score_batch<R: Rng + ?Sized>(
    task: &GaussianTaskConfig,
    n_samples: usize,
    shift: f64,
    rng: &mut R,
) -> Result<ScoreBatch> {
    let batch = sample_pair_batch(task, n_samples, rng)?;
    ScoreBatch::new(
        oracle_scores(&batch.xs, &batch.ys, task, shift),
        oracle_scores(&batch.xs, &batch.ys_shuffled, task, shift),
    )
}

/// Evaluates `kind` on the oracle critic `log dP/dQ + shift` without training.
pub fn evaluate_at_oracle(
    task: &GaussianTaskConfig,
    kind: &EstimatorKind,
    n_samples: usize,
    shift: f64,
) -> Result<EstimateOutput> {
    if n_samples < MIN_ORACLE_SAMPLES {
        return Err(EstimatorError::Parameter(format!(
            "oracle evaluation needs at least {MIN_ORACLE_SAMPLES} samples, got {n_samples}"
        )));
    }
    let scores = oracle_score_batch(task, n_samples, shift, &mut task.rng())?;
    evaluate(kind, &scores)
}
