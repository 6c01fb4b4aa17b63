//! Dirichlet distributions: density evaluation, moments, sampling and
//! maximum-likelihood fitting via Minka's fixed-point iteration.
//!
//! Everything here works in log space; raw densities overflow for
//! concentrated parameter vectors once the dimension grows past a handful
//! of classes.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Euler-Mascheroni constant, also -digamma(1).
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Default clamp applied to score vectors before density evaluation or
/// fitting. The density is undefined on the simplex boundary.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DirichletError {
    #[error("dimension mismatch: parameters have {params} entries, sample has {sample}")]
    DimensionMismatch { params: usize, sample: usize },
    #[error("concentration parameters must be positive and finite, got {0}")]
    InvalidConcentration(f64),
    #[error("score vector entry {index} = {value} lies outside the open simplex")]
    BoundaryScore { index: usize, value: f64 },
    #[error("score vector sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("fitting needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("fit did not converge within {iterations} iterations (last max step {last_step:.3e})")]
    NotConverged {
        iterations: usize,
        last_step: f64,
        last_iterate: Vec<f64>,
    },
}

/// Concentration parameters of a Dirichlet distribution. Every entry is
/// strictly positive and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self, DirichletError> {
        for &a in &alpha {
            if !(a > 0.0) || !a.is_finite() {
                return Err(DirichletError::InvalidConcentration(a));
            }
        }
        Ok(Self { alpha })
    }

    /// Flat Dirichlet (all ones) of the given dimension.
    pub fn flat(dim: usize) -> Self {
        Self {
            alpha: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sum(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Mean of the distribution, alpha_i / sum(alpha). Sums to 1.
    pub fn mean(&self) -> Vec<f64> {
        let total = self.sum();
        self.alpha.iter().map(|a| a / total).collect()
    }

    /// log Dir(s | alpha) = lgamma(sum a) - sum lgamma(a_i) + sum (a_i - 1) ln s_i.
    pub fn log_density(&self, sample: &ScoreSample) -> Result<f64, DirichletError> {
        if sample.dim() != self.dim() {
            return Err(DirichletError::DimensionMismatch {
                params: self.dim(),
                sample: sample.dim(),
            });
        }
        let mut sum = 0.0;
        let mut norm = 0.0;
        let mut lk = 0.0;
        for (&a, &s) in self.alpha.iter().zip(sample.values()) {
            sum += a;
            norm += ln_gamma(a);
            lk += (a - 1.0) * s.ln();
        }
        Ok(ln_gamma(sum) - norm + lk)
    }

    /// Draw one sample by normalizing independent Gamma(alpha_i, 1) draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ScoreSample {
        let mut draws: Vec<f64> = self
            .alpha
            .iter()
            .map(|&a| {
                let g = Gamma::new(a, 1.0).expect("alpha validated at construction");
                let mut v = g.sample(rng);
                // Gamma draws for small alpha can underflow to exactly 0.
                if v <= 0.0 {
                    v = f64::MIN_POSITIVE;
                }
                v
            })
            .collect();
        let total: f64 = draws.iter().sum();
        for d in &mut draws {
            *d /= total;
        }
        ScoreSample::clamped(&draws, DEFAULT_CLAMP_EPS)
    }
}

impl TryFrom<Vec<f64>> for DirichletParams {
    type Error = DirichletError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<DirichletParams> for Vec<f64> {
    fn from(p: DirichletParams) -> Vec<f64> {
        p.alpha
    }
}

/// A point in the open probability simplex: entries strictly positive,
/// summing to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreSample {
    s: Vec<f64>,
}

impl ScoreSample {
    /// Strict constructor: rejects boundary entries and unnormalized input.
    pub fn new(s: Vec<f64>) -> Result<Self, DirichletError> {
        for (i, &v) in s.iter().enumerate() {
            if !(v > 0.0) || v >= 1.0 || !v.is_finite() {
                return Err(DirichletError::BoundaryScore { index: i, value: v });
            }
        }
        let sum: f64 = s.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DirichletError::NotNormalized(sum));
        }
        Ok(Self { s })
    }

    /// Clamp raw non-negative scores away from the boundary and renormalize.
    /// This is how detector output (which may contain exact zeros) enters
    /// density evaluation and fitting.
    pub fn clamped(raw: &[f64], eps: f64) -> Self {
        let mut s: Vec<f64> = raw.iter().map(|&v| v.max(eps)).collect();
        let total: f64 = s.iter().sum();
        for v in &mut s {
            *v /= total;
        }
        Self { s }
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }
}

impl TryFrom<Vec<f64>> for ScoreSample {
    type Error = DirichletError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ScoreSample> for Vec<f64> {
    fn from(s: ScoreSample) -> Vec<f64> {
        s.s
    }
}

/// Settings for the fixed-point fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Bins with fewer samples than this fall back to the flat Dirichlet
    /// during calibration.
    pub min_samples: usize,
    pub clamp_eps: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iters: 1000,
            min_samples: 25,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }
}

/// Outcome of a successful fit.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: DirichletParams,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Per-sample average objective after each iteration, starting with the
    /// initializer's value. Non-decreasing by construction.
    pub objective_trace: Vec<f64>,
}

/// Maximum-likelihood Dirichlet fit using the fixed-point iteration
/// alpha_k <- inv_digamma(digamma(sum alpha) + mean log s_k), started from
/// the method-of-moments estimate.
pub fn fit_mle(samples: &[ScoreSample], config: &FitConfig) -> Result<FitOutcome, DirichletError> {
    if samples.len() < 2 {
        return Err(DirichletError::TooFewSamples(samples.len()));
    }
    let dim = samples[0].dim();
    for s in samples {
        if s.dim() != dim {
            return Err(DirichletError::DimensionMismatch {
                params: dim,
                sample: s.dim(),
            });
        }
    }

    // Sufficient statistics: mean log s_k, plus first/second moments for the
    // initializer.
    let n = samples.len() as f64;
    let mut mean_log = vec![0.0; dim];
    let mut mean = vec![0.0; dim];
    let mut mean_sq = vec![0.0; dim];
    for s in samples {
        for (k, &v) in s.values().iter().enumerate() {
            mean_log[k] += v.ln();
            mean[k] += v;
            mean_sq[k] += v * v;
        }
    }
    for k in 0..dim {
        mean_log[k] /= n;
        mean[k] /= n;
        mean_sq[k] /= n;
    }

    let mut alpha = moment_estimate(&mean, &mean_sq);
    let mut ll = fit_objective(&alpha, &mean_log);
    let mut trace = vec![ll];
    let mut last_step = f64::INFINITY;

    for iter in 1..=config.max_iters {
        let psi_sum = digamma(alpha.iter().sum());
        let mut step = 0.0_f64;
        for k in 0..dim {
            let next = inv_digamma(psi_sum + mean_log[k]).max(f64::MIN_POSITIVE);
            step = step.max((next - alpha[k]).abs() / alpha[k].max(f64::MIN_POSITIVE));
            alpha[k] = next;
        }
        ll = fit_objective(&alpha, &mean_log);
        trace.push(ll);
        last_step = step;
        if step < config.tol {
            return Ok(FitOutcome {
                params: DirichletParams::new(alpha)?,
                iterations: iter,
                log_likelihood: ll * n,
                objective_trace: trace,
            });
        }
    }

    Err(DirichletError::NotConverged {
        iterations: config.max_iters,
        last_step,
        last_iterate: alpha,
    })
}

/// Per-sample average log-likelihood, dropping nothing: this is the
/// objective the fixed point ascends.
pub fn fit_objective(alpha: &[f64], mean_log: &[f64]) -> f64 {
    let sum: f64 = alpha.iter().sum();
    let mut v = ln_gamma(sum);
    for (&a, &ml) in alpha.iter().zip(mean_log) {
        v -= ln_gamma(a);
        v += (a - 1.0) * ml;
    }
    v
}

/// Method-of-moments initializer from the sample mean and mean square of
/// the first component (Minka's suggested start).
fn moment_estimate(mean: &[f64], mean_sq: &[f64]) -> Vec<f64> {
    let m = mean[0];
    let m2 = mean_sq[0];
    let var = m2 - m * m;
    let precision = if var > 1e-12 {
        ((m - m2) / var).clamp(1e-3, 1e7)
    } else {
        // Degenerate spread: the data is extremely concentrated.
        1e7
    };
    mean.iter().map(|&mk| (mk * precision).max(1e-6)).collect()
}

/// Digamma function psi(x) = d/dx ln Gamma(x), for x > 0.
///
/// Small arguments are shifted up by the recurrence psi(x) = psi(x+1) - 1/x
/// until the asymptotic series is accurate.
pub fn digamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut x = x;
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Asymptotic expansion: ln x - 1/2x - sum B_2n / (2n x^2n).
    let series = inv2
        * (-1.0 / 12.0
            + inv2
                * (1.0 / 120.0
                    + inv2
                        * (-1.0 / 252.0
                            + inv2
                                * (1.0 / 240.0
                                    + inv2
                                        * (-1.0 / 132.0
                                            + inv2 * (691.0 / 32760.0 + inv2 * (-1.0 / 12.0)))))));
    shift + x.ln() - 0.5 * inv + series
}

/// Trigamma function psi'(x), for x > 0.
pub fn trigamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut x = x;
    let mut shift = 0.0;
    while x < 10.0 {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0
            + inv * (0.5
                + inv * (1.0 / 6.0
                    + inv2
                        * (-1.0 / 30.0
                            + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))))));
    shift + series
}

/// Inverse of the digamma function via Newton iterations, using the
/// standard initializer exp(y) + 1/2 for y >= -2.22 and -1/(y + gamma)
/// below it.
pub fn inv_digamma(y: f64) -> f64 {
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y + EULER_GAMMA)
    };
    for _ in 0..32 {
        let step = (digamma(x) - y) / trigamma(x);
        let next = x - step;
        // Newton can overshoot below zero for extreme targets; bisect back.
        let next = if next > 0.0 { next } else { x / 2.0 };
        if (next - x).abs() <= 1e-14 * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

/// Natural log of the Gamma function (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    // Coefficients from the g=7, n=9 Lanczos tabulation.
    const COEFFS: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    const SQRT_TWO_PI_LN: f64 = 0.918_938_533_204_672_7;
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection keeps the approximation accurate near zero.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.999_999_999_999_809_9;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    SQRT_TWO_PI_LN + (x + 0.5) * t.ln() - t + acc.ln()
}
