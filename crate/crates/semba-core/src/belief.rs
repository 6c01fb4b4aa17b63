//! Per-cell Dirichlet beliefs over object classes, the class posterior and
//! the subjective-logic fusion update shared by all attention variants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row/column address of a grid cell.
pub type Cell = (usize, usize);

/// Default cap on a single pseudo-count. The fusion rule grows beta without
/// bound, so long-running sessions clamp here.
pub const DEFAULT_BETA_CAP: f64 = 1e6;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("grid dimensions must be positive, got {rows}x{cols}")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("cell ({0}, {1}) is out of bounds")]
    CellOutOfBounds(usize, usize),
    #[error("unknown class {0} (grid has {1} classes)")]
    UnknownClass(usize, usize),
    #[error("catalog needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class names must be unique ({0:?} repeats)")]
    DuplicateName(String),
    #[error("known-class set must be a non-empty subset of 0..{0}")]
    BadKnownSet(usize),
    #[error("likelihood vector is invalid: {0}")]
    BadLikelihood(String),
    #[error("serialized grid is inconsistent: {0}")]
    BadSerialization(String),
}

/// The detector's class vocabulary plus the subset eligible as search
/// targets. Class ids are 0-based indices into `names`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassCatalog {
    names: Vec<String>,
    known: Vec<usize>,
}

impl ClassCatalog {
    pub fn new(names: Vec<String>, known: Vec<usize>) -> Result<Self, BeliefError> {
        if names.len() < 2 {
            return Err(BeliefError::TooFewClasses(names.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(BeliefError::DuplicateName(n.clone()));
            }
        }
        let mut known = known;
        known.sort_unstable();
        known.dedup();
        if known.is_empty() || known.iter().any(|&k| k >= names.len()) {
            return Err(BeliefError::BadKnownSet(names.len()));
        }
        Ok(Self { names, known })
    }

    /// Catalog with `k` generated names, all of them searchable.
    pub fn generic(k: usize) -> Result<Self, BeliefError> {
        let names = (0..k).map(|i| format!("class_{i:02}")).collect();
        Self::new(names, (0..k).collect())
    }

    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, k: usize) -> Option<&str> {
        self.names.get(k).map(|s| s.as_str())
    }

    pub fn known_set(&self) -> &[usize] {
        &self.known
    }

    pub fn is_known(&self, k: usize) -> bool {
        self.known.binary_search(&k).is_ok()
    }
}

/// Per-class observation likelihoods entering the fusion rule. Entries are
/// non-negative, finite, and not all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodVector {
    lambda: Vec<f64>,
}

impl LikelihoodVector {
    pub fn new(lambda: Vec<f64>) -> Result<Self, BeliefError> {
        if lambda.is_empty() {
            return Err(BeliefError::BadLikelihood("empty vector".into()));
        }
        for &l in &lambda {
            if !l.is_finite() || l < 0.0 {
                return Err(BeliefError::BadLikelihood(format!("entry {l} not allowed")));
            }
        }
        if lambda.iter().all(|&l| l == 0.0) {
            return Err(BeliefError::BadLikelihood("all entries zero".into()));
        }
        Ok(Self { lambda })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }
}

/// Y x X grid of Dirichlet pseudo-count vectors, one per cell. A fresh grid
/// is the non-informative prior (all ones); shape is fixed after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGrid {
    rows: usize,
    cols: usize,
    class_count: usize,
    beta_cap: f64,
    // Row-major, rows*cols*class_count entries.
    beta: Vec<f64>,
}

impl BeliefGrid {
    pub fn new(rows: usize, cols: usize, catalog: &ClassCatalog) -> Result<Self, BeliefError> {
        if rows == 0 || cols == 0 {
            return Err(BeliefError::EmptyGrid { rows, cols });
        }
        let class_count = catalog.class_count();
        Ok(Self {
            rows,
            cols,
            class_count,
            beta_cap: DEFAULT_BETA_CAP,
            beta: vec![1.0; rows * cols * class_count],
        })
    }

    pub fn with_beta_cap(mut self, cap: f64) -> Self {
        self.beta_cap = cap;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    fn offset(&self, cell: Cell) -> Result<usize, BeliefError> {
        let (r, c) = cell;
        if r >= self.rows || c >= self.cols {
            return Err(BeliefError::CellOutOfBounds(r, c));
        }
        Ok((r * self.cols + c) * self.class_count)
    }

    /// Pseudo-count vector of one cell.
    pub fn beta(&self, cell: Cell) -> Result<&[f64], BeliefError> {
        let off = self.offset(cell)?;
        Ok(&self.beta[off..off + self.class_count])
    }

    /// P(C = k | beta) for one cell: beta_k / sum(beta) in the
    /// single-observation setting.
    pub fn class_posterior(&self, cell: Cell, k: usize) -> Result<f64, BeliefError> {
        let beta = self.beta(cell)?;
        if k >= self.class_count {
            return Err(BeliefError::UnknownClass(k, self.class_count));
        }
        Ok(beta[k] / beta.iter().sum::<f64>())
    }

    /// Fuse one observation's likelihoods into a cell:
    ///
    /// beta_k <- beta_k (1 + lambda_k / sum_j beta_j lambda_j)
    ///                / (1 + min_i lambda_i / sum_j beta_j lambda_j)
    ///
    /// The rule depends on lambda only through ratios, so any positive
    /// rescaling of lambda leaves the update unchanged.
    pub fn kaplan_update(
        &mut self,
        cell: Cell,
        lambda: &LikelihoodVector,
    ) -> Result<(), BeliefError> {
        let off = self.offset(cell)?;
        if lambda.dim() != self.class_count {
            return Err(BeliefError::BadLikelihood(format!(
                "dimension {} does not match {} classes",
                lambda.dim(),
                self.class_count
            )));
        }
        let beta = &mut self.beta[off..off + self.class_count];
        kaplan_update_in_place(beta, lambda.values(), self.beta_cap)
            .map_err(BeliefError::BadLikelihood)
    }

    /// Posterior of class `k` across every cell, as a Y x X row-major map.
    pub fn posterior_map(&self, k: usize) -> Result<Vec<f64>, BeliefError> {
        if k >= self.class_count {
            return Err(BeliefError::UnknownClass(k, self.class_count));
        }
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for chunk in self.beta.chunks_exact(self.class_count) {
            out.push(chunk[k] / chunk.iter().sum::<f64>());
        }
        Ok(out)
    }

    pub fn to_json(&self) -> BeliefGridJson {
        BeliefGridJson {
            rows: self.rows,
            cols: self.cols,
            k: self.class_count,
            beta: self.beta.clone(),
        }
    }

    pub fn from_json(doc: BeliefGridJson) -> Result<Self, BeliefError> {
        if doc.rows == 0 || doc.cols == 0 {
            return Err(BeliefError::EmptyGrid {
                rows: doc.rows,
                cols: doc.cols,
            });
        }
        if doc.beta.len() != doc.rows * doc.cols * doc.k {
            return Err(BeliefError::BadSerialization(format!(
                "beta has {} entries, expected {}",
                doc.beta.len(),
                doc.rows * doc.cols * doc.k
            )));
        }
        if doc.beta.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(BeliefError::BadSerialization(
                "pseudo-counts must be positive".into(),
            ));
        }
        Ok(Self {
            rows: doc.rows,
            cols: doc.cols,
            class_count: doc.k,
            beta_cap: DEFAULT_BETA_CAP,
            beta: doc.beta,
        })
    }
}

/// JSON checkpoint format: {rows, cols, K, beta} with beta flattened
/// row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeliefGridJson {
    pub rows: usize,
    pub cols: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: Vec<f64>,
}

/// The fusion rule on a bare slice; used by the grid and by the predictive
/// map's simulated updates.
pub fn kaplan_update_in_place(beta: &mut [f64], lambda: &[f64], cap: f64) -> Result<(), String> {
    let weighted: f64 = beta.iter().zip(lambda).map(|(b, l)| b * l).sum();
    if !(weighted > 0.0) || !weighted.is_finite() {
        return Err(format!("sum of beta * lambda = {weighted} must be positive"));
    }
    let min_l = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    let denom = 1.0 + min_l / weighted;
    for (b, &l) in beta.iter_mut().zip(lambda) {
        *b = (*b * (1.0 + l / weighted) / denom).min(cap);
    }
    Ok(())
}

/// The compound posterior in its general multinomial form,
/// n! / (sum beta)^n * prod beta_i^{n_i} / n_i!. The engine only ever uses
/// the single-observation case; this is here so tests can check that the
/// closed form agrees with it.
pub fn multinomial_posterior(beta: &[f64], counts: &[u32]) -> f64 {
    let n: u32 = counts.iter().sum();
    let total: f64 = beta.iter().sum();
    let mut v = factorial(n) / total.powi(n as i32);
    for (&b, &c) in beta.iter().zip(counts) {
        v *= b.powi(c as i32) / factorial(c);
    }
    v
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}
