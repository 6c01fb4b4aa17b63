//! The calibrated sensor model: a K x D table of Dirichlet parameters
//! describing detector score distributions per true class and peripheral
//! distortion level, plus its JSON file format. This file is the contract
//! between the calibration trainer and the search engine.

use crate::dirichlet::{DirichletError, DirichletParams, ScoreSample};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SensorModelError {
    #[error("table must have K >= 2 class rows, got {0}")]
    TooFewClasses(usize),
    #[error("class {class} has {got} level bins, expected {expected}")]
    RaggedTable {
        class: usize,
        got: usize,
        expected: usize,
    },
    #[error("bin (class {class}, level {level}) has dimension {got}, expected {expected}")]
    BadBinDimension {
        class: usize,
        level: u32,
        got: usize,
        expected: usize,
    },
    #[error("class names count {0} does not match K = {1}")]
    BadNames(usize, usize),
    #[error("level {0} outside 1..={1}")]
    LevelOutOfRange(u32, u32),
    #[error("unknown class {0}")]
    UnknownClass(usize),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    #[error("failed to parse calibration file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convergence diagnostics for one fitted bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinDiagnostics {
    pub samples: usize,
    pub iterations: usize,
    pub converged: bool,
    /// True when the bin had too few samples and fell back to the flat
    /// Dirichlet.
    pub fallback: bool,
}

impl BinDiagnostics {
    pub fn fallback(samples: usize) -> Self {
        Self {
            samples,
            iterations: 0,
            converged: false,
            fallback: true,
        }
    }
}

/// Fitted K x D Dirichlet table with per-bin sample counts and fit
/// diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorModel {
    #[serde(rename = "K")]
    pub class_count: usize,
    #[serde(rename = "D")]
    pub distortion_levels: u32,
    pub eta: f64,
    pub class_names: Vec<String>,
    /// bins[k][d-1] is the Dirichlet for true class k at distortion level d.
    pub bins: Vec<Vec<DirichletParams>>,
    pub diagnostics: Vec<Vec<BinDiagnostics>>,
}

impl SensorModel {
    pub fn new(
        eta: f64,
        class_names: Vec<String>,
        bins: Vec<Vec<DirichletParams>>,
        diagnostics: Vec<Vec<BinDiagnostics>>,
    ) -> Result<Self, SensorModelError> {
        let class_count = bins.len();
        let distortion_levels = bins.first().map(|r| r.len()).unwrap_or(0) as u32;
        let model = Self {
            class_count,
            distortion_levels,
            eta,
            class_names,
            bins,
            diagnostics,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), SensorModelError> {
        if self.class_count < 2 {
            return Err(SensorModelError::TooFewClasses(self.class_count));
        }
        if self.class_names.len() != self.class_count {
            return Err(SensorModelError::BadNames(
                self.class_names.len(),
                self.class_count,
            ));
        }
        for (k, row) in self.bins.iter().enumerate() {
            if row.len() != self.distortion_levels as usize {
                return Err(SensorModelError::RaggedTable {
                    class: k,
                    got: row.len(),
                    expected: self.distortion_levels as usize,
                });
            }
            for (d0, params) in row.iter().enumerate() {
                if params.dim() != self.class_count {
                    return Err(SensorModelError::BadBinDimension {
                        class: k,
                        level: d0 as u32 + 1,
                        got: params.dim(),
                        expected: self.class_count,
                    });
                }
            }
        }
        Ok(())
    }

    /// Flat model: every bin is the all-ones Dirichlet. Useful as a
    /// no-information stand-in.
    pub fn flat(class_count: usize, distortion_levels: u32, eta: f64) -> Self {
        let names = (0..class_count).map(|i| format!("class_{i:02}")).collect();
        let bins =
            vec![vec![DirichletParams::flat(class_count); distortion_levels as usize]; class_count];
        let diagnostics =
            vec![vec![BinDiagnostics::fallback(0); distortion_levels as usize]; class_count];
        Self {
            class_count,
            distortion_levels,
            eta,
            class_names: names,
            bins,
            diagnostics,
        }
    }

    pub fn params(&self, class: usize, level: u32) -> Result<&DirichletParams, SensorModelError> {
        if class >= self.class_count {
            return Err(SensorModelError::UnknownClass(class));
        }
        if level < 1 || level > self.distortion_levels {
            return Err(SensorModelError::LevelOutOfRange(
                level,
                self.distortion_levels,
            ));
        }
        Ok(&self.bins[class][(level - 1) as usize])
    }

    /// log Dir(S | alpha_{k,d}) for every class k at a fixed level.
    pub fn log_densities(
        &self,
        scores: &ScoreSample,
        level: u32,
    ) -> Result<Vec<f64>, SensorModelError> {
        let mut out = Vec::with_capacity(self.class_count);
        for k in 0..self.class_count {
            out.push(self.params(k, level)?.log_density(scores)?);
        }
        Ok(out)
    }

    /// Mean detector output per class at the foveal level d = 1:
    /// row k is alpha_{k,1} / sum(alpha_{k,1}).
    pub fn foveal_means(&self) -> Result<Vec<Vec<f64>>, SensorModelError> {
        (0..self.class_count)
            .map(|k| Ok(self.params(k, 1)?.mean()))
            .collect()
    }

    /// Number of bins that fell back to the flat prior during fitting.
    pub fn fallback_count(&self) -> usize {
        self.diagnostics
            .iter()
            .flatten()
            .filter(|d| d.fallback)
            .count()
    }

    pub fn to_json_string(&self) -> Result<String, SensorModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self, SensorModelError> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SensorModelError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
