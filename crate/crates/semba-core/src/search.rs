//! The active-perception loop: fuse detections into per-cell beliefs, build
//! the variant-specific attention map, pick the next fixation greedily
//! under inhibition of return, and terminate on oracle hit, truncation or
//! map exhaustion.

use crate::belief::{kaplan_update_in_place, BeliefError, BeliefGrid, ClassCatalog, LikelihoodVector};
use crate::detections::{
    assign_distance_level, cell_center, overlapped_cells, pixel_to_cell, BoundingBox, Detection,
    DetectorAdapter, DetectorError,
};
use crate::fovea::{FocalFrame, FoveaConfig, FoveaError};
use crate::sensor::{SensorModel, SensorModelError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("target class {0} is not in the searchable set")]
    UnknownTarget(usize),
    #[error("variant {0:?} needs a sensor model")]
    MissingSensorModel(Variant),
    #[error("sensor model has {model} classes but the catalog has {catalog}")]
    ModelCatalogMismatch { model: usize, catalog: usize },
    #[error("max_fixations must be >= 1")]
    BadMaxFixations,
    #[error("adapter failed after {} fixations: {source}", partial.fixations.len())]
    AdapterFailure {
        partial: Box<Scanpath>,
        #[source]
        source: DetectorError,
    },
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Fovea(#[from] FoveaError),
    #[error(transparent)]
    Sensor(#[from] SensorModelError),
}

/// Which information updates the beliefs and shapes the attention map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Raw detector scores fused directly.
    Base,
    /// Calibrated Dirichlet likelihoods fused, chosen by distortion level.
    Calib,
    /// Raw scores fused; the map simulates one expected update per cell.
    Pred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleRule {
    /// The fixation pixel lies inside the target box.
    FixationInsideTarget,
    /// The fixation's grid cell intersects the target box.
    CellIntersectsTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub enabled: bool,
    pub rule: OracleRule,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rule: OracleRule::FixationInsideTarget,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub variant: Variant,
    /// Cap on scanpath length, counting the initial fixation.
    pub max_fixations: usize,
    /// Cells inhibited around each visited cell; 1 means a 3x3 block.
    pub ior_radius: usize,
    /// (rows, cols) of the attention grid.
    pub grid_dims: (usize, usize),
    /// Defaults to the image center.
    pub initial_fixation: Option<(f64, f64)>,
    pub oracle: OracleConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Base,
            max_fixations: 7,
            ior_radius: 1,
            grid_dims: (20, 32),
            initial_fixation: None,
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    TargetFound,
    Truncated,
    MapExhausted,
}

/// Real-valued conspicuity grid the selector acts on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major rows x cols values.
    pub values: Vec<f64>,
    pub variant: Variant,
    pub fixation_index: usize,
}

impl AttentionMap {
    pub fn value(&self, cell: (usize, usize)) -> f64 {
        self.values[cell.0 * self.cols + cell.1]
    }
}

/// One executed step: where the gaze was, what was fused, and the map that
/// was built from it.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub fixation: (f64, f64),
    pub cell: (usize, usize),
    pub detections_fused: usize,
    pub map: AttentionMap,
}

/// A finished search episode.
#[derive(Debug, Clone)]
pub struct Scanpath {
    pub image_id: String,
    pub target: usize,
    pub variant: Variant,
    pub fixations: Vec<(f64, f64)>,
    pub cells: Vec<(usize, usize)>,
    pub termination_reason: TerminationReason,
    /// Per-step attention snapshots; not part of the compact JSON form.
    pub steps: Vec<StepRecord>,
}

/// The pinned on-disk form: {image_id, target, fixations, cells,
/// termination_reason, variant}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanpathJson {
    pub image_id: String,
    pub target: usize,
    pub fixations: Vec<[f64; 2]>,
    pub cells: Vec<[usize; 2]>,
    pub termination_reason: TerminationReason,
    pub variant: Variant,
}

impl Scanpath {
    pub fn to_json(&self) -> ScanpathJson {
        ScanpathJson {
            image_id: self.image_id.clone(),
            target: self.target,
            fixations: self.fixations.iter().map(|&(x, y)| [x, y]).collect(),
            cells: self.cells.iter().map(|&(r, c)| [r, c]).collect(),
            termination_reason: self.termination_reason,
            variant: self.variant,
        }
    }

    pub fn found_target(&self) -> bool {
        self.termination_reason == TerminationReason::TargetFound
    }
}

/// What is being searched: an image (or synthetic scene) plus the class
/// looked for and, when known, the ground-truth box the oracle checks.
#[derive(Debug, Clone)]
pub struct SearchSubject {
    pub image_id: String,
    pub image_dims: (u32, u32),
    pub target_class: usize,
    pub target_bbox: Option<BoundingBox>,
}

/// Calibrated likelihood vector for one detection: Dir(S | alpha_{k,d})
/// per class, evaluated in log space and shift-exponentiated so the
/// largest entry is exactly 1. The fusion rule is scale invariant, so this
/// equals using the raw densities without the overflow.
pub fn calibrated_likelihood(
    model: &SensorModel,
    scores: &crate::dirichlet::ScoreSample,
    level: u32,
) -> Result<LikelihoodVector, SearchError> {
    let log_densities = model.log_densities(scores, level)?;
    let max = log_densities
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let lambda: Vec<f64> = log_densities.iter().map(|&ld| (ld - max).exp()).collect();
    Ok(LikelihoodVector::new(lambda)?)
}

/// Expected detector output if the gaze were centered on a cell with the
/// given beliefs: the posterior-weighted mix of the foveal per-class mean
/// score vectors.
pub fn expected_scores(beta: &[f64], foveal_means: &[Vec<f64>]) -> Vec<f64> {
    let total: f64 = beta.iter().sum();
    let k = beta.len();
    let mut sbar = vec![0.0; k];
    for (class, mean) in foveal_means.iter().enumerate() {
        let w = beta[class] / total;
        for (s, &m) in sbar.iter_mut().zip(mean) {
            *s += w * m;
        }
    }
    sbar
}

/// Attention map of the Base variant: the raw posterior of the target
/// class over the grid.
pub fn build_attention_map_base(
    grid: &BeliefGrid,
    target: usize,
    fixation_index: usize,
) -> Result<AttentionMap, SearchError> {
    Ok(AttentionMap {
        rows: grid.rows(),
        cols: grid.cols(),
        values: grid.posterior_map(target)?,
        variant: Variant::Base,
        fixation_index,
    })
}

/// Attention map of the Calib variant. Identical read-out to Base; the
/// calibration enters through the likelihoods fused into the grid.
pub fn build_attention_map_calib(
    grid: &BeliefGrid,
    target: usize,
    fixation_index: usize,
) -> Result<AttentionMap, SearchError> {
    let mut map = build_attention_map_base(grid, target, fixation_index)?;
    map.variant = Variant::Calib;
    Ok(map)
}

/// Attention map of the Pred variant: for every cell, simulate fusing the
/// expected foveal sensor output into a clone of that cell's beliefs and
/// read the target posterior from the clone. The grid itself is untouched.
pub fn build_attention_map_pred(
    grid: &BeliefGrid,
    target: usize,
    model: &SensorModel,
    fixation_index: usize,
) -> Result<AttentionMap, SearchError> {
    if model.class_count != grid.class_count() {
        return Err(SearchError::ModelCatalogMismatch {
            model: model.class_count,
            catalog: grid.class_count(),
        });
    }
    if target >= grid.class_count() {
        return Err(BeliefError::UnknownClass(target, grid.class_count()).into());
    }
    let means = model.foveal_means()?;
    let mut values = Vec::with_capacity(grid.rows() * grid.cols());
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            let beta = grid.beta((r, c))?;
            let sbar = expected_scores(beta, &means);
            let mut clone: Vec<f64> = beta.to_vec();
            kaplan_update_in_place(&mut clone, &sbar, crate::belief::DEFAULT_BETA_CAP)
                .map_err(BeliefError::BadLikelihood)?;
            values.push(clone[target] / clone.iter().sum::<f64>());
        }
    }
    Ok(AttentionMap {
        rows: grid.rows(),
        cols: grid.cols(),
        values,
        variant: Variant::Pred,
        fixation_index,
    })
}

/// Greedy argmax over unmasked cells, ties broken by the lowest row-major
/// index. Returns the winning cell and its center pixel, or None when
/// every cell is masked.
pub fn select_next_fixation(
    map: &AttentionMap,
    ior_mask: &[bool],
    image_dims: (u32, u32),
) -> Option<((usize, usize), (f64, f64))> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in map.values.iter().enumerate() {
        if ior_mask[i] {
            continue;
        }
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| {
        let cell = (i / map.cols, i % map.cols);
        (cell, cell_center(cell, (map.rows, map.cols), image_dims))
    })
}

/// One live search episode: owns the belief grid and the inhibition mask,
/// exposes stepwise observation so ground-truth histories can be replayed
/// through the same machinery.
#[derive(Debug)]
pub struct SearchSession {
    subject: SearchSubject,
    config: SearchConfig,
    fovea: FoveaConfig,
    model: Option<SensorModel>,
    grid: BeliefGrid,
    mask: Vec<bool>,
    fixation_count: usize,
}

impl SearchSession {
    pub fn new(
        subject: SearchSubject,
        catalog: &ClassCatalog,
        config: SearchConfig,
        fovea: FoveaConfig,
        model: Option<SensorModel>,
    ) -> Result<Self, SearchError> {
        if config.max_fixations == 0 {
            return Err(SearchError::BadMaxFixations);
        }
        if !catalog.is_known(subject.target_class) {
            return Err(SearchError::UnknownTarget(subject.target_class));
        }
        if matches!(config.variant, Variant::Calib | Variant::Pred) {
            match &model {
                None => return Err(SearchError::MissingSensorModel(config.variant)),
                Some(m) if m.class_count != catalog.class_count() => {
                    return Err(SearchError::ModelCatalogMismatch {
                        model: m.class_count,
                        catalog: catalog.class_count(),
                    })
                }
                _ => {}
            }
        }
        let (rows, cols) = config.grid_dims;
        let grid = BeliefGrid::new(rows, cols, catalog)?;
        Ok(Self {
            subject,
            config,
            fovea,
            model,
            mask: vec![false; rows * cols],
            grid,
            fixation_count: 0,
        })
    }

    pub fn grid(&self) -> &BeliefGrid {
        &self.grid
    }

    pub fn initial_fixation(&self) -> (f64, f64) {
        self.config.initial_fixation.unwrap_or((
            self.subject.image_dims.0 as f64 / 2.0,
            self.subject.image_dims.1 as f64 / 2.0,
        ))
    }

    pub fn cell_of(&self, fixation: (f64, f64)) -> (usize, usize) {
        pixel_to_cell(fixation, self.config.grid_dims, self.subject.image_dims)
    }

    /// Fuse one fixation's detections into the beliefs: assign distortion
    /// levels, compute the variant's likelihood per detection, and apply it
    /// to every overlapped cell, in detection order. Returns the number of
    /// detections fused.
    pub fn observe(
        &mut self,
        fixation: (f64, f64),
        detections: Vec<Detection>,
    ) -> Result<usize, SearchError> {
        let frame = FocalFrame::new(fixation, self.subject.image_dims, self.fovea.eta)?;
        self.fixation_count += 1;
        let mut fused = 0;
        for det in detections {
            let det = assign_distance_level(det, &frame, &self.fovea);
            let lambda = match self.config.variant {
                Variant::Base | Variant::Pred => {
                    LikelihoodVector::new(det.scores.values().to_vec())?
                }
                Variant::Calib => {
                    let model = self.model.as_ref().expect("checked at construction");
                    calibrated_likelihood(model, &det.scores, det.level.expect("just assigned"))?
                }
            };
            for cell in overlapped_cells(&det.bbox, self.config.grid_dims, self.subject.image_dims)
            {
                self.grid.kaplan_update(cell, &lambda)?;
            }
            fused += 1;
        }
        Ok(fused)
    }

    /// The variant's attention map over the current beliefs.
    pub fn attention_map(&self) -> Result<AttentionMap, SearchError> {
        let index = self.fixation_count.saturating_sub(1);
        match self.config.variant {
            Variant::Base => build_attention_map_base(&self.grid, self.subject.target_class, index),
            Variant::Calib => {
                build_attention_map_calib(&self.grid, self.subject.target_class, index)
            }
            Variant::Pred => build_attention_map_pred(
                &self.grid,
                self.subject.target_class,
                self.model.as_ref().expect("checked at construction"),
                index,
            ),
        }
    }

    /// Permanently inhibit the block of cells around a visited cell.
    pub fn inhibit(&mut self, cell: (usize, usize)) {
        let (rows, cols) = self.config.grid_dims;
        let r = self.config.ior_radius;
        let r0 = cell.0.saturating_sub(r);
        let r1 = (cell.0 + r).min(rows - 1);
        let c0 = cell.1.saturating_sub(r);
        let c1 = (cell.1 + r).min(cols - 1);
        for row in r0..=r1 {
            for col in c0..=c1 {
                self.mask[row * cols + col] = true;
            }
        }
    }

    pub fn ior_mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn select_next(&self, map: &AttentionMap) -> Option<((usize, usize), (f64, f64))> {
        select_next_fixation(map, &self.mask, self.subject.image_dims)
    }

    fn oracle_hit(&self, fixation: (f64, f64)) -> bool {
        if !self.config.oracle.enabled {
            return false;
        }
        let Some(bbox) = &self.subject.target_bbox else {
            return false;
        };
        match self.config.oracle.rule {
            OracleRule::FixationInsideTarget => bbox.contains(fixation),
            OracleRule::CellIntersectsTarget => {
                let cell = self.cell_of(fixation);
                let (rows, cols) = self.config.grid_dims;
                let cw = self.subject.image_dims.0 as f64 / cols as f64;
                let ch = self.subject.image_dims.1 as f64 / rows as f64;
                let x0 = cell.1 as f64 * cw;
                let y0 = cell.0 as f64 * ch;
                bbox.x_max.min(x0 + cw) > bbox.x_min.max(x0)
                    && bbox.y_max.min(y0 + ch) > bbox.y_min.max(y0)
            }
        }
    }
}

/// Run one full search episode against an adapter.
pub fn run_search(
    subject: SearchSubject,
    adapter: &mut dyn DetectorAdapter,
    model: Option<&SensorModel>,
    config: &SearchConfig,
    fovea: &FoveaConfig,
    catalog: &ClassCatalog,
) -> Result<Scanpath, SearchError> {
    let image_id = subject.image_id.clone();
    let target = subject.target_class;
    let variant = config.variant;
    let mut session = SearchSession::new(
        subject,
        catalog,
        config.clone(),
        fovea.clone(),
        model.cloned(),
    )?;

    let mut fixations = Vec::new();
    let mut cells = Vec::new();
    let mut steps = Vec::new();
    let mut fixation = session.initial_fixation();

    let finish = |fixations: Vec<(f64, f64)>,
                  cells: Vec<(usize, usize)>,
                  steps: Vec<StepRecord>,
                  reason: TerminationReason| Scanpath {
        image_id: image_id.clone(),
        target,
        variant,
        fixations,
        cells,
        termination_reason: reason,
        steps,
    };

    loop {
        let cell = session.cell_of(fixation);
        fixations.push(fixation);
        cells.push(cell);

        if session.oracle_hit(fixation) {
            return Ok(finish(fixations, cells, steps, TerminationReason::TargetFound));
        }
        if fixations.len() >= config.max_fixations {
            return Ok(finish(fixations, cells, steps, TerminationReason::Truncated));
        }

        let detections = match adapter.detect(&image_id, fixation) {
            Ok(d) => d,
            Err(source) => {
                return Err(SearchError::AdapterFailure {
                    partial: Box::new(finish(
                        fixations,
                        cells,
                        steps,
                        TerminationReason::Truncated,
                    )),
                    source,
                })
            }
        };
        let fused = session.observe(fixation, detections)?;
        let map = session.attention_map()?;
        steps.push(StepRecord {
            fixation,
            cell,
            detections_fused: fused,
            map: map.clone(),
        });
        session.inhibit(cell);

        match session.select_next(&map) {
            Some((_, next)) => fixation = next,
            None => {
                return Ok(finish(fixations, cells, steps, TerminationReason::MapExhausted))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::{DirichletParams, ScoreSample};

    fn catalog() -> ClassCatalog {
        ClassCatalog::generic(2).unwrap()
    }

    fn flat_map(rows: usize, cols: usize) -> AttentionMap {
        AttentionMap {
            rows,
            cols,
            values: vec![0.5; rows * cols],
            variant: Variant::Base,
            fixation_index: 0,
        }
    }

    #[test]
    fn selector_takes_argmax_and_breaks_ties_row_major() {
        let mut map = flat_map(6, 8);
        map.values[3 * 8 + 5] = 0.9;
        let mask = vec![false; 48];
        let (cell, pixel) = select_next_fixation(&map, &mask, (800, 600)).unwrap();
        assert_eq!(cell, (3, 5));
        assert_eq!(pixel, (5.5 * 100.0, 3.5 * 100.0));

        // Exact tie between (0,0) and (5,5): lowest row-major wins.
        let mut map = flat_map(6, 8);
        map.values[0] = 0.9;
        map.values[5 * 8 + 5] = 0.9;
        let (cell, _) = select_next_fixation(&map, &mask, (800, 600)).unwrap();
        assert_eq!(cell, (0, 0));
    }

    #[test]
    fn masked_peak_falls_back_to_second_best() {
        let mut map = flat_map(4, 4);
        map.values[5] = 0.9;
        map.values[10] = 0.8;
        let mut mask = vec![false; 16];
        mask[5] = true;
        let (cell, _) = select_next_fixation(&map, &mask, (400, 400)).unwrap();
        assert_eq!(cell, (2, 2));

        let all_masked = vec![true; 16];
        assert!(select_next_fixation(&map, &all_masked, (400, 400)).is_none());
    }

    #[test]
    fn expected_scores_hand_case() {
        // K=2, flat beliefs, means (0.9,0.1) and (0.2,0.8) -> (0.55, 0.45).
        let sbar = expected_scores(&[1.0, 1.0], &[vec![0.9, 0.1], vec![0.2, 0.8]]);
        assert!((sbar[0] - 0.55).abs() < 1e-12);
        assert!((sbar[1] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn calibrated_likelihood_worked_example() {
        // alpha_1 = (2,1), alpha_2 = (1,2), S = (0.5, 0.5): both densities
        // are 1.0, so lambda is uniform and fusing it changes nothing.
        let bins = vec![
            vec![DirichletParams::new(vec![2.0, 1.0]).unwrap()],
            vec![DirichletParams::new(vec![1.0, 2.0]).unwrap()],
        ];
        let model = SensorModel::new(
            0.156,
            vec!["a".into(), "b".into()],
            bins,
            vec![vec![crate::sensor::BinDiagnostics::fallback(0)]; 2],
        )
        .unwrap();
        let s = ScoreSample::new(vec![0.5, 0.5]).unwrap();
        let lambda = calibrated_likelihood(&model, &s, 1).unwrap();
        assert!((lambda.values()[0] - 1.0).abs() < 1e-12);
        assert!((lambda.values()[1] - 1.0).abs() < 1e-12);

        let mut grid = BeliefGrid::new(1, 1, &catalog()).unwrap();
        grid.kaplan_update((0, 0), &lambda).unwrap();
        assert_eq!(grid.beta((0, 0)).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn pred_map_flat_sensor_equals_posterior_map() {
        let model = SensorModel::flat(2, 1, 0.156);
        let mut grid = BeliefGrid::new(2, 2, &catalog()).unwrap();
        grid.kaplan_update((0, 1), &LikelihoodVector::new(vec![0.9, 0.1]).unwrap())
            .unwrap();
        let pred = build_attention_map_pred(&grid, 0, &model, 0).unwrap();
        let base = build_attention_map_base(&grid, 0, 0).unwrap();
        for (p, b) in pred.values.iter().zip(&base.values) {
            assert!((p - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pred_map_leaves_grid_untouched() {
        let model = SensorModel::flat(2, 1, 0.156);
        let mut grid = BeliefGrid::new(3, 3, &catalog()).unwrap();
        grid.kaplan_update((1, 1), &LikelihoodVector::new(vec![0.7, 0.3]).unwrap())
            .unwrap();
        let before = serde_json::to_string(&grid.to_json()).unwrap();
        let _ = build_attention_map_pred(&grid, 1, &model, 0).unwrap();
        let after = serde_json::to_string(&grid.to_json()).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn session_rejects_bad_setups() {
        let cat = ClassCatalog::new(vec!["a".into(), "b".into(), "c".into()], vec![0, 1]).unwrap();
        let subject = SearchSubject {
            image_id: "img".into(),
            image_dims: (100, 100),
            target_class: 2, // not in the known set
            target_bbox: None,
        };
        let err = SearchSession::new(
            subject.clone(),
            &cat,
            SearchConfig::default(),
            FoveaConfig::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, SearchError::UnknownTarget(2)));

        let mut subject = subject;
        subject.target_class = 0;
        let mut config = SearchConfig::default();
        config.variant = Variant::Pred;
        let err = SearchSession::new(subject, &cat, config, FoveaConfig::default(), None)
            .unwrap_err();
        assert!(matches!(err, SearchError::MissingSensorModel(Variant::Pred)));
    }

    #[test]
    fn scanpath_json_shape() {
        let path = Scanpath {
            image_id: "img7".into(),
            target: 3,
            variant: Variant::Pred,
            fixations: vec![(10.0, 20.0), (30.5, 40.5)],
            cells: vec![(0, 0), (1, 1)],
            termination_reason: TerminationReason::TargetFound,
            steps: Vec::new(),
        };
        let text = serde_json::to_string(&path.to_json()).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["image_id"], "img7");
        assert_eq!(value["target"], 3);
        assert_eq!(value["variant"], "pred");
        assert_eq!(value["termination_reason"], "target_found");
        assert_eq!(value["fixations"][1][0], 30.5);
        assert_eq!(value["cells"][1][1], 1);
    }
}
