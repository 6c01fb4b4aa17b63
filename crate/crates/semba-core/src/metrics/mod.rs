//! Scanpath and next-fixation evaluation: sequence score, fixation edit
//! distance, their semantic variants, scanpath ratio, and the conditional
//! saliency metrics (cNSS, cIG, cAUC) with the baseline fixation density.

mod cluster;

pub use cluster::{ClusterAssignment, SemanticLabeling, BACKGROUND_LABEL};

use crate::detections::{pixel_to_cell, BoundingBox};
use crate::search::{AttentionMap, Scanpath};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Machine-epsilon regularizer inside the information-gain logs.
pub const IG_EPSILON: f64 = 2.2e-16;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("attention map is constant; cNSS is undefined")]
    ZeroVarianceMap,
    #[error("baseline density has wrong shape: {got_rows}x{got_cols}, expected {rows}x{cols}")]
    BaselineShape {
        got_rows: usize,
        got_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error(
        "predicted/human corpora do not cover the same images \
         (predicted without human: {missing_human:?}; human without predicted: {missing_predicted:?})"
    )]
    ImageMismatch {
        missing_human: Vec<String>,
        missing_predicted: Vec<String>,
    },
    #[error("no fixations to build a baseline from")]
    EmptyBaseline,
    #[error("image {0} has no annotation entry")]
    MissingAnnotation(String),
}

/// Needleman-Wunsch global alignment score with the scanpath-metric
/// scheme: match +1, mismatch -1, gap -1.
pub fn needleman_wunsch(a: &[u32], b: &[u32]) -> i64 {
    const MATCH: i64 = 1;
    const MISMATCH: i64 = -1;
    const GAP: i64 = -1;
    let mut prev: Vec<i64> = (0..=b.len() as i64).map(|j| j * GAP).collect();
    let mut row = vec![0i64; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        row[0] = (i as i64 + 1) * GAP;
        for (j, &cb) in b.iter().enumerate() {
            let diag = prev[j] + if ca == cb { MATCH } else { MISMATCH };
            row[j + 1] = diag.max(prev[j + 1] + GAP).max(row[j] + GAP);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// Sequence Score: NW alignment clipped at zero and normalized by the
/// longer sequence. Two empty sequences are defined as 1.0, one empty as 0.
pub fn sequence_score(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let nw = needleman_wunsch(a, b);
    (nw.max(0) as f64) / (a.len().max(b.len()) as f64)
}

/// Fixation Edit Distance: unit-cost Levenshtein distance.
pub fn fixation_edit_distance(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut row = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            row[j + 1] = sub.min(prev[j + 1] + 1).min(row[j] + 1);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// Semantic Sequence Score: the same alignment on object-label strings.
pub fn semantic_sequence_score(a: &[u32], b: &[u32]) -> f64 {
    sequence_score(a, b)
}

/// Semantic Fixation Edit Distance: Levenshtein on object-label strings.
pub fn semantic_fed(a: &[u32], b: &[u32]) -> usize {
    fixation_edit_distance(a, b)
}

/// Scanpath Ratio: straight-line distance from the initial fixation to the
/// target center, divided by the traveled path length. Undefined (None)
/// for paths with fewer than two fixations.
pub fn scanpath_ratio(fixations: &[(f64, f64)], target_center: (f64, f64)) -> Option<f64> {
    if fixations.len() < 2 {
        return None;
    }
    let traveled: f64 = fixations
        .windows(2)
        .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .sum();
    if traveled <= 0.0 {
        return None;
    }
    let straight = ((target_center.0 - fixations[0].0).powi(2)
        + (target_center.1 - fixations[0].1).powi(2))
    .sqrt();
    Some(straight / traveled)
}

/// Conditional NSS: the map value at the ground-truth cell after
/// normalizing the map to zero mean and unit (population) variance.
pub fn cnss(map: &AttentionMap, gt_cell: (usize, usize)) -> Result<f64, MetricsError> {
    let n = map.values.len() as f64;
    let mean = map.values.iter().sum::<f64>() / n;
    let var = map.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(MetricsError::ZeroVarianceMap);
    }
    Ok((map.value(gt_cell) - mean) / var.sqrt())
}

/// Grid-shaped probability map built from a training fixation corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineDensity {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, non-negative, sums to 1.
    pub values: Vec<f64>,
}

impl BaselineDensity {
    pub fn value(&self, cell: (usize, usize)) -> f64 {
        self.values[cell.0 * self.cols + cell.1]
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self {
            rows,
            cols,
            values: vec![1.0 / n as f64; n],
        }
    }
}

/// Average the per-fixation Gaussian density bumps (sigma in pixels, one
/// visual degree equivalent) over the grid and normalize.
pub fn build_baseline_density(
    fixations: &[(f64, f64)],
    image_dims: (u32, u32),
    grid_dims: (usize, usize),
    sigma_px: f64,
) -> Result<BaselineDensity, MetricsError> {
    if fixations.is_empty() {
        return Err(MetricsError::EmptyBaseline);
    }
    let (rows, cols) = grid_dims;
    let cell_w = image_dims.0 as f64 / cols as f64;
    let cell_h = image_dims.1 as f64 / rows as f64;
    let mut acc = vec![0.0f64; rows * cols];
    let mut bump = vec![0.0f64; rows * cols];
    for &(fx, fy) in fixations {
        let mut total = 0.0;
        for r in 0..rows {
            let cy = (r as f64 + 0.5) * cell_h;
            for c in 0..cols {
                let cx = (c as f64 + 0.5) * cell_w;
                let d2 = (cx - fx).powi(2) + (cy - fy).powi(2);
                let v = (-d2 / (2.0 * sigma_px * sigma_px)).exp();
                bump[r * cols + c] = v;
                total += v;
            }
        }
        for (a, b) in acc.iter_mut().zip(&bump) {
            *a += b / total;
        }
    }
    let total: f64 = acc.iter().sum();
    for v in &mut acc {
        *v /= total;
    }
    Ok(BaselineDensity {
        rows,
        cols,
        values: acc,
    })
}

/// Conditional Information Gain in bits: log2 of the map's probability at
/// the ground-truth cell against the baseline's.
pub fn cig(
    map: &AttentionMap,
    gt_cell: (usize, usize),
    baseline: &BaselineDensity,
) -> Result<f64, MetricsError> {
    if baseline.rows != map.rows || baseline.cols != map.cols {
        return Err(MetricsError::BaselineShape {
            got_rows: baseline.rows,
            got_cols: baseline.cols,
            rows: map.rows,
            cols: map.cols,
        });
    }
    let total: f64 = map.values.iter().sum();
    let p_map = map.value(gt_cell) / total;
    let p_base = baseline.value(gt_cell);
    Ok(((p_map + IG_EPSILON) / (p_base + IG_EPSILON)).log2())
}

/// Conditional AUC (AUC-Judd) with the single ground-truth cell as the
/// positive: the fraction of negative cells strictly below it, ties
/// counting half.
pub fn cauc(map: &AttentionMap, gt_cell: (usize, usize)) -> f64 {
    let gt = map.value(gt_cell);
    let gt_index = gt_cell.0 * map.cols + gt_cell.1;
    let mut below = 0usize;
    let mut ties = 0usize;
    let mut negatives = 0usize;
    for (i, &v) in map.values.iter().enumerate() {
        if i == gt_index {
            continue;
        }
        negatives += 1;
        if v < gt {
            below += 1;
        } else if v == gt {
            ties += 1;
        }
    }
    if negatives == 0 {
        return 0.5;
    }
    (below as f64 + 0.5 * ties as f64) / negatives as f64
}

/// One human scanpath: {image_id, subject, target, fixations}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanScanpath {
    pub image_id: String,
    pub subject: String,
    pub target: usize,
    pub fixations: Vec<[f64; 2]>,
}

impl HumanScanpath {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.fixations.iter().map(|&[x, y]| (x, y)).collect()
    }
}

/// Ground truth for one image: dimensions, annotated objects, and the
/// target box when known.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image_dims: (u32, u32),
    pub objects: Vec<(u32, BoundingBox)>,
    pub target_bbox: Option<BoundingBox>,
}

/// A map conditioned on a ground-truth fixation history, paired with the
/// cell of the next ground-truth fixation it should have predicted.
#[derive(Debug, Clone)]
pub struct ConditionalSample {
    pub map: AttentionMap,
    pub next_cell: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct EvaluationInputs<'a> {
    pub predicted: &'a [Scanpath],
    pub human: &'a [HumanScanpath],
    pub annotations: &'a BTreeMap<String, ImageAnnotation>,
    pub conditional: &'a [ConditionalSample],
    pub baseline: Option<&'a BaselineDensity>,
    pub grid_dims: (usize, usize),
    /// Mean-shift bandwidth in pixels when clustering on the human corpus;
    /// None engages the grid-cell fallback clustering.
    pub cluster_bandwidth: Option<f64>,
}

/// Averaged metric values for one model row.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub ss: Option<f64>,
    pub fed: Option<f64>,
    pub sem_ss: Option<f64>,
    pub sem_fed: Option<f64>,
    pub sr: Option<f64>,
    pub cnss: Option<f64>,
    pub cig: Option<f64>,
    pub cauc: Option<f64>,
}

/// Full evaluation report: computed rows plus any ingested reference rows,
/// rendered as a text table mirroring the usual benchmark layout.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub images: usize,
    pub conditional_samples: usize,
}

impl MetricReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let header = format!(
            "{:<28} | {:>6} {:>7} {:>7} {:>8} {:>6} | {:>7} {:>7} {:>7}\n",
            "Model", "SS", "FED", "SemSS", "SemFED", "SR", "cNSS", "cIG", "cAUC"
        );
        let rule = "-".repeat(header.len() - 1);
        out.push_str(&header);
        out.push_str(&rule);
        out.push('\n');
        let fmt = |v: Option<f64>, width: usize| -> String {
            match v {
                Some(x) => format!("{:>width$.3}", x, width = width),
                None => format!("{:>width$}", "-", width = width),
            }
        };
        for row in &self.rows {
            out.push_str(&format!(
                "{:<28} | {} {} {} {} {} | {} {} {}\n",
                row.label,
                fmt(row.ss, 6),
                fmt(row.fed, 7),
                fmt(row.sem_ss, 7),
                fmt(row.sem_fed, 8),
                fmt(row.sr, 6),
                fmt(row.cnss, 7),
                fmt(row.cig, 7),
                fmt(row.cauc, 7),
            ));
        }
        out
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Aggregate every metric over a predicted-vs-human corpus: SS / FED /
/// SemSS / SemFED averaged over (predicted, subject) pairs per image and
/// then over images, SR over successful predicted trials, and the
/// conditional metrics over the provided replayed samples.
pub fn evaluate_run(inputs: &EvaluationInputs, label: &str) -> Result<MetricReport, MetricsError> {
    let predicted_images: BTreeSet<&str> =
        inputs.predicted.iter().map(|p| p.image_id.as_str()).collect();
    let human_images: BTreeSet<&str> =
        inputs.human.iter().map(|h| h.image_id.as_str()).collect();
    let missing_human: Vec<String> = predicted_images
        .difference(&human_images)
        .map(|s| s.to_string())
        .collect();
    let missing_predicted: Vec<String> = human_images
        .difference(&predicted_images)
        .map(|s| s.to_string())
        .collect();
    if !missing_human.is_empty() || !missing_predicted.is_empty() {
        return Err(MetricsError::ImageMismatch {
            missing_human,
            missing_predicted,
        });
    }

    let mut per_image_ss = Vec::new();
    let mut per_image_fed = Vec::new();
    let mut per_image_sem_ss = Vec::new();
    let mut per_image_sem_fed = Vec::new();
    let mut srs = Vec::new();

    for image in &predicted_images {
        let annotation = inputs
            .annotations
            .get(*image)
            .ok_or_else(|| MetricsError::MissingAnnotation(image.to_string()))?;
        let humans: Vec<&HumanScanpath> = inputs
            .human
            .iter()
            .filter(|h| h.image_id == *image)
            .collect();
        let preds: Vec<&Scanpath> = inputs
            .predicted
            .iter()
            .filter(|p| p.image_id == *image)
            .collect();

        let corpus: Vec<(f64, f64)> = match inputs.cluster_bandwidth {
            Some(_) => humans.iter().flat_map(|h| h.points()).collect(),
            None => Vec::new(),
        };
        let clusters = ClusterAssignment::build(
            &corpus,
            inputs.cluster_bandwidth.unwrap_or(60.0),
            inputs.grid_dims,
            annotation.image_dims,
        );
        let labeling = SemanticLabeling::new(&annotation.objects);

        let mut ss_pairs = Vec::new();
        let mut fed_pairs = Vec::new();
        let mut sem_ss_pairs = Vec::new();
        let mut sem_fed_pairs = Vec::new();
        for pred in &preds {
            let pred_clusters = clusters.sequence(&pred.fixations);
            let pred_labels = labeling.sequence(&pred.fixations);
            for human in &humans {
                let h_points = human.points();
                let h_clusters = clusters.sequence(&h_points);
                let h_labels = labeling.sequence(&h_points);
                ss_pairs.push(sequence_score(&pred_clusters, &h_clusters));
                fed_pairs.push(fixation_edit_distance(&pred_clusters, &h_clusters) as f64);
                sem_ss_pairs.push(semantic_sequence_score(&pred_labels, &h_labels));
                sem_fed_pairs.push(semantic_fed(&pred_labels, &h_labels) as f64);
            }
            if pred.found_target() {
                if let Some(bbox) = &annotation.target_bbox {
                    if let Some(sr) = scanpath_ratio(&pred.fixations, bbox.center()) {
                        srs.push(sr);
                    }
                }
            }
        }
        per_image_ss.extend(mean(&ss_pairs));
        per_image_fed.extend(mean(&fed_pairs));
        per_image_sem_ss.extend(mean(&sem_ss_pairs));
        per_image_sem_fed.extend(mean(&sem_fed_pairs));
    }

    let mut cnss_values = Vec::new();
    let mut cig_values = Vec::new();
    let mut cauc_values = Vec::new();
    for sample in inputs.conditional {
        cnss_values.push(cnss(&sample.map, sample.next_cell)?);
        if let Some(baseline) = inputs.baseline {
            cig_values.push(cig(&sample.map, sample.next_cell, baseline)?);
        }
        cauc_values.push(cauc(&sample.map, sample.next_cell));
    }

    Ok(MetricReport {
        rows: vec![MetricRow {
            label: label.to_string(),
            ss: mean(&per_image_ss),
            fed: mean(&per_image_fed),
            sem_ss: mean(&per_image_sem_ss),
            sem_fed: mean(&per_image_sem_fed),
            sr: mean(&srs),
            cnss: mean(&cnss_values),
            cig: mean(&cig_values),
            cauc: mean(&cauc_values),
        }],
        images: predicted_images.len(),
        conditional_samples: inputs.conditional.len(),
    })
}

/// Leave-one-subject-out consistency of the human corpus itself: each
/// subject's path scored against every peer path on the same image.
pub fn human_consistency(
    human: &[HumanScanpath],
    annotations: &BTreeMap<String, ImageAnnotation>,
    grid_dims: (usize, usize),
    cluster_bandwidth: Option<f64>,
) -> Result<MetricRow, MetricsError> {
    let images: BTreeSet<&str> = human.iter().map(|h| h.image_id.as_str()).collect();
    let mut per_image_ss = Vec::new();
    let mut per_image_fed = Vec::new();
    let mut per_image_sem_ss = Vec::new();
    let mut per_image_sem_fed = Vec::new();
    let mut srs = Vec::new();

    for image in images {
        let annotation = annotations
            .get(image)
            .ok_or_else(|| MetricsError::MissingAnnotation(image.to_string()))?;
        let subjects: Vec<&HumanScanpath> =
            human.iter().filter(|h| h.image_id == image).collect();
        if subjects.len() < 2 {
            continue;
        }
        let corpus: Vec<(f64, f64)> = match cluster_bandwidth {
            Some(_) => subjects.iter().flat_map(|h| h.points()).collect(),
            None => Vec::new(),
        };
        let clusters = ClusterAssignment::build(
            &corpus,
            cluster_bandwidth.unwrap_or(60.0),
            grid_dims,
            annotation.image_dims,
        );
        let labeling = SemanticLabeling::new(&annotation.objects);

        let mut ss_pairs = Vec::new();
        let mut fed_pairs = Vec::new();
        let mut sem_ss_pairs = Vec::new();
        let mut sem_fed_pairs = Vec::new();
        for (i, subject) in subjects.iter().enumerate() {
            let s_points = subject.points();
            let s_clusters = clusters.sequence(&s_points);
            let s_labels = labeling.sequence(&s_points);
            for (j, peer) in subjects.iter().enumerate() {
                if i == j {
                    continue;
                }
                let p_points = peer.points();
                let p_clusters = clusters.sequence(&p_points);
                let p_labels = labeling.sequence(&p_points);
                ss_pairs.push(sequence_score(&s_clusters, &p_clusters));
                fed_pairs.push(fixation_edit_distance(&s_clusters, &p_clusters) as f64);
                sem_ss_pairs.push(semantic_sequence_score(&s_labels, &p_labels));
                sem_fed_pairs.push(semantic_fed(&s_labels, &p_labels) as f64);
            }
            if let Some(bbox) = &annotation.target_bbox {
                let points = subject.points();
                if points.last().is_some_and(|&p| bbox.contains(p)) {
                    if let Some(sr) = scanpath_ratio(&points, bbox.center()) {
                        srs.push(sr);
                    }
                }
            }
        }
        per_image_ss.extend(mean(&ss_pairs));
        per_image_fed.extend(mean(&fed_pairs));
        per_image_sem_ss.extend(mean(&sem_ss_pairs));
        per_image_sem_fed.extend(mean(&sem_fed_pairs));
    }

    Ok(MetricRow {
        label: "Human Consistency".to_string(),
        ss: mean(&per_image_ss),
        fed: mean(&per_image_fed),
        sem_ss: mean(&per_image_sem_ss),
        sem_fed: mean(&per_image_sem_fed),
        sr: mean(&srs),
        cnss: None,
        cig: None,
        cauc: None,
    })
}

/// Cell of a ground-truth fixation on the attention grid.
pub fn fixation_cell(
    fixation: (f64, f64),
    grid_dims: (usize, usize),
    image_dims: (u32, u32),
) -> (usize, usize) {
    pixel_to_cell(fixation, grid_dims, image_dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::Variant;

    fn map(rows: usize, cols: usize, values: Vec<f64>) -> AttentionMap {
        AttentionMap {
            rows,
            cols,
            values,
            variant: Variant::Base,
            fixation_index: 0,
        }
    }

    #[test]
    fn sequence_score_hand_cases() {
        assert_eq!(sequence_score(&[0, 1, 2], &[0, 1, 2]), 1.0);
        let s = sequence_score(&[0, 1, 2], &[0, 1, 3]);
        assert!((s - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(sequence_score(&[0], &[1]), 0.0);
        assert_eq!(sequence_score(&[], &[]), 1.0);
        assert_eq!(sequence_score(&[], &[0, 1]), 0.0);
    }

    #[test]
    fn edit_distance_hand_cases() {
        assert_eq!(fixation_edit_distance(&[0, 1, 2], &[0, 1, 2]), 0);
        assert_eq!(fixation_edit_distance(&[], &[0, 1, 2]), 3);
        assert_eq!(fixation_edit_distance(&[0, 1, 2], &[0, 9, 2]), 1);
    }

    #[test]
    fn scanpath_ratio_cases() {
        // Straight saccade onto the target center.
        let sr = scanpath_ratio(&[(0.0, 0.0), (30.0, 40.0)], (30.0, 40.0)).unwrap();
        assert!((sr - 1.0).abs() < 1e-12);

        // Two legs totalling twice the straight-line distance.
        let y = (18.75f64).sqrt();
        let sr = scanpath_ratio(&[(0.0, 0.0), (2.5, y), (5.0, 0.0)], (5.0, 0.0)).unwrap();
        assert!((sr - 0.5).abs() < 1e-12);

        assert!(scanpath_ratio(&[(3.0, 3.0)], (0.0, 0.0)).is_none());
    }

    #[test]
    fn cnss_hand_case() {
        let m = map(2, 2, vec![1.0, 3.0, 1.0, 3.0]);
        let v = cnss(&m, (0, 1)).unwrap();
        assert!((v - 1.0).abs() < 1e-12);

        let constant = map(2, 2, vec![0.4; 4]);
        assert!(matches!(
            cnss(&constant, (0, 0)),
            Err(MetricsError::ZeroVarianceMap)
        ));
    }

    #[test]
    fn cig_hand_cases() {
        // Map identical to baseline: exactly zero everywhere.
        let base = BaselineDensity::uniform(2, 2);
        let m = map(2, 2, vec![0.25; 4]);
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(cig(&m, (r, c), &base).unwrap(), 0.0);
            }
        }
        // Two-cell doubling case: model (2/3, 1/3) vs base (1/2, 1/2).
        let base = BaselineDensity {
            rows: 1,
            cols: 2,
            values: vec![0.5, 0.5],
        };
        let m = map(1, 2, vec![2.0 / 3.0, 1.0 / 3.0]);
        let v = cig(&m, (0, 0), &base).unwrap();
        assert!((v - (4.0f64 / 3.0).log2()).abs() < 1e-9);

        // Near-zero model mass is strongly negative.
        let m = map(1, 2, vec![1e-12, 1.0]);
        assert!(cig(&m, (0, 0), &base).unwrap() < -10.0);
    }

    #[test]
    fn cauc_hand_cases() {
        let m = map(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        assert!((cauc(&m, (1, 0)) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(cauc(&m, (1, 1)), 1.0);
        let constant = map(2, 2, vec![0.5; 4]);
        assert_eq!(cauc(&constant, (0, 0)), 0.5);
    }

    #[test]
    fn baseline_density_properties() {
        // Fixation inside cell (9, 15), clear of all cell boundaries.
        let d = build_baseline_density(&[(311.0, 229.0)], (640, 480), (20, 32), 35.0).unwrap();
        let total: f64 = d.values.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let argmax = d
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let center = pixel_to_cell((311.0, 229.0), (20, 32), (640, 480));
        assert_eq!(argmax, center.0 * 32 + center.1);

        assert!(matches!(
            build_baseline_density(&[], (640, 480), (20, 32), 35.0),
            Err(MetricsError::EmptyBaseline)
        ));
    }

    #[test]
    fn report_table_renders_reference_rows() {
        let report = MetricReport {
            rows: vec![
                MetricRow {
                    label: "ours".into(),
                    ss: Some(0.5),
                    fed: Some(2.0),
                    sem_ss: None,
                    sem_fed: None,
                    sr: Some(0.9),
                    cnss: Some(1.5),
                    cig: None,
                    cauc: Some(0.88),
                },
                MetricRow {
                    label: "reference".into(),
                    ss: Some(0.413),
                    fed: Some(2.616),
                    sem_ss: Some(0.431),
                    sem_fed: Some(2.272),
                    sr: Some(0.742),
                    cnss: Some(2.375),
                    cig: Some(0.326),
                    cauc: Some(0.914),
                },
            ],
            images: 1,
            conditional_samples: 0,
        };
        let table = report.render_table();
        assert!(table.contains("0.413"));
        assert!(table.contains("2.616"));
        assert!(table.lines().count() >= 4);
    }

    #[test]
    fn evaluate_run_self_comparison_is_perfect() {
        use crate::search::TerminationReason;
        let fixations = vec![(100.0, 100.0), (300.0, 200.0), (500.0, 400.0)];
        let predicted = vec![Scanpath {
            image_id: "img".into(),
            target: 0,
            variant: Variant::Base,
            fixations: fixations.clone(),
            cells: vec![],
            termination_reason: TerminationReason::TargetFound,
            steps: vec![],
        }];
        let human = vec![HumanScanpath {
            image_id: "img".into(),
            subject: "s1".into(),
            target: 0,
            fixations: fixations.iter().map(|&(x, y)| [x, y]).collect(),
        }];
        let mut annotations = BTreeMap::new();
        annotations.insert(
            "img".to_string(),
            ImageAnnotation {
                image_dims: (640, 480),
                objects: vec![(0, BoundingBox::new(480.0, 380.0, 520.0, 420.0).unwrap())],
                target_bbox: Some(BoundingBox::new(480.0, 380.0, 520.0, 420.0).unwrap()),
            },
        );
        let inputs = EvaluationInputs {
            predicted: &predicted,
            human: &human,
            annotations: &annotations,
            conditional: &[],
            baseline: None,
            grid_dims: (20, 32),
            cluster_bandwidth: None,
        };
        let report = evaluate_run(&inputs, "self").unwrap();
        let row = &report.rows[0];
        assert_eq!(row.ss, Some(1.0));
        assert_eq!(row.fed, Some(0.0));
        assert_eq!(row.sem_ss, Some(1.0));
        assert_eq!(row.sem_fed, Some(0.0));
    }

    #[test]
    fn evaluate_run_reports_mismatches() {
        let predicted = vec![Scanpath {
            image_id: "only_predicted".into(),
            target: 0,
            variant: Variant::Base,
            fixations: vec![(1.0, 1.0)],
            cells: vec![],
            termination_reason: crate::search::TerminationReason::Truncated,
            steps: vec![],
        }];
        let human = vec![HumanScanpath {
            image_id: "only_human".into(),
            subject: "s".into(),
            target: 0,
            fixations: vec![[1.0, 1.0]],
        }];
        let annotations = BTreeMap::new();
        let inputs = EvaluationInputs {
            predicted: &predicted,
            human: &human,
            annotations: &annotations,
            conditional: &[],
            baseline: None,
            grid_dims: (20, 32),
            cluster_bandwidth: None,
        };
        match evaluate_run(&inputs, "x") {
            Err(MetricsError::ImageMismatch {
                missing_human,
                missing_predicted,
            }) => {
                assert_eq!(missing_human, vec!["only_predicted".to_string()]);
                assert_eq!(missing_predicted, vec!["only_human".to_string()]);
            }
            other => panic!("expected mismatch error, got {other:?}"),
        }
    }

    #[test]
    fn same_objects_different_pixels_scores_semss_full() {
        // Two scanpaths visiting the same objects at different pixels agree
        // semantically even when their cluster strings differ.
        let obj_a = BoundingBox::new(0.0, 0.0, 100.0, 100.0).unwrap();
        let obj_b = BoundingBox::new(400.0, 300.0, 520.0, 420.0).unwrap();
        let labeling = SemanticLabeling::new(&[(7, obj_a), (9, obj_b)]);
        let clusters = ClusterAssignment::build(&[], 60.0, (20, 32), (640, 480));

        let path1 = [(10.0, 10.0), (410.0, 310.0)];
        let path2 = [(90.0, 90.0), (510.0, 410.0)];
        let sem1 = labeling.sequence(&path1);
        let sem2 = labeling.sequence(&path2);
        assert_eq!(semantic_sequence_score(&sem1, &sem2), 1.0);

        let c1 = clusters.sequence(&path1);
        let c2 = clusters.sequence(&path2);
        assert!(sequence_score(&c1, &c2) < 1.0);
    }
}
