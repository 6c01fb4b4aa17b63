//! Detection data model, bounding-box to grid projection, and the adapters
//! that feed detections into the search loop (replay logs, external
//! subprocess detectors).

mod replay;
mod subprocess;

pub use replay::{load_detection_log, write_detection_log, DetectionLog, LogRecord};
pub use subprocess::{SubprocessConfig, SubprocessDetector};

use crate::dirichlet::ScoreSample;
use crate::fovea::{FocalFrame, FoveaConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("degenerate bounding box [{0}, {1}, {2}, {3}]")]
    BadBox(f64, f64, f64, f64),
    #[error("detection log {path}:{line}: {reason}")]
    MalformedRecord {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("detector subprocess timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("detector subprocess exited prematurely (partial payload: {payload:?})")]
    PrematureExit { payload: String },
    #[error("detector subprocess protocol violation: {reason} (payload: {payload:?})")]
    Protocol { reason: String, payload: String },
    #[error("detector adapter failure: {0}")]
    Adapter(String),
}

/// Axis-aligned box in pixel coordinates, min corner inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, DetectorError> {
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(DetectorError::BadBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Clip to image bounds. Returns None when nothing remains.
    pub fn clipped(&self, dims: (u32, u32)) -> Option<Self> {
        let x_min = self.x_min.max(0.0);
        let y_min = self.y_min.max(0.0);
        let x_max = self.x_max.min(dims.0 as f64);
        let y_max = self.y_max.min(dims.1 as f64);
        (x_min < x_max && y_min < y_max).then_some(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn contains(&self, point: (f64, f64)) -> bool {
        point.0 >= self.x_min && point.0 <= self.x_max && point.1 >= self.y_min && point.1 <= self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// One detector output: a box, a full score vector over all K classes, the
/// fixation it was sensed from, and (once assigned) its peripheral
/// distortion level.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub scores: ScoreSample,
    pub source_fixation: (f64, f64),
    pub level: Option<u32>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, scores: ScoreSample, source_fixation: (f64, f64)) -> Self {
        Self {
            bbox,
            scores,
            source_fixation,
            level: None,
        }
    }

    /// Distortion level of the bounding-box center under the given frame.
    pub fn with_level(mut self, frame: &FocalFrame, config: &FoveaConfig) -> Self {
        self.level = Some(frame.distortion_level(self.bbox.center(), config.distortion_levels));
        self
    }
}

/// Assign the peripheral distortion level from the box center's Mahalanobis
/// distance to the focal point.
pub fn assign_distance_level(det: Detection, frame: &FocalFrame, config: &FoveaConfig) -> Detection {
    det.with_level(frame, config)
}

/// Every grid cell whose pixel rectangle intersects the (clipped) box with
/// positive area, under a uniform rows x cols tiling of the image.
pub fn overlapped_cells(
    bbox: &BoundingBox,
    grid_dims: (usize, usize),
    image_dims: (u32, u32),
) -> Vec<(usize, usize)> {
    let (rows, cols) = grid_dims;
    let (w, h) = (image_dims.0 as f64, image_dims.1 as f64);
    let Some(bbox) = bbox.clipped(image_dims) else {
        return Vec::new();
    };
    let cell_w = w / cols as f64;
    let cell_h = h / rows as f64;

    let c0 = (bbox.x_min / cell_w).floor().max(0.0) as usize;
    let c1 = ((bbox.x_max / cell_w).ceil() as usize).min(cols);
    let r0 = (bbox.y_min / cell_h).floor().max(0.0) as usize;
    let r1 = ((bbox.y_max / cell_h).ceil() as usize).min(rows);

    let mut out = Vec::new();
    for r in r0..r1 {
        let cy0 = r as f64 * cell_h;
        let cy1 = cy0 + cell_h;
        if bbox.y_max.min(cy1) <= bbox.y_min.max(cy0) {
            continue;
        }
        for c in c0..c1 {
            let cx0 = c as f64 * cell_w;
            let cx1 = cx0 + cell_w;
            if bbox.x_max.min(cx1) > bbox.x_min.max(cx0) {
                out.push((r, c));
            }
        }
    }
    out
}

/// Map a pixel to its grid cell. Points exactly on an interior cell
/// boundary round toward the lower index; points at or past the far image
/// edge clamp into the last cell.
pub fn pixel_to_cell(
    point: (f64, f64),
    grid_dims: (usize, usize),
    image_dims: (u32, u32),
) -> (usize, usize) {
    let (rows, cols) = grid_dims;
    let cell_w = image_dims.0 as f64 / cols as f64;
    let cell_h = image_dims.1 as f64 / rows as f64;
    let to_index = |v: f64, size: f64, count: usize| -> usize {
        let ratio = v / size;
        let mut idx = ratio.floor();
        if ratio > 0.0 && ratio == idx {
            idx -= 1.0; // exact boundary rounds down
        }
        (idx.max(0.0) as usize).min(count - 1)
    };
    (
        to_index(point.1, cell_h, rows),
        to_index(point.0, cell_w, cols),
    )
}

/// Center pixel of a grid cell.
pub fn cell_center(
    cell: (usize, usize),
    grid_dims: (usize, usize),
    image_dims: (u32, u32),
) -> (f64, f64) {
    let cell_w = image_dims.0 as f64 / grid_dims.1 as f64;
    let cell_h = image_dims.1 as f64 / grid_dims.0 as f64;
    (
        (cell.1 as f64 + 0.5) * cell_w,
        (cell.0 as f64 + 0.5) * cell_h,
    )
}

/// Expand a sparse {class index -> score} map to a full K-dimensional score
/// vector. Residual probability mass is spread uniformly over unlisted
/// classes and the result renormalized.
pub fn complete_scores(
    sparse: &BTreeMap<usize, f64>,
    class_count: usize,
) -> Result<ScoreSample, DetectorError> {
    let mut full = vec![0.0_f64; class_count];
    let mut listed_mass = 0.0;
    for (&idx, &score) in sparse {
        if idx >= class_count {
            return Err(DetectorError::Adapter(format!(
                "class index {idx} outside catalog of {class_count}"
            )));
        }
        if !score.is_finite() || score < 0.0 {
            return Err(DetectorError::Adapter(format!(
                "score {score} for class {idx} not allowed"
            )));
        }
        full[idx] = score;
        listed_mass += score;
    }
    let unlisted = class_count - sparse.len();
    if unlisted > 0 {
        let residual = (1.0 - listed_mass).max(0.0) / unlisted as f64;
        for (idx, v) in full.iter_mut().enumerate() {
            if !sparse.contains_key(&idx) {
                *v = residual;
            }
        }
    }
    Ok(ScoreSample::clamped(&full, crate::dirichlet::DEFAULT_CLAMP_EPS))
}

/// Source of detections for the search loop. Implementations must be
/// replay-stable: the same (image, fixation) sequence yields the same
/// output sequence.
pub trait DetectorAdapter {
    fn detect(
        &mut self,
        image_id: &str,
        fixation: (f64, f64),
    ) -> Result<Vec<Detection>, DetectorError>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_cells(
        bbox: &BoundingBox,
        grid: (usize, usize),
        dims: (u32, u32),
    ) -> Vec<(usize, usize)> {
        let cell_w = dims.0 as f64 / grid.1 as f64;
        let cell_h = dims.1 as f64 / grid.0 as f64;
        let mut out = Vec::new();
        for r in 0..grid.0 {
            for c in 0..grid.1 {
                let x0 = c as f64 * cell_w;
                let y0 = r as f64 * cell_h;
                let ix = bbox.x_max.min(x0 + cell_w) - bbox.x_min.max(x0);
                let iy = bbox.y_max.min(y0 + cell_h) - bbox.y_min.max(y0);
                if ix > 0.0 && iy > 0.0 {
                    out.push((r, c));
                }
            }
        }
        out
    }

    #[test]
    fn full_image_box_covers_all_cells() {
        let bbox = BoundingBox::new(0.0, 0.0, 1680.0, 1050.0).unwrap();
        let cells = overlapped_cells(&bbox, (20, 32), (1680, 1050));
        assert_eq!(cells.len(), 20 * 32);
    }

    #[test]
    fn box_inside_one_cell() {
        // Cell size is 52.5 x 52.5 on the 20x32 tiling of 1680x1050.
        let bbox = BoundingBox::new(10.0, 10.0, 40.0, 40.0).unwrap();
        let cells = overlapped_cells(&bbox, (20, 32), (1680, 1050));
        assert_eq!(cells, vec![(0, 0)]);
    }

    #[test]
    fn box_straddling_one_column_boundary() {
        // Crosses x = 52.5 only.
        let bbox = BoundingBox::new(48.0, 5.0, 57.0, 30.0).unwrap();
        let cells = overlapped_cells(&bbox, (20, 32), (1680, 1050));
        assert_eq!(cells, vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn boundary_touching_box_excludes_zero_area_cells() {
        // x_max exactly on the first column boundary: only column 0.
        let bbox = BoundingBox::new(10.0, 10.0, 52.5, 40.0).unwrap();
        let cells = overlapped_cells(&bbox, (20, 32), (1680, 1050));
        assert_eq!(cells, vec![(0, 0)]);
    }

    proptest! {
        #[test]
        fn overlap_matches_brute_force(
            x0 in 0.0..1600.0f64,
            y0 in 0.0..1000.0f64,
            w in 0.5..400.0f64,
            h in 0.5..400.0f64,
        ) {
            let bbox = BoundingBox::new(x0, y0, (x0 + w).min(1680.0), (y0 + h).min(1050.0));
            prop_assume!(bbox.is_ok());
            let bbox = bbox.unwrap();
            let fast = overlapped_cells(&bbox, (20, 32), (1680, 1050));
            let slow = brute_force_cells(&bbox, (20, 32), (1680, 1050));
            prop_assert_eq!(fast, slow);
        }
    }

    #[test]
    fn pixel_cell_round_trip_and_boundaries() {
        let grid = (20, 32);
        let dims = (1680, 1050);
        assert_eq!(pixel_to_cell((0.0, 0.0), grid, dims), (0, 0));
        // Exact boundary rounds toward the lower index.
        assert_eq!(pixel_to_cell((52.5, 0.0), grid, dims), (0, 0));
        assert_eq!(pixel_to_cell((52.6, 0.0), grid, dims), (0, 1));
        // Far edge clamps into the last cell.
        assert_eq!(pixel_to_cell((1680.0, 1050.0), grid, dims), (19, 31));

        for cell in [(0, 0), (7, 13), (19, 31)] {
            let center = cell_center(cell, grid, dims);
            assert_eq!(pixel_to_cell(center, grid, dims), cell);
        }
    }

    #[test]
    fn level_assignment_matches_distortion_binning() {
        let cfg = FoveaConfig::default();
        let frame = FocalFrame::new((320.0, 240.0), (640, 480), cfg.eta).unwrap();
        let scores = ScoreSample::clamped(&[0.5, 0.5], 1e-6);

        let centered = Detection::new(
            BoundingBox::new(310.0, 230.0, 330.0, 250.0).unwrap(),
            scores.clone(),
            (320.0, 240.0),
        );
        assert_eq!(
            assign_distance_level(centered, &frame, &cfg).level,
            Some(1)
        );

        let corner = Detection::new(
            BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap(),
            scores.clone(),
            (320.0, 240.0),
        );
        let level = assign_distance_level(corner, &frame, &cfg).level.unwrap();
        assert_eq!(level, 7);

        // Box centered at half the corner distance lands in level 4.
        let m_max = frame.corner_distance();
        let cx = 320.0 + 0.5 * m_max * frame.sigma.0;
        let half = Detection::new(
            BoundingBox::new(cx - 5.0, 235.0, cx + 5.0, 245.0).unwrap(),
            scores,
            (320.0, 240.0),
        );
        assert_eq!(assign_distance_level(half, &frame, &cfg).level, Some(4));
    }

    #[test]
    fn sparse_scores_complete_to_full_simplex() {
        let mut sparse = BTreeMap::new();
        sparse.insert(1usize, 0.6);
        sparse.insert(3usize, 0.2);
        let full = complete_scores(&sparse, 5).unwrap();
        let v = full.values();
        assert_eq!(v.len(), 5);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Residual 0.2 spread over the 3 unlisted classes.
        assert!((v[0] - 0.2 / 3.0).abs() < 1e-9);
        assert!((v[1] - 0.6).abs() < 1e-9);
        assert!(v.iter().all(|&s| s > 0.0));

        let mut bad = BTreeMap::new();
        bad.insert(9usize, 0.5);
        assert!(complete_scores(&bad, 5).is_err());
    }

    #[test]
    fn clipping() {
        let bbox = BoundingBox::new(-10.0, -5.0, 20.0, 30.0).unwrap();
        let clipped = bbox.clipped((640, 480)).unwrap();
        assert_eq!(clipped.x_min, 0.0);
        assert_eq!(clipped.y_min, 0.0);
        let outside = BoundingBox::new(700.0, 10.0, 720.0, 20.0).unwrap();
        assert!(outside.clipped((640, 480)).is_none());
    }
}
