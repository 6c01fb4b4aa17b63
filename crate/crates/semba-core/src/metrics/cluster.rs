//! Fixation-to-symbol mappings for the string-based scanpath metrics:
//! mean-shift clusters when a human fixation corpus exists, grid cells as
//! the fallback, and semantic object labels from ground-truth boxes.

use crate::detections::{pixel_to_cell, BoundingBox};

/// Maps fixation pixels to stable cluster symbols.
#[derive(Debug, Clone)]
pub enum ClusterAssignment {
    /// Fallback: cluster = grid cell index on the attention tiling.
    Grid {
        grid_dims: (usize, usize),
        image_dims: (u32, u32),
    },
    /// Data-driven: nearest mean-shift mode of a fixation corpus.
    MeanShift { centers: Vec<(f64, f64)> },
}

impl ClusterAssignment {
    /// Build the assignment for one image. An empty corpus engages the grid
    /// fallback.
    pub fn build(
        corpus: &[(f64, f64)],
        bandwidth: f64,
        grid_dims: (usize, usize),
        image_dims: (u32, u32),
    ) -> Self {
        if corpus.is_empty() {
            return Self::Grid {
                grid_dims,
                image_dims,
            };
        }
        let mut centers = mean_shift_modes(corpus, bandwidth);
        // Stable symbol order.
        centers.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap());
        Self::MeanShift { centers }
    }

    pub fn cluster_count(&self) -> usize {
        match self {
            Self::Grid { grid_dims, .. } => grid_dims.0 * grid_dims.1,
            Self::MeanShift { centers } => centers.len(),
        }
    }

    /// Cluster symbol for a fixation pixel. Total over the image plane.
    pub fn cluster_of(&self, fixation: (f64, f64)) -> u32 {
        match self {
            Self::Grid {
                grid_dims,
                image_dims,
            } => {
                let (r, c) = pixel_to_cell(fixation, *grid_dims, *image_dims);
                (r * grid_dims.1 + c) as u32
            }
            Self::MeanShift { centers } => {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, &(cx, cy)) in centers.iter().enumerate() {
                    let d = (fixation.0 - cx).powi(2) + (fixation.1 - cy).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best as u32
            }
        }
    }

    pub fn sequence(&self, fixations: &[(f64, f64)]) -> Vec<u32> {
        fixations.iter().map(|&f| self.cluster_of(f)).collect()
    }
}

/// Flat-kernel mean shift over 2D points. Each point iterates to its local
/// mode; modes closer than half the bandwidth merge.
fn mean_shift_modes(points: &[(f64, f64)], bandwidth: f64) -> Vec<(f64, f64)> {
    let bw2 = bandwidth * bandwidth;
    let mut modes: Vec<(f64, f64)> = Vec::new();
    for &start in points {
        let mut current = start;
        for _ in 0..300 {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut n = 0.0;
            for &(px, py) in points {
                let d = (px - current.0).powi(2) + (py - current.1).powi(2);
                if d <= bw2 {
                    sx += px;
                    sy += py;
                    n += 1.0;
                }
            }
            let next = (sx / n, sy / n);
            let shift = (next.0 - current.0).powi(2) + (next.1 - current.1).powi(2);
            current = next;
            if shift < 1e-6 {
                break;
            }
        }
        let merged = modes.iter().any(|&(mx, my)| {
            (mx - current.0).powi(2) + (my - current.1).powi(2) <= bw2 / 4.0
        });
        if !merged {
            modes.push(current);
        }
    }
    modes
}

/// Maps fixation pixels to object-category labels from ground-truth boxes.
/// Overlapping boxes resolve to the smallest area; everything else is
/// background.
#[derive(Debug, Clone)]
pub struct SemanticLabeling {
    // (label id, box, area) sorted by area ascending for the overlap rule.
    boxes: Vec<(u32, BoundingBox, f64)>,
}

/// Symbol reserved for fixations outside every object box.
pub const BACKGROUND_LABEL: u32 = u32::MAX;

impl SemanticLabeling {
    pub fn new(objects: &[(u32, BoundingBox)]) -> Self {
        let mut boxes: Vec<(u32, BoundingBox, f64)> = objects
            .iter()
            .map(|&(label, bbox)| (label, bbox, bbox.area()))
            .collect();
        boxes.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
        Self { boxes }
    }

    pub fn label_of(&self, fixation: (f64, f64)) -> u32 {
        for &(label, bbox, _) in &self.boxes {
            if bbox.contains(fixation) {
                return label;
            }
        }
        BACKGROUND_LABEL
    }

    pub fn sequence(&self, fixations: &[(f64, f64)]) -> Vec<u32> {
        fixations.iter().map(|&f| self.label_of(f)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_fallback_groups_by_cell() {
        let assign = ClusterAssignment::build(&[], 60.0, (20, 32), (640, 480));
        assert!(matches!(assign, ClusterAssignment::Grid { .. }));
        let a = assign.cluster_of((10.0, 10.0));
        let b = assign.cluster_of((12.0, 15.0));
        assert_eq!(a, b);
        let c = assign.cluster_of((630.0, 470.0));
        assert_ne!(a, c);
    }

    #[test]
    fn two_blobs_make_two_clusters() {
        let mut corpus = Vec::new();
        for i in 0..20 {
            let jitter = i as f64 * 0.7;
            corpus.push((100.0 + jitter, 100.0 - jitter * 0.5));
            corpus.push((600.0 - jitter, 102.0 + jitter * 0.3));
        }
        let assign = ClusterAssignment::build(&corpus, 60.0, (20, 32), (800, 300));
        assert_eq!(assign.cluster_count(), 2);
        assert_eq!(assign.cluster_of((101.0, 99.0)), assign.cluster_of((108.0, 97.0)));
        assert_ne!(assign.cluster_of((101.0, 99.0)), assign.cluster_of((595.0, 104.0)));
    }

    #[test]
    fn semantic_labels_prefer_smallest_box() {
        let big = BoundingBox::new(0.0, 0.0, 200.0, 200.0).unwrap();
        let small = BoundingBox::new(50.0, 50.0, 100.0, 100.0).unwrap();
        let labeling = SemanticLabeling::new(&[(1, big), (2, small)]);
        assert_eq!(labeling.label_of((75.0, 75.0)), 2);
        assert_eq!(labeling.label_of((150.0, 150.0)), 1);
        assert_eq!(labeling.label_of((500.0, 500.0)), BACKGROUND_LABEL);
    }
}
