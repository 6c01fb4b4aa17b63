//! Replayable detection logs: JSON-lines keyed by (image id, fixation grid
//! cell). Fixations are keyed by cell rather than raw pixel so that two
//! nearby fixations inside one cell replay identically.

use super::{
    complete_scores, pixel_to_cell, BoundingBox, Detection, DetectorAdapter, DetectorError,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// One JSON line of the log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub image_id: String,
    pub fixation_cell: [usize; 2],
    pub detections: Vec<LogDetection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogDetection {
    pub bbox: [f64; 4],
    /// Sparse class scores, keyed by 0-based class index. Missing classes
    /// share the residual mass uniformly.
    pub scores: BTreeMap<String, f64>,
}

/// In-memory replay adapter over a parsed log.
#[derive(Debug, Clone)]
pub struct DetectionLog {
    class_count: usize,
    grid_dims: (usize, usize),
    image_dims: (u32, u32),
    // Records are fused in file order, so records for the same key append.
    records: HashMap<(String, (usize, usize)), Vec<LogDetection>>,
}

impl DetectionLog {
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl DetectorAdapter for DetectionLog {
    fn detect(
        &mut self,
        image_id: &str,
        fixation: (f64, f64),
    ) -> Result<Vec<Detection>, DetectorError> {
        let cell = pixel_to_cell(fixation, self.grid_dims, self.image_dims);
        let Some(entries) = self.records.get(&(image_id.to_string(), cell)) else {
            return Ok(Vec::new());
        };
        entries
            .iter()
            .map(|d| {
                let mut sparse = BTreeMap::new();
                for (key, &score) in &d.scores {
                    let idx: usize = key.parse().map_err(|_| DetectorError::Adapter(format!(
                        "non-numeric class key {key:?}"
                    )))?;
                    sparse.insert(idx, score);
                }
                let scores = complete_scores(&sparse, self.class_count)?;
                let bbox = BoundingBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3])?;
                let bbox = bbox
                    .clipped(self.image_dims)
                    .ok_or(DetectorError::BadBox(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]))?;
                Ok(Detection::new(bbox, scores, fixation))
            })
            .collect()
    }
}

/// Parse a JSON-lines detection log into a replay adapter. Malformed lines
/// report their line number and the failing field.
pub fn load_detection_log(
    path: &Path,
    class_count: usize,
    grid_dims: (usize, usize),
    image_dims: (u32, u32),
) -> Result<DetectionLog, DetectorError> {
    let file = std::fs::File::open(path).map_err(|source| DetectorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut records: HashMap<(String, (usize, usize)), Vec<LogDetection>> = HashMap::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DetectorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord =
            serde_json::from_str(&line).map_err(|e| DetectorError::MalformedRecord {
                path: path.display().to_string(),
                line: line_no + 1,
                reason: e.to_string(),
            })?;
        let [r, c] = record.fixation_cell;
        if r >= grid_dims.0 || c >= grid_dims.1 {
            return Err(DetectorError::MalformedRecord {
                path: path.display().to_string(),
                line: line_no + 1,
                reason: format!("fixation_cell [{r}, {c}] outside {grid_dims:?}"),
            });
        }
        for (i, det) in record.detections.iter().enumerate() {
            let [x0, y0, x1, y1] = det.bbox;
            if !(x0 < x1 && y0 < y1) {
                return Err(DetectorError::MalformedRecord {
                    path: path.display().to_string(),
                    line: line_no + 1,
                    reason: format!("detections[{i}].bbox [{x0}, {y0}, {x1}, {y1}] is degenerate"),
                });
            }
        }
        records
            .entry((record.image_id, (r, c)))
            .or_default()
            .extend(record.detections);
    }
    Ok(DetectionLog {
        class_count,
        grid_dims,
        image_dims,
        records,
    })
}

/// Append-style writer for detection logs, one JSON object per line.
pub fn write_detection_log(path: &Path, records: &[LogRecord]) -> Result<(), DetectorError> {
    let file = std::fs::File::create(path).map_err(|source| DetectorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| DetectorError::MalformedRecord {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(|source| DetectorError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    out.flush().map_err(|source| DetectorError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::cell_center;

    fn record(image: &str, cell: [usize; 2], score: f64) -> LogRecord {
        let mut scores = BTreeMap::new();
        scores.insert("1".to_string(), score);
        scores.insert("0".to_string(), 1.0 - score);
        LogRecord {
            image_id: image.into(),
            fixation_cell: cell,
            detections: vec![LogDetection {
                bbox: [10.0, 20.0, 60.0, 90.0],
                scores,
            }],
        }
    }

    #[test]
    fn lookup_by_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_detection_log(&path, &[record("img1", [3, 5], 0.8)]).unwrap();
        let mut log = load_detection_log(&path, 2, (20, 32), (640, 480)).unwrap();

        let inside = cell_center((3, 5), (20, 32), (640, 480));
        let hits = log.detect("img1", inside).unwrap();
        assert_eq!(hits.len(), 1);
        assert!((hits[0].scores.values()[1] - 0.8).abs() < 1e-9);

        // Unlogged fixation and unknown image both return nothing.
        assert!(log.detect("img1", (0.0, 0.0)).unwrap().is_empty());
        assert!(log.detect("other", inside).unwrap().is_empty());
    }

    #[test]
    fn round_trip_preserves_scores() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let records: Vec<LogRecord> = (0..8)
            .map(|i| record("img", [i, i], 0.123456789 + i as f64 * 0.1))
            .collect();
        write_detection_log(&path, &records).unwrap();
        let mut log = load_detection_log(&path, 2, (20, 32), (640, 480)).unwrap();
        for (i, rec) in records.iter().enumerate() {
            let fixation = cell_center((rec.fixation_cell[0], rec.fixation_cell[1]), (20, 32), (640, 480));
            let hits = log.detect("img", fixation).unwrap();
            let want = rec.detections[0].scores["1"];
            assert!(
                (hits[0].scores.values()[1] - want).abs() < 1e-9,
                "record {i}"
            );
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_detection_log(&path, &[record("img", [2, 2], 0.7), record("img", [4, 4], 0.3)])
            .unwrap();
        let queries = [
            cell_center((2, 2), (10, 10), (100, 100)),
            cell_center((4, 4), (10, 10), (100, 100)),
            (1.0, 1.0),
        ];
        let run = |log: &mut DetectionLog| -> Vec<Vec<Detection>> {
            queries.iter().map(|&q| log.detect("img", q).unwrap()).collect()
        };
        let mut a = load_detection_log(&path, 2, (10, 10), (100, 100)).unwrap();
        let mut b = load_detection_log(&path, 2, (10, 10), (100, 100)).unwrap();
        assert_eq!(run(&mut a), run(&mut b));
    }

    #[test]
    fn malformed_lines_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"image_id\":\"a\",\"fixation_cell\":[0,0],\"detections\":[]}\nnot json\n",
        )
        .unwrap();
        let err = load_detection_log(&path, 2, (10, 10), (100, 100)).unwrap_err();
        match err {
            DetectorError::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }

        std::fs::write(
            &path,
            "{\"image_id\":\"a\",\"fixation_cell\":[0,0],\"detections\":[{\"bbox\":[5,5,4,9],\"scores\":{}}]}\n",
        )
        .unwrap();
        let err = load_detection_log(&path, 2, (10, 10), (100, 100)).unwrap_err();
        assert!(err.to_string().contains("bbox"), "{err}");
    }
}
