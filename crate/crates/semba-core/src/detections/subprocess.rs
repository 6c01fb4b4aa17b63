//! Wire protocol for external detectors: newline-delimited JSON over
//! stdin/stdout of a child process. One request per detect() call, exactly
//! one response line expected back.

use super::{complete_scores, BoundingBox, Detection, DetectorAdapter, DetectorError};
use crate::fovea::{foveate, FocalFrame, FoveaConfig};
use crate::raster::Raster;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::Duration;

#[derive(Debug, Clone, Serialize)]
struct DetectRequest<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    image_path: &'a str,
    focal_point: [f64; 2],
    eta: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct DetectResponse {
    #[serde(rename = "type")]
    kind: String,
    detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, Deserialize)]
struct WireDetection {
    bbox: [f64; 4],
    scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct SubprocessConfig {
    /// Program plus arguments.
    pub command: Vec<String>,
    pub timeout: Duration,
    pub class_count: usize,
    pub image_dims: (u32, u32),
    /// Resolve image ids to files on disk.
    pub image_paths: std::collections::HashMap<String, PathBuf>,
    pub fovea: FoveaConfig,
    /// When set, the adapter foveates the image itself and hands the child
    /// a temporary pre-foveated file; otherwise the child receives the
    /// original path plus eta and is expected to foveate on its own.
    pub prefoveate: bool,
}

impl SubprocessConfig {
    pub fn new(command: Vec<String>, class_count: usize, image_dims: (u32, u32)) -> Self {
        Self {
            command,
            timeout: Duration::from_secs(30),
            class_count,
            image_dims,
            image_paths: Default::default(),
            fovea: FoveaConfig::default(),
            prefoveate: false,
        }
    }
}

/// Adapter that proxies detect() calls to a child process. Requests are
/// strictly serialized: one in flight at a time.
pub struct SubprocessDetector {
    config: SubprocessConfig,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    temp_dir: Option<tempfile::TempDir>,
}

impl SubprocessDetector {
    pub fn spawn(config: SubprocessConfig) -> Result<Self, DetectorError> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| DetectorError::Adapter("empty detector command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| DetectorError::Adapter(format!("failed to spawn {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        let temp_dir = config
            .prefoveate
            .then(|| tempfile::tempdir())
            .transpose()
            .map_err(|e| DetectorError::Adapter(format!("temp dir: {e}")))?;

        Ok(Self {
            config,
            child,
            stdin,
            lines: rx,
            temp_dir,
        })
    }

    fn image_path(&self, image_id: &str) -> Result<PathBuf, DetectorError> {
        self.config
            .image_paths
            .get(image_id)
            .cloned()
            .ok_or_else(|| DetectorError::Adapter(format!("no image path for id {image_id:?}")))
    }

    fn request_path(
        &mut self,
        image_id: &str,
        fixation: (f64, f64),
    ) -> Result<PathBuf, DetectorError> {
        let source = self.image_path(image_id)?;
        if !self.config.prefoveate {
            return Ok(source);
        }
        let raster = Raster::load(&source)
            .map_err(|e| DetectorError::Adapter(format!("load {}: {e}", source.display())))?;
        let frame = FocalFrame::new(
            fixation,
            (raster.width(), raster.height()),
            self.config.fovea.eta,
        )
        .map_err(|e| DetectorError::Adapter(e.to_string()))?;
        let foveated = foveate(&raster, &frame, &self.config.fovea)
            .map_err(|e| DetectorError::Adapter(e.to_string()))?;
        let dir = self.temp_dir.as_ref().expect("created when prefoveate set");
        let path = dir.path().join(format!(
            "{image_id}_{}_{}.png",
            fixation.0.round() as i64,
            fixation.1.round() as i64
        ));
        foveated
            .save(&path)
            .map_err(|e| DetectorError::Adapter(e.to_string()))?;
        Ok(path)
    }
}

impl DetectorAdapter for SubprocessDetector {
    fn detect(
        &mut self,
        image_id: &str,
        fixation: (f64, f64),
    ) -> Result<Vec<Detection>, DetectorError> {
        let path = self.request_path(image_id, fixation)?;
        let request = DetectRequest {
            kind: "detect",
            image_path: path.to_str().unwrap_or(""),
            focal_point: [fixation.0, fixation.1],
            eta: self.config.fovea.eta,
        };
        let mut line = serde_json::to_string(&request)
            .map_err(|e| DetectorError::Adapter(format!("encode request: {e}")))?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|_| DetectorError::PrematureExit {
                payload: String::new(),
            })?;

        let raw = match self.lines.recv_timeout(self.config.timeout) {
            Ok(Ok(text)) => text,
            Ok(Err(e)) => {
                return Err(DetectorError::Protocol {
                    reason: format!("read failure: {e}"),
                    payload: String::new(),
                })
            }
            Err(RecvTimeoutError::Timeout) => {
                return Err(DetectorError::Timeout(self.config.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(DetectorError::PrematureExit {
                    payload: String::new(),
                })
            }
        };

        let response: DetectResponse =
            serde_json::from_str(&raw).map_err(|e| DetectorError::Protocol {
                reason: format!("malformed response: {e}"),
                payload: raw.clone(),
            })?;
        if response.kind != "detections" {
            return Err(DetectorError::Protocol {
                reason: format!("unexpected response type {:?}", response.kind),
                payload: raw,
            });
        }
        response
            .detections
            .iter()
            .map(|d| {
                let mut sparse = BTreeMap::new();
                for (key, &score) in &d.scores {
                    let idx: usize = key.parse().map_err(|_| DetectorError::Protocol {
                        reason: format!("non-numeric class key {key:?}"),
                        payload: raw.clone(),
                    })?;
                    sparse.insert(idx, score);
                }
                let scores = complete_scores(&sparse, self.config.class_count)?;
                let bbox = BoundingBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3])?
                    .clipped(self.config.image_dims)
                    .ok_or(DetectorError::BadBox(
                        d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3],
                    ))?;
                Ok(Detection::new(bbox, scores, fixation))
            })
            .collect()
    }
}

impl Drop for SubprocessDetector {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
