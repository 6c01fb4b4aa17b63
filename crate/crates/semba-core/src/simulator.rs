//! Synthetic scenes with ground-truth objects and a stochastic foveal
//! sensor whose noise grows with peripheral distortion level: the closed
//! loop test double for the search pipeline and the sample generator for
//! calibration oracles.

use crate::detections::{BoundingBox, Detection, DetectorAdapter, DetectorError};
use crate::dirichlet::DirichletParams;
use crate::fovea::{foveate, FocalFrame, FoveaConfig};
use crate::raster::Raster;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("scene needs at least one object")]
    NoObjects,
    #[error("cannot pack {objects} objects of min size {min_size} into {width}x{height}")]
    ImpossiblePacking {
        objects: usize,
        min_size: u32,
        width: u32,
        height: u32,
    },
    #[error("target class {0} not covered by the scene spec")]
    TargetNotIncluded(usize),
    #[error("detection probabilities must be non-increasing over levels")]
    NonMonotoneDetectProb,
    #[error("sensor table is ragged or empty")]
    BadSensorTable,
}

/// An annotated object: true class plus pixel box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: usize,
    pub bbox: BoundingBox,
}

/// A generated target-present scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub image_id: String,
    /// (width, height) pixels.
    pub dims: (u32, u32),
    pub objects: Vec<SceneObject>,
    pub target_class: usize,
    /// Index into `objects` of the designated target instance.
    pub target_index: usize,
}

impl SyntheticScene {
    pub fn target_bbox(&self) -> &BoundingBox {
        &self.objects[self.target_index].bbox
    }
}

/// How the target class is chosen per generated scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TargetSpec {
    Fixed { class: usize },
    /// One weight per class; zero-weight classes never become targets.
    Weighted { weights: Vec<f64> },
}

/// Parameters for random scene generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub dims: (u32, u32),
    pub n_objects: usize,
    pub n_classes: usize,
    pub target: TargetSpec,
    #[serde(default = "default_min_box")]
    pub min_box: u32,
    #[serde(default = "default_max_box")]
    pub max_box: u32,
}

fn default_min_box() -> u32 {
    24
}

fn default_max_box() -> u32 {
    96
}

/// Generate one random target-present scene. Deterministic under seed.
pub fn generate_scene(
    spec: &SceneSpec,
    image_id: &str,
    seed: u64,
) -> Result<SyntheticScene, SimulatorError> {
    if spec.n_objects == 0 {
        return Err(SimulatorError::NoObjects);
    }
    let (w, h) = spec.dims;
    if spec.min_box >= w || spec.min_box >= h {
        return Err(SimulatorError::ImpossiblePacking {
            objects: spec.n_objects,
            min_size: spec.min_box,
            width: w,
            height: h,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let target_class = match &spec.target {
        TargetSpec::Fixed { class } => {
            if *class >= spec.n_classes {
                return Err(SimulatorError::TargetNotIncluded(*class));
            }
            *class
        }
        TargetSpec::Weighted { weights } => {
            if weights.len() != spec.n_classes || weights.iter().all(|&w| w <= 0.0) {
                return Err(SimulatorError::TargetNotIncluded(weights.len()));
            }
            let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
            let mut pick = rng.random_range(0.0..total);
            let mut chosen = 0;
            for (i, &wt) in weights.iter().enumerate() {
                if wt <= 0.0 {
                    continue;
                }
                if pick < wt {
                    chosen = i;
                    break;
                }
                pick -= wt;
            }
            chosen
        }
    };

    let max_box = spec.max_box.min(w - 1).min(h - 1).max(spec.min_box + 1);
    let sample_box = |rng: &mut ChaCha12Rng| {
        let bw = rng.random_range(spec.min_box..=max_box) as f64;
        let bh = rng.random_range(spec.min_box..=max_box) as f64;
        let x0 = rng.random_range(0.0..(w as f64 - bw));
        let y0 = rng.random_range(0.0..(h as f64 - bh));
        BoundingBox::new(x0, y0, x0 + bw, y0 + bh).expect("positive extent by construction")
    };

    let mut objects = Vec::with_capacity(spec.n_objects);
    // First object is the designated target instance; the rest draw random
    // classes (which may also include more targets).
    objects.push(SceneObject {
        class: target_class,
        bbox: sample_box(&mut rng),
    });
    for _ in 1..spec.n_objects {
        objects.push(SceneObject {
            class: rng.random_range(0..spec.n_classes),
            bbox: sample_box(&mut rng),
        });
    }

    Ok(SyntheticScene {
        image_id: image_id.to_string(),
        dims: spec.dims,
        objects,
        target_class,
        target_index: 0,
    })
}

/// Ground-truth sensor: per (class, level) Dirichlet score generators plus
/// a non-increasing detection probability per level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthSensor {
    pub alpha_true: Vec<Vec<DirichletParams>>,
    pub detect_prob: Vec<f64>,
    /// Box jitter at the farthest level, as a fraction of the image
    /// diagonal; grows linearly from zero at level 1.
    pub max_jitter_frac: f64,
}

impl GroundTruthSensor {
    pub fn new(
        alpha_true: Vec<Vec<DirichletParams>>,
        detect_prob: Vec<f64>,
    ) -> Result<Self, SimulatorError> {
        let levels = alpha_true.first().map(|r| r.len()).unwrap_or(0);
        if levels == 0 || alpha_true.iter().any(|r| r.len() != levels) {
            return Err(SimulatorError::BadSensorTable);
        }
        if detect_prob.len() != levels {
            return Err(SimulatorError::BadSensorTable);
        }
        if detect_prob.windows(2).any(|w| w[1] > w[0]) {
            return Err(SimulatorError::NonMonotoneDetectProb);
        }
        Ok(Self {
            alpha_true,
            detect_prob,
            max_jitter_frac: 0.04,
        })
    }

    /// The default degradation schedule: rows interpolate log-linearly from
    /// a peaked vector (own-class entry 40, rest 0.5) at level 1 toward
    /// near-flat (all 1.2) at level D, and detection probability falls
    /// linearly from 1.0 to 0.5.
    pub fn default_schedule(class_count: usize, levels: u32) -> Self {
        let alpha_true = (0..class_count)
            .map(|k| {
                (1..=levels)
                    .map(|d| {
                        let t = if levels > 1 {
                            (d - 1) as f64 / (levels - 1) as f64
                        } else {
                            0.0
                        };
                        let own = log_interp(40.0, 1.2, t);
                        let other = log_interp(0.5, 1.2, t);
                        let alpha: Vec<f64> = (0..class_count)
                            .map(|j| if j == k { own } else { other })
                            .collect();
                        DirichletParams::new(alpha).expect("positive by construction")
                    })
                    .collect()
            })
            .collect();
        let detect_prob = (1..=levels)
            .map(|d| {
                let t = if levels > 1 {
                    (d - 1) as f64 / (levels - 1) as f64
                } else {
                    0.0
                };
                1.0 - 0.5 * t
            })
            .collect();
        Self::new(alpha_true, detect_prob).expect("schedule is well formed")
    }

    pub fn levels(&self) -> u32 {
        self.alpha_true[0].len() as u32
    }

    pub fn class_count(&self) -> usize {
        self.alpha_true.len()
    }
}

fn log_interp(a: f64, b: f64, t: f64) -> f64 {
    (a.ln() * (1.0 - t) + b.ln() * t).exp()
}

/// Sense a scene from one fixation: each object is detected with
/// probability p(d) of its level; scores are drawn from the matching
/// Dirichlet row and the box jittered with level-growing Gaussian noise,
/// clipped back into the image.
pub fn sense<R: Rng + ?Sized>(
    scene: &SyntheticScene,
    sensor: &GroundTruthSensor,
    frame: &FocalFrame,
    rng: &mut R,
) -> Vec<Detection> {
    let levels = sensor.levels();
    let diag = {
        let (w, h) = scene.dims;
        ((w * w + h * h) as f64).sqrt()
    };
    let mut out = Vec::new();
    for obj in &scene.objects {
        let d = frame.distortion_level(obj.bbox.center(), levels);
        let p = sensor.detect_prob[(d - 1) as usize];
        if rng.random_range(0.0..1.0) >= p {
            continue;
        }
        let scores = sensor.alpha_true[obj.class][(d - 1) as usize].sample(rng);
        let sigma = sensor.max_jitter_frac * diag * (d - 1) as f64 / levels.max(2) as f64;
        let bbox = if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma positive");
            let jittered = BoundingBox {
                x_min: obj.bbox.x_min + normal.sample(rng),
                y_min: obj.bbox.y_min + normal.sample(rng),
                x_max: obj.bbox.x_max + normal.sample(rng),
                y_max: obj.bbox.y_max + normal.sample(rng),
            };
            fix_box(jittered, scene.dims)
        } else {
            obj.bbox
        };
        out.push(
            Detection::new(bbox, scores, frame.focal).with_level(
                frame,
                &FoveaConfig {
                    distortion_levels: levels,
                    ..FoveaConfig::default()
                },
            ),
        );
    }
    out
}

/// Clip a jittered box into the image, keeping a positive extent.
fn fix_box(b: BoundingBox, dims: (u32, u32)) -> BoundingBox {
    let (w, h) = (dims.0 as f64, dims.1 as f64);
    let mut x0 = b.x_min.min(b.x_max - 1.0).clamp(0.0, w - 2.0);
    let mut y0 = b.y_min.min(b.y_max - 1.0).clamp(0.0, h - 2.0);
    let x1 = b.x_max.max(x0 + 1.0).clamp(1.0, w);
    let y1 = b.y_max.max(y0 + 1.0).clamp(1.0, h);
    x0 = x0.min(x1 - 1.0);
    y0 = y0.min(y1 - 1.0);
    BoundingBox::new(x0, y0, x1, y1).expect("positive extent enforced")
}

/// Deterministic palette: one saturated color per class, spread around the
/// hue wheel.
pub fn class_color(class: usize, class_count: usize) -> [u8; 3] {
    let hue = class as f64 / class_count.max(1) as f64 * 360.0;
    let (h, s, v) = (hue, 0.85, 0.95);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

pub const BACKGROUND_COLOR: [u8; 3] = [128, 128, 128];

/// Flat background with one solid rectangle per object, painted in object
/// order. Colors map 1:1 to classes.
pub fn render_scene(scene: &SyntheticScene, class_count: usize) -> Raster {
    let (w, h) = scene.dims;
    let mut img = Raster::new(w, h, 3).expect("scene dims are positive");
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x, y, &BACKGROUND_COLOR);
        }
    }
    for obj in &scene.objects {
        let color = class_color(obj.class, class_count);
        let x0 = obj.bbox.x_min.max(0.0) as u32;
        let y0 = obj.bbox.y_min.max(0.0) as u32;
        let x1 = (obj.bbox.x_max.ceil() as u32).min(w);
        let y1 = (obj.bbox.y_max.ceil() as u32).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                img.put_pixel(x, y, &color);
            }
        }
    }
    img
}

/// Detector adapter backed by the analytic ground-truth sensor. Noise is
/// injected per distortion level without touching pixels.
pub struct SimulatedDetector {
    scene: SyntheticScene,
    sensor: GroundTruthSensor,
    eta: f64,
    rng: ChaCha12Rng,
}

impl SimulatedDetector {
    pub fn new(scene: SyntheticScene, sensor: GroundTruthSensor, eta: f64, seed: u64) -> Self {
        Self {
            scene,
            sensor,
            eta,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn scene(&self) -> &SyntheticScene {
        &self.scene
    }
}

impl DetectorAdapter for SimulatedDetector {
    fn detect(
        &mut self,
        image_id: &str,
        fixation: (f64, f64),
    ) -> Result<Vec<Detection>, DetectorError> {
        if image_id != self.scene.image_id {
            return Err(DetectorError::Adapter(format!(
                "adapter holds scene {:?}, asked for {image_id:?}",
                self.scene.image_id
            )));
        }
        let frame = FocalFrame::new(fixation, self.scene.dims, self.eta)
            .map_err(|e| DetectorError::Adapter(e.to_string()))?;
        Ok(sense(&self.scene, &self.sensor, &frame, &mut self.rng))
    }
}

/// Pixel-route adapter: renders the scene, foveates it around the fixation
/// with the real transform, then classifies each object box by its mean
/// color against the class palette. Peripheral blur washes boxes toward
/// the background, flattening the scores organically.
pub struct PixelSimulatedDetector {
    scene: SyntheticScene,
    rendered: Raster,
    class_count: usize,
    fovea: FoveaConfig,
    /// Softmax temperature on color distances; smaller is sharper.
    pub temperature: f64,
}

impl PixelSimulatedDetector {
    pub fn new(scene: SyntheticScene, class_count: usize, fovea: FoveaConfig) -> Self {
        let rendered = render_scene(&scene, class_count);
        Self {
            scene,
            rendered,
            class_count,
            fovea,
            temperature: 24.0,
        }
    }
}

impl DetectorAdapter for PixelSimulatedDetector {
    fn detect(
        &mut self,
        image_id: &str,
        fixation: (f64, f64),
    ) -> Result<Vec<Detection>, DetectorError> {
        if image_id != self.scene.image_id {
            return Err(DetectorError::Adapter(format!(
                "adapter holds scene {:?}, asked for {image_id:?}",
                self.scene.image_id
            )));
        }
        let frame = FocalFrame::new(fixation, self.scene.dims, self.fovea.eta)
            .map_err(|e| DetectorError::Adapter(e.to_string()))?;
        let foveated = foveate(&self.rendered, &frame, &self.fovea)
            .map_err(|e| DetectorError::Adapter(e.to_string()))?;

        let mut out = Vec::new();
        for obj in &self.scene.objects {
            let mean = mean_color(&foveated, &obj.bbox);
            let raw: Vec<f64> = (0..self.class_count)
                .map(|k| {
                    let c = class_color(k, self.class_count);
                    let dist = (0..3)
                        .map(|i| (mean[i] - c[i] as f64).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    (-dist / self.temperature).exp()
                })
                .collect();
            let scores = crate::dirichlet::ScoreSample::clamped(&raw, 1e-6);
            out.push(Detection::new(obj.bbox, scores, fixation));
        }
        Ok(out)
    }
}

fn mean_color(img: &Raster, bbox: &BoundingBox) -> [f64; 3] {
    let x0 = bbox.x_min.max(0.0) as u32;
    let y0 = bbox.y_min.max(0.0) as u32;
    let x1 = (bbox.x_max as u32).min(img.width()).max(x0 + 1);
    let y1 = (bbox.y_max as u32).min(img.height()).max(y0 + 1);
    let mut acc = [0.0f64; 3];
    let mut n = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            let px = img.pixel(x, y);
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v as f64;
            }
            n += 1.0;
        }
    }
    acc.map(|v| v / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SceneSpec {
        SceneSpec {
            dims: (640, 480),
            n_objects: 4,
            n_classes: 5,
            target: TargetSpec::Fixed { class: 2 },
            min_box: 24,
            max_box: 96,
        }
    }

    #[test]
    fn single_object_scene_is_the_target() {
        let mut s = spec();
        s.n_objects = 1;
        let scene = generate_scene(&s, "s", 1).unwrap();
        assert_eq!(scene.objects.len(), 1);
        assert_eq!(scene.objects[0].class, 2);
        assert_eq!(scene.target_index, 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(&spec(), "s", 42).unwrap();
        let b = generate_scene(&spec(), "s", 42).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&spec(), "s", 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn impossible_packing_is_reported() {
        let mut s = spec();
        s.min_box = 700;
        assert!(matches!(
            generate_scene(&s, "s", 1),
            Err(SimulatorError::ImpossiblePacking { .. })
        ));
    }

    #[test]
    fn weighted_targets_hit_configured_frequency() {
        let mut s = spec();
        s.target = TargetSpec::Weighted {
            weights: vec![0.1, 0.4, 0.0, 0.3, 0.2],
        };
        let n = 10_000;
        let mut counts = vec![0usize; 5];
        for seed in 0..n {
            let scene = generate_scene(&s, "s", seed).unwrap();
            counts[scene.target_class] += 1;
        }
        let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        for (got, want) in freqs.iter().zip([0.1, 0.4, 0.0, 0.3, 0.2]) {
            assert!((got - want).abs() < 0.02, "freqs={freqs:?}");
        }
    }

    #[test]
    fn sense_respects_detect_prob() {
        let mut scene = generate_scene(&spec(), "s", 5).unwrap();
        // One object sitting right under the fixation.
        scene.objects = vec![SceneObject {
            class: 2,
            bbox: BoundingBox::new(300.0, 220.0, 340.0, 260.0).unwrap(),
        }];
        scene.target_index = 0;
        let sensor = GroundTruthSensor::default_schedule(5, 7);
        let frame = FocalFrame::new((320.0, 240.0), (640, 480), 0.156).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..200 {
            // p(1) = 1.0: the centered object is always detected.
            let hits = sense(&scene, &sensor, &frame, &mut rng);
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].level, Some(1));
        }
    }

    #[test]
    fn zero_peripheral_prob_silences_periphery() {
        let mut sensor = GroundTruthSensor::default_schedule(5, 7);
        sensor.detect_prob = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let scene = SyntheticScene {
            image_id: "s".into(),
            dims: (640, 480),
            objects: vec![
                SceneObject {
                    class: 1,
                    bbox: BoundingBox::new(310.0, 230.0, 330.0, 250.0).unwrap(),
                },
                SceneObject {
                    class: 2,
                    bbox: BoundingBox::new(0.0, 0.0, 30.0, 30.0).unwrap(),
                },
            ],
            target_class: 1,
            target_index: 0,
        };
        let frame = FocalFrame::new((320.0, 240.0), (640, 480), 0.156).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..100 {
            let hits = sense(&scene, &sensor, &frame, &mut rng);
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].level, Some(1));
        }
    }

    #[test]
    fn peaked_rows_give_correct_argmax() {
        let sensor = GroundTruthSensor::default_schedule(5, 7);
        let alpha = &sensor.alpha_true[3][0];
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let n = 10_000;
        let mut correct = 0;
        for _ in 0..n {
            let s = alpha.sample(&mut rng);
            let argmax = s
                .values()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax == 3 {
                correct += 1;
            }
        }
        assert!(correct as f64 / n as f64 >= 0.99, "rate {}", correct as f64 / n as f64);
    }

    #[test]
    fn render_is_deterministic_and_palette_keyed() {
        let scene = generate_scene(&spec(), "s", 7).unwrap();
        let a = render_scene(&scene, 5);
        let b = render_scene(&scene, 5);
        assert_eq!(a, b);
        // A pixel inside the last-painted object carries its class color.
        let last = scene.objects.last().unwrap();
        let (cx, cy) = last.bbox.center();
        assert_eq!(
            a.pixel(cx as u32, cy as u32),
            &class_color(last.class, 5)[..]
        );
        // Distinct classes get distinct colors.
        let colors: std::collections::HashSet<[u8; 3]> =
            (0..5).map(|k| class_color(k, 5)).collect();
        assert_eq!(colors.len(), 5);
    }

    #[test]
    fn sensor_table_validation() {
        let rows = vec![vec![DirichletParams::flat(2); 3]; 2];
        assert!(GroundTruthSensor::new(rows.clone(), vec![1.0, 0.5, 0.6]).is_err());
        assert!(GroundTruthSensor::new(rows.clone(), vec![1.0, 0.5]).is_err());
        assert!(GroundTruthSensor::new(rows, vec![1.0, 0.7, 0.5]).is_ok());
    }

    #[test]
    fn jittered_boxes_stay_in_bounds() {
        let scene = generate_scene(&spec(), "s", 21).unwrap();
        let sensor = GroundTruthSensor::default_schedule(5, 7);
        let frame = FocalFrame::new((10.0, 10.0), (640, 480), 0.156).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        for _ in 0..500 {
            for det in sense(&scene, &sensor, &frame, &mut rng) {
                assert!(det.bbox.x_min >= 0.0 && det.bbox.x_max <= 640.0);
                assert!(det.bbox.y_min >= 0.0 && det.bbox.y_max <= 480.0);
                assert!(det.bbox.x_min < det.bbox.x_max);
                assert!(det.bbox.y_min < det.bbox.y_max);
            }
        }
    }
}
