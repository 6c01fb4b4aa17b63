//! Artificial foveation: elliptic fovea geometry, Mahalanobis distance to
//! the focal point, discrete peripheral distortion levels, and the
//! pyramid-blend transform that progressively blurs the periphery.

use crate::raster::{gaussian_blur_plane, Raster, RasterError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FoveaError {
    #[error("eta must be positive, got {0}")]
    BadEta(f64),
    #[error("pyramid needs at least 2 levels, got {0}")]
    TooFewLevels(usize),
    #[error("distortion levels must be >= 1, got {0}")]
    BadDistortionLevels(u32),
    #[error("focal point ({0}, {1}) outside image {2}x{3}")]
    FocalOutOfBounds(f64, f64, u32, u32),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Fovea shape and discretization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoveaConfig {
    /// Fovea-to-image size ratio: sigma0 = eta * (width, height).
    pub eta: f64,
    /// Pyramid depth for the foveation transform.
    pub levels: usize,
    /// Number of discrete peripheral distortion levels D.
    pub distortion_levels: u32,
    /// Blur of pyramid level l >= 1 is 2^l * sigma_base pixels; level 0 is
    /// the untouched source image.
    pub sigma_base: f64,
    /// The blend bands cover Mahalanobis distances [0, band_span]. Distances
    /// beyond the span saturate at the deepest blur level.
    pub band_span: f64,
}

impl Default for FoveaConfig {
    fn default() -> Self {
        Self {
            eta: 0.156,
            levels: 5,
            distortion_levels: 7,
            sigma_base: 1.0,
            band_span: 4.0,
        }
    }
}

impl FoveaConfig {
    pub fn validate(&self) -> Result<(), FoveaError> {
        if !(self.eta > 0.0) {
            return Err(FoveaError::BadEta(self.eta));
        }
        if self.levels < 2 {
            return Err(FoveaError::TooFewLevels(self.levels));
        }
        if self.distortion_levels < 1 {
            return Err(FoveaError::BadDistortionLevels(self.distortion_levels));
        }
        Ok(())
    }
}

/// A fixation bound to an image: focal point plus the elliptic fovea axes
/// sigma0 = eta * (width, height).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalFrame {
    pub focal: (f64, f64),
    pub image_dims: (u32, u32),
    pub sigma: (f64, f64),
}

impl FocalFrame {
    pub fn new(focal: (f64, f64), image_dims: (u32, u32), eta: f64) -> Result<Self, FoveaError> {
        if !(eta > 0.0) {
            return Err(FoveaError::BadEta(eta));
        }
        let (w, h) = image_dims;
        if focal.0 < 0.0 || focal.1 < 0.0 || focal.0 >= w as f64 || focal.1 >= h as f64 {
            return Err(FoveaError::FocalOutOfBounds(focal.0, focal.1, w, h));
        }
        Ok(Self {
            focal,
            image_dims,
            sigma: (eta * w as f64, eta * h as f64),
        })
    }

    /// Mahalanobis distance of a point from the focal point under the
    /// diagonal covariance diag(sigma_x^2, sigma_y^2):
    /// sqrt((dx/sigma_x)^2 + (dy/sigma_y)^2).
    pub fn mahalanobis(&self, point: (f64, f64)) -> f64 {
        let dx = (point.0 - self.focal.0) / self.sigma.0;
        let dy = (point.1 - self.focal.1) / self.sigma.1;
        (dx * dx + dy * dy).sqrt()
    }

    /// Largest Mahalanobis distance among the four image corners; the far
    /// edge of the distortion-level binning.
    pub fn corner_distance(&self) -> f64 {
        let (w, h) = self.image_dims;
        let xs = [0.0, (w - 1) as f64];
        let ys = [0.0, (h - 1) as f64];
        let mut worst = 0.0f64;
        for &x in &xs {
            for &y in &ys {
                worst = worst.max(self.mahalanobis((x, y)));
            }
        }
        worst
    }

    /// Discrete distortion level in 1..=d_levels: the interval
    /// [0, corner_distance] is split uniformly, d = 1 + floor(D * m / m_max),
    /// clamped.
    pub fn distortion_level(&self, point: (f64, f64), d_levels: u32) -> u32 {
        let m_max = self.corner_distance();
        if m_max <= 0.0 {
            return 1;
        }
        let m = self.mahalanobis(point);
        let d = 1 + (d_levels as f64 * m / m_max).floor() as i64;
        d.clamp(1, d_levels as i64) as u32
    }
}

/// Foveate an image around the frame's focal point.
///
/// Level 0 of the pyramid is the source image; level l >= 1 is blurred with
/// sigma_l = 2^l * sigma_base. Pixels are blended with Gaussian band
/// weights over the Mahalanobis distance: band centers sit uniformly on
/// [0, band_span], the band width is half the center spacing, and each
/// band's support is truncated at one full spacing so the fovea itself
/// passes through bit-exact.
pub fn foveate(image: &Raster, frame: &FocalFrame, config: &FoveaConfig) -> Result<Raster, FoveaError> {
    config.validate()?;
    let (w, h) = (image.width(), image.height());
    if (w, h) != frame.image_dims {
        return Err(RasterError::DimMismatch(
            w,
            h,
            frame.image_dims.0,
            frame.image_dims.1,
        )
        .into());
    }

    let levels = config.levels;
    let planes = image.to_planes();
    // pyramid[l][channel] -> plane
    let mut pyramid: Vec<Vec<Vec<f32>>> = Vec::with_capacity(levels);
    pyramid.push(planes.clone());
    for l in 1..levels {
        let sigma = config.sigma_base * (1u64 << l) as f64;
        pyramid.push(
            planes
                .iter()
                .map(|p| gaussian_blur_plane(p, w, h, sigma))
                .collect(),
        );
    }

    let spacing = config.band_span / (levels - 1) as f64;
    let width = spacing / 2.0;
    let centers: Vec<f64> = (0..levels).map(|l| l as f64 * spacing).collect();

    let mut out_planes: Vec<Vec<f32>> = vec![vec![0.0; (w * h) as usize]; image.channels() as usize];
    let mut weights = vec![0.0f64; levels];
    for y in 0..h {
        for x in 0..w {
            let m = frame
                .mahalanobis((x as f64, y as f64))
                .min(config.band_span);
            let mut total = 0.0;
            for (l, &c) in centers.iter().enumerate() {
                let d = m - c;
                weights[l] = if d.abs() < spacing {
                    (-d * d / (2.0 * width * width)).exp()
                } else {
                    0.0
                };
                total += weights[l];
            }
            let i = (y * w + x) as usize;
            for (ch, plane) in out_planes.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (l, &wl) in weights.iter().enumerate() {
                    if wl > 0.0 {
                        acc += wl / total * pyramid[l][ch][i] as f64;
                    }
                }
                plane[i] = acc as f32;
            }
        }
    }

    Ok(Raster::from_planes(w, h, &out_planes)?)
}

/// The normalized band weights at one Mahalanobis distance; exposed for
/// tests of the partition-of-unity property.
pub fn band_weights(m: f64, config: &FoveaConfig) -> Vec<f64> {
    let levels = config.levels;
    let spacing = config.band_span / (levels - 1) as f64;
    let width = spacing / 2.0;
    let m = m.min(config.band_span);
    let mut w: Vec<f64> = (0..levels)
        .map(|l| {
            let d = m - l as f64 * spacing;
            if d.abs() < spacing {
                (-d * d / (2.0 * width * width)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}
