//! 8-bit rasters (1 or 3 channels), PNG / PPM / PGM file IO, separable
//! Gaussian blur and a patch sharpness measure.

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        source: image::ImageError,
    },
    #[error("unsupported channel count {0} (only 1 or 3)")]
    BadChannels(u8),
    #[error("empty raster")]
    Empty,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimMismatch(u32, u32, u32, u32),
}

/// Owned 8-bit image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u8) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Empty);
        }
        if channels != 1 && channels != 3 {
            return Err(RasterError::BadChannels(channels));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0; (width * height) as usize * channels as usize],
        })
    }

    pub fn from_data(
        width: u32,
        height: u32,
        channels: u8,
        data: Vec<u8>,
    ) -> Result<Self, RasterError> {
        let mut r = Self::new(width, height, channels)?;
        assert_eq!(data.len(), r.data.len());
        r.data = data;
        Ok(r)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let i = (y * self.width + x) as usize * self.channels as usize;
        &self.data[i..i + self.channels as usize]
    }

    pub fn put_pixel(&mut self, x: u32, y: u32, px: &[u8]) {
        let i = (y * self.width + x) as usize * self.channels as usize;
        self.data[i..i + self.channels as usize].copy_from_slice(px);
    }

    /// Planar f32 copy, one plane per channel, for filtering.
    pub fn to_planes(&self) -> Vec<Vec<f32>> {
        let n = (self.width * self.height) as usize;
        let ch = self.channels as usize;
        let mut planes = vec![vec![0.0f32; n]; ch];
        for (i, px) in self.data.chunks_exact(ch).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                planes[c][i] = v as f32;
            }
        }
        planes
    }

    pub fn from_planes(width: u32, height: u32, planes: &[Vec<f32>]) -> Result<Self, RasterError> {
        let ch = planes.len() as u8;
        let mut r = Self::new(width, height, ch)?;
        let chs = ch as usize;
        for (i, chunk) in r.data.chunks_exact_mut(chs).enumerate() {
            for (c, v) in chunk.iter_mut().enumerate() {
                *v = planes[c][i].round().clamp(0.0, 255.0) as u8;
            }
        }
        Ok(r)
    }

    /// Channel-averaged grayscale plane.
    pub fn luminance(&self) -> Vec<f32> {
        let ch = self.channels as usize;
        self.data
            .chunks_exact(ch)
            .map(|px| px.iter().map(|&v| v as f32).sum::<f32>() / ch as f32)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|source| RasterError::Image {
            path: path.display().to_string(),
            source,
        })?;
        Ok(match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Self::from_data(w, h, 1, g.into_raw())?
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Self::from_data(w, h, 3, rgb.into_raw())?
            }
        })
    }

    /// Write by extension: .png, .ppm (3-channel), .pgm (1-channel).
    pub fn save(&self, path: &Path) -> Result<(), RasterError> {
        let wrap = |source| RasterError::Image {
            path: path.display().to_string(),
            source,
        };
        match self.channels {
            1 => image::GrayImage::from_raw(self.width, self.height, self.data.clone())
                .expect("buffer sized by construction")
                .save(path)
                .map_err(wrap),
            3 => image::RgbImage::from_raw(self.width, self.height, self.data.clone())
                .expect("buffer sized by construction")
                .save(path)
                .map_err(wrap),
            c => Err(RasterError::BadChannels(c)),
        }
    }
}

/// Separable Gaussian blur with clamped borders. Kernel radius is 3 sigma.
pub fn gaussian_blur_plane(plane: &[f32], width: u32, height: u32, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32);
    }
    let norm: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let w = width as i64;
    let h = height as i64;
    let mut tmp = vec![0.0f32; plane.len()];
    for y in 0..h {
        let row = &plane[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sx = (x + ki as i64 - radius).clamp(0, w - 1);
                acc += row[sx as usize] * kv;
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0f32; plane.len()];
    for x in 0..w {
        for y in 0..h {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sy = (y + ki as i64 - radius).clamp(0, h - 1);
                acc += tmp[(sy * w + x) as usize] * kv;
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Blur every channel of an 8-bit raster.
pub fn gaussian_blur(raster: &Raster, sigma: f64) -> Raster {
    let planes: Vec<Vec<f32>> = raster
        .to_planes()
        .iter()
        .map(|p| gaussian_blur_plane(p, raster.width(), raster.height(), sigma))
        .collect();
    Raster::from_planes(raster.width(), raster.height(), &planes)
        .expect("same shape as source raster")
}

/// Variance of the 4-neighbour Laplacian inside a square patch; the usual
/// scalar proxy for local sharpness.
pub fn patch_sharpness(raster: &Raster, cx: u32, cy: u32, patch: u32) -> f64 {
    let lum = raster.luminance();
    let w = raster.width() as i64;
    let h = raster.height() as i64;
    let half = (patch / 2) as i64;
    let x0 = (cx as i64 - half).max(1);
    let x1 = (cx as i64 + half).min(w - 2);
    let y0 = (cy as i64 - half).max(1);
    let y1 = (cy as i64 + half).min(h - 2);
    let mut values = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let c = lum[(y * w + x) as usize] as f64;
            let lap = lum[((y - 1) * w + x) as usize] as f64
                + lum[((y + 1) * w + x) as usize] as f64
                + lum[(y * w + x - 1) as usize] as f64
                + lum[(y * w + x + 1) as usize] as f64
                - 4.0 * c;
            values.push(lap);
        }
    }
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64
}
