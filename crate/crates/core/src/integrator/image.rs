//! Linear-radiance images, bit-exact PFM io, and comparison metrics.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::math::Rgb;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed pfm: {0}")]
    Malformed(String),
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Image { width, height, pixels: vec![Rgb::BLACK; (width * height) as usize] }
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        self.pixels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut Rgb {
        &mut self.pixels[(y * self.width + x) as usize]
    }

    pub fn all_finite(&self) -> bool {
        self.pixels.iter().all(|p| p.is_finite())
    }

    /// PFM, little-endian: header `PF\n{w} {h}\n-1.0\n`, then rows bottom to
    /// top, three f32 per pixel.
    pub fn write_pfm(&self, path: &Path) -> Result<(), ImageError> {
        let mut buf: Vec<u8> = Vec::with_capacity(64 + self.pixels.len() * 12);
        buf.extend_from_slice(format!("PF\n{} {}\n-1.0\n", self.width, self.height).as_bytes());
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                let p = self.pixel(x, y);
                for c in 0..3 {
                    buf.extend_from_slice(&(p[c] as f32).to_le_bytes());
                }
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn read_pfm(path: &Path) -> Result<Self, ImageError> {
        let mut data = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut data)?;
        // header: three whitespace-separated tokens after "PF"
        if !data.starts_with(b"PF\n") {
            return Err(ImageError::Malformed("missing PF magic".into()));
        }
        let mut pos = 3;
        let mut tokens = Vec::new();
        while tokens.len() < 3 {
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= data.len() {
                return Err(ImageError::Malformed("truncated header".into()));
            }
            tokens.push(
                std::str::from_utf8(&data[start..pos])
                    .map_err(|_| ImageError::Malformed("bad header token".into()))?
                    .to_string(),
            );
            pos += 1; // single whitespace separator
        }
        let width: u32 =
            tokens[0].parse().map_err(|_| ImageError::Malformed("bad width".into()))?;
        let height: u32 =
            tokens[1].parse().map_err(|_| ImageError::Malformed("bad height".into()))?;
        let scale: f64 =
            tokens[2].parse().map_err(|_| ImageError::Malformed("bad scale".into()))?;
        if scale >= 0.0 {
            return Err(ImageError::Malformed("big-endian pfm not supported".into()));
        }
        let expected = (width * height) as usize * 12;
        if data.len() - pos != expected {
            return Err(ImageError::Malformed(format!(
                "payload size {} does not match {}x{}",
                data.len() - pos,
                width,
                height
            )));
        }
        let mut img = Image::new(width, height);
        let mut it = data[pos..].chunks_exact(4);
        for y in (0..height).rev() {
            for x in 0..width {
                let mut p = Rgb::BLACK;
                for c in 0..3 {
                    let bytes: [u8; 4] = it.next().unwrap().try_into().unwrap();
                    p[c] = f32::from_le_bytes(bytes) as f64;
                }
                *img.pixel_mut(x, y) = p;
            }
        }
        Ok(img)
    }

    /// 8-bit sRGB preview bytes (RGB row-major, top to bottom); clamp + gamma,
    /// documented as lossy.
    pub fn to_srgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 3);
        for p in &self.pixels {
            for c in 0..3 {
                let v = p[c].clamp(0.0, 1.0);
                let srgb = if v <= 0.0031308 { 12.92 * v } else { 1.055 * v.powf(1.0 / 2.4) - 0.055 };
                out.push((srgb * 255.0 + 0.5) as u8);
            }
        }
        out
    }
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64, ImageError> {
    if a.width != b.width || a.height != b.height {
        return Err(ImageError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    let mut total = 0.0;
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            let d = pa[c] - pb[c];
            total += d * d;
        }
    }
    Ok(total / (a.pixels.len() as f64 * 3.0))
}

/// Rendering-variance protocol: MSE of each render against a high-spp render
/// of the same method, averaged over the provided renders.
pub fn variance_protocol(renders: &[Image], self_reference: &Image) -> Result<f64, ImageError> {
    let mut total = 0.0;
    for r in renders {
        total += mse(r, self_reference)?;
    }
    Ok(total / renders.len().max(1) as f64)
}
