//! Grayscale signature rasters, integer line stepping and PNG I/O.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};
use thiserror::Error;

pub const INK: u8 = 0;
pub const BACKGROUND: u8 = 255;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image dimensions must be positive, got {0}x{1}")]
    Dimensions(usize, usize),
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferSize { got: usize, expected: usize },
    #[error("signature contains no ink")]
    EmptySignature,
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("image encode failed: {0}")]
    Encode(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

/// Row-major 8-bit grayscale raster; 0 is ink, 255 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl SignatureImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Dimensions(width, height));
        }
        if pixels.len() != width * height {
            return Err(RasterError::BufferSize {
                got: pixels.len(),
                expected: width * height,
            });
        }
        Ok(Self { width, height, pixels })
    }

    /// A blank (all background) canvas.
    pub fn blank(width: usize, height: usize) -> Result<Self, RasterError> {
        Self::new(width, height, vec![BACKGROUND; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != BACKGROUND).count()
    }

    /// Bounding box `(x0, y0, x1, y1)` (inclusive) of non-background pixels.
    pub fn ink_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            let row = &self.pixels[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&p| p != BACKGROUND) else {
                continue;
            };
            let last = row.iter().rposition(|&p| p != BACKGROUND).unwrap();
            bounds = Some(match bounds {
                None => (first, y, last, y),
                Some((x0, y0, x1, _)) => (x0.min(first), y0, x1.max(last), y),
            });
        }
        bounds
    }

    /// Copies the inclusive rectangle `(x0, y0)..=(x1, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self, RasterError> {
        if x1 < x0 || y1 < y0 || x1 >= self.width || y1 >= self.height {
            return Err(RasterError::Dimensions(
                x1.saturating_sub(x0) + 1,
                y1.saturating_sub(y0) + 1,
            ));
        }
        let w = x1 - x0 + 1;
        let mut pixels = Vec::with_capacity(w * (y1 - y0 + 1));
        for y in y0..=y1 {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..=y * self.width + x1]);
        }
        Self::new(w, y1 - y0 + 1, pixels)
    }

    /// Stamps a filled disc of `radius` ink pixels centred on `(cx, cy)`, clipped
    /// to the raster.
    pub fn stamp_disc(&mut self, cx: i64, cy: i64, radius: u32) {
        let r = radius as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                    self.set(x as usize, y as usize, INK);
                }
            }
        }
    }

    /// Encodes as 8-bit grayscale non-interlaced PNG.
    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer size checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| RasterError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|e| RasterError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Decodes PNG bytes. Colour inputs are reduced with 0.299/0.587/0.114
    /// luminance weights; transparency is composited over white background.
    pub fn from_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| RasterError::Decode(e.to_string()))?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let bytes = std::fs::read(path).map_err(|e| RasterError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_png(&bytes).map_err(|e| RasterError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    fn from_dynamic(img: &DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = match img {
            DynamicImage::ImageLuma8(g) => g.as_raw().clone(),
            _ => img
                .to_rgba8()
                .pixels()
                .map(|p| {
                    let [r, g, b, a] = p.0;
                    let luma = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
                    let alpha = a as f64 / 255.0;
                    (luma * alpha + 255.0 * (1.0 - alpha)).round().clamp(0.0, 255.0) as u8
                })
                .collect(),
        };
        Self { width: w, height: h, pixels }
    }
}

/// Integer line stepping (Bresenham) from `a` to `b`, both endpoints included.
pub fn line_pixels(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push((x, y));
        if x == b.0 && y == b.1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}
