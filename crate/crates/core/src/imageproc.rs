//! Verification preprocessing: bilinear resize to a fixed size, inversion so
//! the background is zero, and scaling into `[0, 1]`.

use thiserror::Error;

use crate::raster::SignatureImage;

/// Network input height for the full-size model.
pub const INPUT_H: usize = 155;
/// Network input width for the full-size model.
pub const INPUT_W: usize = 220;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("requested output size must be positive, got {0}x{1}")]
    ZeroSize(usize, usize),
    #[error("matrix data has {got} values, expected {expected}")]
    BufferSize { got: usize, expected: usize },
    #[error("value {value} at index {index} is outside [0, 255]")]
    OutOfRange { index: usize, value: f64 },
}

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, PreprocessError> {
        if rows == 0 || cols == 0 {
            return Err(PreprocessError::ZeroSize(rows, cols));
        }
        if data.len() != rows * cols {
            return Err(PreprocessError::BufferSize { got: data.len(), expected: rows * cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_image(img: &SignatureImage) -> Self {
        Self {
            rows: img.height(),
            cols: img.width(),
            data: img.pixels().iter().map(|&p| p as f64).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// A preprocessed signature: values in `[0, 1]`, ink high, background zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSignature(Matrix);

impl NormalizedSignature {
    pub fn height(&self) -> usize {
        self.0.rows
    }

    pub fn width(&self) -> usize {
        self.0.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.0.data
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Source coordinate for output index `dst` under half-pixel-centre mapping,
/// clamped to the valid source range.
fn source_coord(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear resize of a matrix.
pub fn resize_matrix(m: &Matrix, out_h: usize, out_w: usize) -> Result<Matrix, PreprocessError> {
    if out_h == 0 || out_w == 0 {
        return Err(PreprocessError::ZeroSize(out_h, out_w));
    }
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|x| source_coord(x, m.cols, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = source_coord(y, m.rows, out_h);
        let r0 = &m.data[y0 * m.cols..(y0 + 1) * m.cols];
        let r1 = &m.data[y1 * m.cols..(y1 + 1) * m.cols];
        for &(x0, x1, fx) in &cols {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            data.push(top + (bottom - top) * fy);
        }
    }
    Matrix::new(out_h, out_w, data)
}

/// Bilinear resize of a grayscale image to `out_h` x `out_w`.
pub fn resize_bilinear(img: &SignatureImage, out_h: usize, out_w: usize) -> Result<Matrix, PreprocessError> {
    resize_matrix(&Matrix::from_image(img), out_h, out_w)
}

/// `(255 - v) / 255`, so background maps to 0 and full ink to 1.
pub fn invert_normalize(m: Matrix) -> Result<NormalizedSignature, PreprocessError> {
    let mut data = m.data;
    for (index, v) in data.iter_mut().enumerate() {
        if !(0.0..=255.0).contains(v) {
            return Err(PreprocessError::OutOfRange { index, value: *v });
        }
        *v = (255.0 - *v) / 255.0;
    }
    Ok(NormalizedSignature(Matrix { rows: m.rows, cols: m.cols, data }))
}

/// Resize to `(out_h, out_w)`, then invert and normalize.
pub fn preprocess_to(img: &SignatureImage, out_h: usize, out_w: usize) -> Result<NormalizedSignature, PreprocessError> {
    invert_normalize(resize_bilinear(img, out_h, out_w)?)
}

/// Full-size preprocessing to 155 x 220.
pub fn preprocess(img: &SignatureImage) -> Result<NormalizedSignature, PreprocessError> {
    preprocess_to(img, INPUT_H, INPUT_W)
}
