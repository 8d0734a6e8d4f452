//! Posture-gated stroke capture: smoothing, continuity and rasterization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landmark::{PointerSample, Posture};
use crate::raster::{line_pixels, RasterError, SignatureImage};

pub const DEFAULT_CANVAS_W: u32 = 640;
pub const DEFAULT_CANVAS_H: u32 = 480;

#[derive(Debug, Error)]
pub enum StrokeError {
    #[error("smoothing alpha must be in (0, 1], got {0}")]
    Alpha(f64),
    #[error("canvas dimensions must be positive, got {0}x{1}")]
    Canvas(u32, u32),
    #[error("sample at t={got} ms precedes the last stroke point at t={last} ms")]
    TimeReversed { got: u64, last: u64 },
    #[error("signature contains no ink")]
    EmptySignature,
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// EMA weight of the newest raw sample.
    pub alpha: f64,
    pub brush_radius_px: u32,
    pub crop_margin_px: u32,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            brush_radius_px: 2,
            crop_margin_px: 10,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<(), StrokeError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(StrokeError::Alpha(self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokePoint {
    pub x: f64,
    pub y: f64,
    pub t_ms: u64,
}

/// A maximal run of drawn points between pen-down and pen-up.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stroke {
    points: Vec<StrokePoint>,
}

impl Stroke {
    pub fn points(&self) -> &[StrokePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionEvent {
    PointAdded,
    StrokeClosed,
    Cleared,
    None,
}

#[derive(Debug, Clone)]
pub struct StrokeSession {
    canvas_w: u32,
    canvas_h: u32,
    strokes: Vec<Stroke>,
    pen_down: bool,
    ema_state: Option<(f64, f64)>,
    posture: Posture,
    config: SmoothingConfig,
}

impl StrokeSession {
    pub fn new(canvas_w: u32, canvas_h: u32, config: SmoothingConfig) -> Result<Self, StrokeError> {
        if canvas_w == 0 || canvas_h == 0 {
            return Err(StrokeError::Canvas(canvas_w, canvas_h));
        }
        config.validate()?;
        Ok(Self {
            canvas_w,
            canvas_h,
            strokes: Vec::new(),
            pen_down: false,
            ema_state: None,
            posture: Posture::Neutral,
            config,
        })
    }

    pub fn canvas(&self) -> (u32, u32) {
        (self.canvas_w, self.canvas_h)
    }

    pub fn config(&self) -> &SmoothingConfig {
        &self.config
    }

    pub fn strokes(&self) -> &[Stroke] {
        &self.strokes
    }

    pub fn posture(&self) -> Posture {
        self.posture
    }

    /// Last smoothed point of the open stroke, if the pen is down.
    pub fn current_point(&self) -> Option<(f64, f64)> {
        self.ema_state
    }

    /// Advances the session by one posture-tagged pointer sample.
    ///
    /// Active samples are clamped to the canvas, smoothed with an exponential
    /// moving average (the first sample after pen-up is taken raw) and appended
    /// to the open stroke. Stop and Neutral lift the pen. Erase discards
    /// everything.
    pub fn feed(&mut self, posture: Posture, sample: PointerSample) -> Result<SessionEvent, StrokeError> {
        self.posture = posture;
        match posture {
            Posture::Active => {
                let x = sample.x_px.clamp(0.0, self.canvas_w as f64);
                let y = sample.y_px.clamp(0.0, self.canvas_h as f64);
                if self.pen_down {
                    let last = self.strokes.last().and_then(|s| s.points.last()).map(|p| p.t_ms);
                    if let Some(last) = last.filter(|&l| sample.t_ms < l) {
                        return Err(StrokeError::TimeReversed { got: sample.t_ms, last });
                    }
                }
                let a = self.config.alpha;
                let (sx, sy) = match self.ema_state {
                    Some((px, py)) => (a * x + (1.0 - a) * px, a * y + (1.0 - a) * py),
                    None => (x, y),
                };
                self.ema_state = Some((sx, sy));
                if !self.pen_down {
                    self.strokes.push(Stroke::default());
                    self.pen_down = true;
                }
                let stroke = self.strokes.last_mut().expect("open stroke");
                stroke.points.push(StrokePoint { x: sx, y: sy, t_ms: sample.t_ms });
                Ok(SessionEvent::PointAdded)
            }
            Posture::Stop | Posture::Neutral => {
                self.ema_state = None;
                if self.pen_down {
                    self.pen_down = false;
                    Ok(SessionEvent::StrokeClosed)
                } else {
                    Ok(SessionEvent::None)
                }
            }
            Posture::Erase => Ok(if self.clear() {
                SessionEvent::Cleared
            } else {
                SessionEvent::None
            }),
        }
    }

    /// Discards all strokes; returns whether anything was discarded.
    pub fn clear(&mut self) -> bool {
        let had_any = !self.strokes.is_empty();
        self.strokes.clear();
        self.pen_down = false;
        self.ema_state = None;
        had_any
    }

    /// Consecutive point pairs within strokes; no pair ever spans two strokes.
    pub fn segments(&self) -> impl Iterator<Item = (&StrokePoint, &StrokePoint)> {
        self.strokes
            .iter()
            .flat_map(|s| s.points.windows(2).map(|w| (&w[0], &w[1])))
    }

    fn to_pixel(&self, p: &StrokePoint) -> (i64, i64) {
        let x = (p.x.round() as i64).clamp(0, self.canvas_w as i64 - 1);
        let y = (p.y.round() as i64).clamp(0, self.canvas_h as i64 - 1);
        (x, y)
    }

    /// Draws every stroke onto a blank canvas-sized image.
    pub fn rasterize(&self) -> Result<SignatureImage, StrokeError> {
        if self.strokes.iter().all(Stroke::is_empty) {
            return Err(StrokeError::EmptySignature);
        }
        let mut img = SignatureImage::blank(self.canvas_w as usize, self.canvas_h as usize)?;
        let radius = self.config.brush_radius_px;
        for stroke in &self.strokes {
            if let [only] = stroke.points.as_slice() {
                let (x, y) = self.to_pixel(only);
                img.stamp_disc(x, y, radius);
            }
        }
        for (a, b) in self.segments() {
            for (x, y) in line_pixels(self.to_pixel(a), self.to_pixel(b)) {
                img.stamp_disc(x, y, radius);
            }
        }
        Ok(img)
    }
}

/// Crops to the ink bounding box grown by `margin` on every side, clamped to
/// the image.
pub fn export_signature(img: &SignatureImage, margin: u32) -> Result<SignatureImage, StrokeError> {
    let (x0, y0, x1, y1) = img.ink_bounds().ok_or(StrokeError::EmptySignature)?;
    let m = margin as usize;
    Ok(img.crop(
        x0.saturating_sub(m),
        y0.saturating_sub(m),
        (x1 + m).min(img.width() - 1),
        (y1 + m).min(img.height() - 1),
    )?)
}
