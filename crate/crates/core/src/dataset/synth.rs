use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{io_err, DatasetError, SignerRecord};
use crate::landmark::{PointerSample, Posture};
use crate::nn::derived_rng;
use crate::raster::SignatureImage;
use crate::stroke::{export_signature, SmoothingConfig, StrokeSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeryMode {
    /// Forgeries follow an unrelated template drawn from another seed.
    OtherSeed,
    /// Forgeries follow the signer's template with ten times the jitter.
    HeavyPerturb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_signers: usize,
    pub genuine_per_signer: usize,
    pub forged_per_signer: usize,
    /// Standard deviation, in pixels, of the per-control-point jitter.
    pub jitter_sigma: f64,
    pub forgery_mode: ForgeryMode,
    pub canvas_w: u32,
    pub canvas_h: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_signers: 12,
            genuine_per_signer: 10,
            forged_per_signer: 10,
            jitter_sigma: 2.0,
            forgery_mode: ForgeryMode::OtherSeed,
            canvas_w: 220,
            canvas_h: 155,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_signers == 0 || self.genuine_per_signer == 0 || self.forged_per_signer == 0 {
            return Err(DatasetError::Synth("counts must be at least 1".into()));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(DatasetError::Synth(format!("jitter_sigma must be >= 0, got {}", self.jitter_sigma)));
        }
        if self.canvas_w < 3 * INSET as u32 || self.canvas_h < 3 * INSET as u32 {
            return Err(DatasetError::Synth(format!("canvas {}x{} is too small", self.canvas_w, self.canvas_h)));
        }
        Ok(())
    }
}

const INSET: f64 = 15.0;
const SAMPLES_PER_SEGMENT: usize = 12;
const FORGER_STREAM: u64 = 0xF0E6;

/// Control points of one signature, one list per stroke.
pub type Template = Vec<Vec<(f64, f64)>>;

/// A random one- or two-stroke template inside the canvas.
pub fn synth_template(rng: &mut ChaCha8Rng, canvas_w: u32, canvas_h: u32) -> Template {
    let (w, h) = (canvas_w as f64, canvas_h as f64);
    let strokes = rng.random_range(1..=2);
    (0..strokes)
        .map(|_| {
            let n = rng.random_range(5..=8);
            (0..n)
                .map(|_| (rng.random_range(INSET..w - INSET), rng.random_range(INSET..h - INSET)))
                .collect()
        })
        .collect()
}

fn jitter(template: &Template, sigma: f64, rng: &mut ChaCha8Rng) -> Template {
    if sigma == 0.0 {
        return template.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    template
        .iter()
        .map(|s| s.iter().map(|&(x, y)| (x + normal.sample(rng), y + normal.sample(rng))).collect())
        .collect()
}

/// Uniform Catmull-Rom spline through the control points, endpoints repeated.
fn catmull_rom(ctrl: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if ctrl.len() < 2 {
        return ctrl.to_vec();
    }
    let at = |i: isize| ctrl[i.clamp(0, ctrl.len() as isize - 1) as usize];
    let mut out = Vec::with_capacity((ctrl.len() - 1) * SAMPLES_PER_SEGMENT + 1);
    for i in 0..ctrl.len() as isize - 1 {
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        for k in 0..SAMPLES_PER_SEGMENT {
            let t = k as f64 / SAMPLES_PER_SEGMENT as f64;
            let (t2, t3) = (t * t, t * t * t);
            let f = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b + (c - a) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (3.0 * b - a - 3.0 * c + d) * t3)
            };
            out.push((f(p0.0, p1.0, p2.0, p3.0), f(p0.1, p1.1, p2.1, p3.1)));
        }
    }
    out.push(*ctrl.last().expect("non-empty"));
    out
}

/// Draws a template through the stroke engine and crops it like a capture.
pub fn render_template(template: &Template, canvas_w: u32, canvas_h: u32) -> Result<SignatureImage, DatasetError> {
    let cfg = SmoothingConfig { alpha: 1.0, ..SmoothingConfig::default() };
    let render_err = |e: crate::stroke::StrokeError| DatasetError::Synth(e.to_string());
    let mut session = StrokeSession::new(canvas_w, canvas_h, cfg).map_err(render_err)?;
    let mut t_ms = 0;
    for stroke in template {
        for (x, y) in catmull_rom(stroke) {
            session.feed(Posture::Active, PointerSample { x_px: x, y_px: y, t_ms }).map_err(render_err)?;
            t_ms += 33;
        }
        session.feed(Posture::Stop, PointerSample { x_px: 0.0, y_px: 0.0, t_ms }).map_err(render_err)?;
    }
    let img = session.rasterize().map_err(render_err)?;
    export_signature(&img, cfg.crop_margin_px).map_err(render_err)
}

struct SynthSigner {
    id: String,
    genuine: Vec<SignatureImage>,
    forged: Vec<SignatureImage>,
}

fn synth_signer(cfg: &SynthConfig, i: usize) -> Result<SynthSigner, DatasetError> {
    let i = i as u64;
    let template = synth_template(&mut derived_rng(cfg.seed, &[i, 0]), cfg.canvas_w, cfg.canvas_h);
    let (forger_template, forger_sigma) = match cfg.forgery_mode {
        ForgeryMode::OtherSeed => (
            synth_template(&mut derived_rng(cfg.seed, &[FORGER_STREAM, i]), cfg.canvas_w, cfg.canvas_h),
            cfg.jitter_sigma,
        ),
        ForgeryMode::HeavyPerturb => (template.clone(), 10.0 * cfg.jitter_sigma),
    };
    let draw = |t: &Template, sigma: f64, kind: u64, j: usize| {
        render_template(&jitter(t, sigma, &mut derived_rng(cfg.seed, &[i, kind, j as u64])), cfg.canvas_w, cfg.canvas_h)
    };
    Ok(SynthSigner {
        id: format!("s{i:03}"),
        genuine: (0..cfg.genuine_per_signer).map(|j| draw(&template, cfg.jitter_sigma, 1, j)).collect::<Result<_, _>>()?,
        forged: (0..cfg.forged_per_signer).map(|j| draw(&forger_template, forger_sigma, 2, j)).collect::<Result<_, _>>()?,
    })
}

fn write_images(dir: &Path, images: &[SignatureImage]) -> Result<Vec<std::path::PathBuf>, DatasetError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    images
        .iter()
        .enumerate()
        .map(|(j, img)| {
            let path = dir.join(format!("{j:03}.png"));
            img.save_png(&path).map_err(|source| DatasetError::Image { path: path.display().to_string(), source })?;
            Ok(path)
        })
        .collect()
}

/// Writes a deterministic synthetic corpus below `out` in the per-signer
/// directory layout and returns its records.
pub fn synth_generate(cfg: &SynthConfig, out: &Path) -> Result<Vec<SignerRecord>, DatasetError> {
    cfg.validate()?;
    (0..cfg.n_signers)
        .into_par_iter()
        .map(|i| {
            let s = synth_signer(cfg, i)?;
            let dir = out.join(&s.id);
            Ok(SignerRecord {
                genuine: write_images(&dir.join("genuine"), &s.genuine)?,
                forged: write_images(&dir.join("forged"), &s.forged)?,
                signer_id: s.id,
            })
        })
        .collect()
}
