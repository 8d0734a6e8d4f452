use std::time::SystemTime;

use base64::Engine;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::landmark::{detect_fingers_up, pointer_of, FrameMessage, LandmarkFrame, Posture, PostureDebouncer};
use crate::raster::SignatureImage;
use crate::stroke::{
    export_signature, SessionEvent, SmoothingConfig, StrokeError, StrokeSession, DEFAULT_CANVAS_H, DEFAULT_CANVAS_W,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    pub canvas_w: u32,
    pub canvas_h: u32,
    pub debounce: usize,
    pub smoothing: SmoothingConfig,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            canvas_w: DEFAULT_CANVAS_W,
            canvas_h: DEFAULT_CANVAS_H,
            debounce: crate::landmark::DEFAULT_DEBOUNCE,
            smoothing: SmoothingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome {
    pub posture: Posture,
    pub event: SessionEvent,
    pub point: Option<(f64, f64)>,
}

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("frame dropped: timestamp {got} ms precedes previous frame at {last} ms")]
    OutOfOrder { got: u64, last: u64 },
    #[error(transparent)]
    Stroke(#[from] StrokeError),
}

/// Frame-to-stroke pipeline: finger detection, debounced posture, pointer
/// and stroke session.
#[derive(Debug, Clone)]
pub struct CapturePipeline {
    debouncer: PostureDebouncer,
    session: StrokeSession,
    margin: u32,
    last_t_ms: Option<u64>,
}

impl CapturePipeline {
    pub fn new(cfg: &CaptureConfig) -> Result<Self, StrokeError> {
        Ok(Self {
            debouncer: PostureDebouncer::new(cfg.debounce),
            session: StrokeSession::new(cfg.canvas_w, cfg.canvas_h, cfg.smoothing)?,
            margin: cfg.smoothing.crop_margin_px,
            last_t_ms: None,
        })
    }

    pub fn process(&mut self, frame: &LandmarkFrame) -> Result<FrameOutcome, CaptureError> {
        if let Some(last) = self.last_t_ms.filter(|&l| frame.t_ms() < l) {
            return Err(CaptureError::OutOfOrder { got: frame.t_ms(), last });
        }
        self.last_t_ms = Some(frame.t_ms());
        let posture = self.debouncer.push(Posture::from_fingers(detect_fingers_up(frame)));
        let event = self.session.feed(posture, pointer_of(frame))?;
        Ok(FrameOutcome { posture, event, point: self.session.current_point() })
    }

    pub fn clear(&mut self) -> FrameOutcome {
        let event = if self.session.clear() { SessionEvent::Cleared } else { SessionEvent::None };
        FrameOutcome { posture: self.debouncer.current(), event, point: None }
    }

    pub fn last_t_ms(&self) -> Option<u64> {
        self.last_t_ms
    }

    pub fn session(&self) -> &StrokeSession {
        &self.session
    }

    /// Rasterizes the strokes and crops them with the configured margin.
    pub fn export(&self) -> Result<SignatureImage, StrokeError> {
        export_signature(&self.session.rasterize()?, self.margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplayStats {
    pub frames: usize,
    pub dropped: usize,
    pub strokes: usize,
}

/// Feeds a recorded trace through the capture pipeline and exports the
/// signature. Out-of-order frames are skipped, as in a live session.
pub fn replay(frames: &[LandmarkFrame], cfg: &CaptureConfig) -> Result<(SignatureImage, ReplayStats), StrokeError> {
    let mut pipeline = CapturePipeline::new(cfg)?;
    let mut stats = ReplayStats { frames: frames.len(), ..ReplayStats::default() };
    for f in frames {
        match pipeline.process(f) {
            Ok(_) => {}
            Err(CaptureError::OutOfOrder { got, last }) => {
                warn!(got, last, "replay: frame dropped");
                stats.dropped += 1;
            }
            Err(CaptureError::Stroke(e)) => return Err(e),
        }
    }
    stats.strokes = pipeline.session().strokes().len();
    Ok((pipeline.export()?, stats))
}

/// Client-to-server socket message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inbound {
    Frame(FrameMessage),
    Finish,
    Clear,
}

/// Server-to-client socket message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Event {
        posture: Posture,
        event: SessionEvent,
        point: Option<[f64; 2]>,
    },
    Signature {
        png_base64: String,
    },
    Error {
        msg: String,
    },
}

impl Outbound {
    pub fn error(msg: impl Into<String>) -> Self {
        Outbound::Error { msg: msg.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outbound serializes")
    }
}

impl From<FrameOutcome> for Outbound {
    fn from(o: FrameOutcome) -> Self {
        Outbound::Event { posture: o.posture, event: o.event, point: o.point.map(|(x, y)| [x, y]) }
    }
}

/// One live capture session. Every inbound message yields exactly one
/// outbound message; errors never end the session.
#[derive(Debug, Clone)]
pub struct SessionState {
    id: String,
    created_at: SystemTime,
    pipeline: CapturePipeline,
}

impl SessionState {
    pub fn new(id: impl Into<String>, cfg: &CaptureConfig) -> Result<Self, StrokeError> {
        Ok(Self { id: id.into(), created_at: SystemTime::now(), pipeline: CapturePipeline::new(cfg)? })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn created_at(&self) -> SystemTime {
        self.created_at
    }

    pub fn last_t_ms(&self) -> Option<u64> {
        self.pipeline.last_t_ms()
    }

    pub fn pipeline(&self) -> &CapturePipeline {
        &self.pipeline
    }

    pub fn handle(&mut self, msg: Inbound) -> Outbound {
        match msg {
            Inbound::Frame(m) => match LandmarkFrame::try_from(m) {
                Err(e) => Outbound::error(e.to_string()),
                Ok(frame) => match self.pipeline.process(&frame) {
                    Ok(o) => o.into(),
                    Err(e) => {
                        warn!(session = %self.id, "{e}");
                        Outbound::error(e.to_string())
                    }
                },
            },
            Inbound::Clear => self.pipeline.clear().into(),
            Inbound::Finish => match self.pipeline.export().and_then(|img| Ok(img.to_png()?)) {
                Ok(png) => Outbound::Signature { png_base64: base64::engine::general_purpose::STANDARD.encode(png) },
                Err(e) => Outbound::error(e.to_string()),
            },
        }
    }

    pub fn handle_text(&mut self, text: &str) -> Outbound {
        match serde_json::from_str::<Inbound>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => Outbound::error(format!("malformed message: {e}")),
        }
    }
}
