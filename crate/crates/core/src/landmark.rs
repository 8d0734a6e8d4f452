//! Hand-landmark frames, finger-up detection, posture classification and the
//! drawing pointer.
//!
//! Landmarks follow the 21-point hand topology: 0 is the wrist, then four
//! points per finger (MCP, PIP, DIP, TIP) from thumb to pinky. Coordinates are
//! normalized to the capture image with `y` growing downward, so a raised
//! fingertip has a *smaller* `y` than its PIP joint.

use std::collections::VecDeque;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of landmarks in one hand detection.
pub const LANDMARK_COUNT: usize = 21;

/// Landmark index of the index fingertip; the pointer is always taken from it.
pub const INDEX_TIP: usize = 8;

/// Default number of consecutive identical raw postures before a change is emitted.
pub const DEFAULT_DEBOUNCE: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("expected {LANDMARK_COUNT} landmarks, got {0}")]
    PointCount(usize),
    #[error("landmark {index} has non-normalized coordinate ({x}, {y})")]
    OutOfRange { index: usize, x: f64, y: f64 },
    #[error("landmark {index} has a non-finite depth")]
    NonFiniteDepth { index: usize },
    #[error("capture resolution must be positive, got {0}x{1}")]
    Resolution(u32, u32),
    #[error("malformed frame JSON: {0}")]
    Json(String),
}

/// One landmark: normalized `x`, `y` in `[0, 1]` and unconstrained relative depth `z`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Wire form of a frame: `{"t_ms": int, "w": int, "h": int, "pts": [[x,y,z] x 21]}`.
///
/// This is both the trace-file line format and the socket payload. Unknown
/// fields (such as a `"type"` tag) are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub t_ms: u64,
    pub w: u32,
    pub h: u32,
    pub pts: Vec<[f64; 3]>,
}

/// A validated, timestamped set of 21 hand landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    t_ms: u64,
    width_px: u32,
    height_px: u32,
    points: [Landmark; LANDMARK_COUNT],
}

impl LandmarkFrame {
    pub fn new(
        t_ms: u64,
        width_px: u32,
        height_px: u32,
        points: &[Landmark],
    ) -> Result<Self, FrameError> {
        if width_px == 0 || height_px == 0 {
            return Err(FrameError::Resolution(width_px, height_px));
        }
        if points.len() != LANDMARK_COUNT {
            return Err(FrameError::PointCount(points.len()));
        }
        for (index, p) in points.iter().enumerate() {
            let in_unit = |v: f64| (0.0..=1.0).contains(&v);
            if !in_unit(p.x) || !in_unit(p.y) {
                return Err(FrameError::OutOfRange { index, x: p.x, y: p.y });
            }
            if !p.z.is_finite() {
                return Err(FrameError::NonFiniteDepth { index });
            }
        }
        let mut arr = [Landmark::default(); LANDMARK_COUNT];
        arr.copy_from_slice(points);
        Ok(Self {
            t_ms,
            width_px,
            height_px,
            points: arr,
        })
    }

    pub fn t_ms(&self) -> u64 {
        self.t_ms
    }

    pub fn width_px(&self) -> u32 {
        self.width_px
    }

    pub fn height_px(&self) -> u32 {
        self.height_px
    }

    pub fn points(&self) -> &[Landmark; LANDMARK_COUNT] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Landmark {
        self.points[index]
    }

    pub fn to_message(&self) -> FrameMessage {
        FrameMessage {
            t_ms: self.t_ms,
            w: self.width_px,
            h: self.height_px,
            pts: self.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    /// Parses one trace line / socket payload.
    pub fn from_json(text: &str) -> Result<Self, FrameError> {
        let msg: FrameMessage =
            serde_json::from_str(text).map_err(|e| FrameError::Json(e.to_string()))?;
        Self::try_from(msg)
    }
}

impl TryFrom<FrameMessage> for LandmarkFrame {
    type Error = FrameError;

    fn try_from(msg: FrameMessage) -> Result<Self, Self::Error> {
        let points: Vec<Landmark> = msg
            .pts
            .iter()
            .map(|&[x, y, z]| Landmark { x, y, z })
            .collect();
        Self::new(msg.t_ms, msg.w, msg.h, &points)
    }
}

/// Reads a line-delimited JSON trace, skipping blank lines.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<LandmarkFrame>, TraceError> {
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TraceError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = LandmarkFrame::from_json(&line).map_err(|source| TraceError::Frame {
            line: i + 1,
            source,
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("reading trace: {0}")]
    Io(String),
    #[error("trace line {line}: {source}")]
    Frame { line: usize, source: FrameError },
}

/// The four fingers considered for postures. The thumb is excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Finger {
    Index,
    Middle,
    Ring,
    Pinky,
}

impl Finger {
    pub const ALL: [Finger; 4] = [Finger::Index, Finger::Middle, Finger::Ring, Finger::Pinky];

    pub fn tip(self) -> usize {
        match self {
            Finger::Index => 8,
            Finger::Middle => 12,
            Finger::Ring => 16,
            Finger::Pinky => 20,
        }
    }

    pub fn pip(self) -> usize {
        self.tip() - 2
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Set of raised fingers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FingerStates(u8);

impl FingerStates {
    pub const NONE: FingerStates = FingerStates(0);

    pub fn from_fingers(fingers: &[Finger]) -> Self {
        FingerStates(fingers.iter().fold(0, |acc, f| acc | f.bit()))
    }

    pub fn is_up(self, finger: Finger) -> bool {
        self.0 & finger.bit() != 0
    }

    pub fn up(self) -> impl Iterator<Item = Finger> {
        Finger::ALL.into_iter().filter(move |f| self.is_up(*f))
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }
}

impl fmt::Display for FingerStates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.up().map(|f| format!("{f:?}")).collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}

/// A finger is up iff its tip lies strictly above (smaller `y`) its PIP joint.
pub fn detect_fingers_up(frame: &LandmarkFrame) -> FingerStates {
    let up: Vec<Finger> = Finger::ALL
        .into_iter()
        .filter(|f| frame.point(f.tip()).y < frame.point(f.pip()).y)
        .collect();
    FingerStates::from_fingers(&up)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Posture {
    Active,
    Stop,
    Erase,
    Neutral,
}

impl Posture {
    /// Undebounced mapping from raised fingers to a command posture.
    pub fn from_fingers(states: FingerStates) -> Posture {
        use Finger::*;
        if states == FingerStates::from_fingers(&[Index]) {
            Posture::Active
        } else if states == FingerStates::from_fingers(&[Index, Middle]) {
            Posture::Stop
        } else if states == FingerStates::from_fingers(&Finger::ALL) {
            Posture::Erase
        } else {
            Posture::Neutral
        }
    }
}

/// Holds back posture changes until the same raw posture has been seen in
/// `window` consecutive frames.
#[derive(Debug, Clone)]
pub struct PostureDebouncer {
    window: usize,
    recent: VecDeque<Posture>,
    emitted: Posture,
}

impl Default for PostureDebouncer {
    fn default() -> Self {
        Self::new(DEFAULT_DEBOUNCE)
    }
}

impl PostureDebouncer {
    /// `window` of 0 is treated as 1 (no debouncing).
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self {
            window,
            recent: VecDeque::with_capacity(window),
            emitted: Posture::Neutral,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn current(&self) -> Posture {
        self.emitted
    }

    /// Pushes one raw classification and returns the emitted posture.
    pub fn push(&mut self, raw: Posture) -> Posture {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(raw);
        if self.recent.len() == self.window && self.recent.iter().all(|p| *p == raw) {
            self.emitted = raw;
        }
        self.emitted
    }

    pub fn reset(&mut self) {
        self.recent.clear();
        self.emitted = Posture::Neutral;
    }
}

/// Classifies raised fingers into a debounced posture.
pub fn classify_posture(states: FingerStates, debouncer: &mut PostureDebouncer) -> Posture {
    debouncer.push(Posture::from_fingers(states))
}

/// The drawing pointer in capture pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointerSample {
    pub x_px: f64,
    pub y_px: f64,
    pub t_ms: u64,
}

/// Index fingertip scaled by the capture resolution.
pub fn pointer_of(frame: &LandmarkFrame) -> PointerSample {
    let tip = frame.point(INDEX_TIP);
    PointerSample {
        x_px: tip.x * frame.width_px as f64,
        y_px: tip.y * frame.height_px as f64,
        t_ms: frame.t_ms,
    }
}

/// Builds a synthetic frame with the requested fingers raised and the index
/// fingertip (the pointer) at `(tip_x, tip_y)`. Used by fixtures and trace
/// generation; a raised finger needs `tip_y < 1`.
pub fn synthetic_frame(
    t_ms: u64,
    width_px: u32,
    height_px: u32,
    up: FingerStates,
    tip_x: f64,
    tip_y: f64,
) -> LandmarkFrame {
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let (tip_x, tip_y) = (clamp(tip_x), clamp(tip_y));
    let mut pts = [Landmark { x: tip_x, y: tip_y, z: 0.0 }; LANDMARK_COUNT];
    pts[0].y = clamp(tip_y + 0.35);
    for (k, finger) in Finger::ALL.into_iter().enumerate() {
        let x = clamp(tip_x + 0.04 * k as f64);
        let pip_y = if up.is_up(finger) {
            tip_y + (0.1f64).min((1.0 - tip_y) / 2.0)
        } else {
            tip_y - (0.05f64).min(tip_y / 2.0)
        };
        let base = finger.tip() - 3;
        pts[base] = Landmark { x, y: clamp(pip_y + 0.05), z: 0.0 };
        pts[base + 1] = Landmark { x, y: pip_y, z: 0.0 };
        pts[base + 2] = Landmark { x, y: (pip_y + tip_y) / 2.0, z: 0.0 };
        pts[base + 3] = Landmark { x: if finger == Finger::Index { tip_x } else { x }, y: tip_y, z: 0.0 };
    }
    LandmarkFrame::new(t_ms, width_px, height_px, &pts).expect("synthetic frame is valid")
}
