//! Shared geometric value types and the 39-point mouth landmark convention.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A continuous pixel coordinate. Origin top-left, `y` grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn l1_norm(&self) -> f64 {
        self.x.abs() + self.y.abs()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<Point2> for f64 {
    type Output = Point2;
    fn mul(self, rhs: Point2) -> Point2 {
        Point2::new(self * rhs.x, self * rhs.y)
    }
}

/// Index layout of the 39-point mouth-area convention.
///
/// Indices 0-19 are lip landmarks: 0-11 trace the outer lip contour starting at
/// the left corner and running over the upper lip, 12-19 trace the inner contour
/// the same way (12 left inner corner, 13-15 upper inner lip, 16 right inner
/// corner, 17-19 lower inner lip from right to left). Indices 20-38 are the 19
/// jawline points ordered from the left cheek around the chin to the right cheek.
pub mod mouth {
    use std::ops::Range;

    pub const POINTS: usize = 39;
    pub const LIPS: Range<usize> = 0..20;
    pub const JAW: Range<usize> = 20..39;
    pub const OUTER_LIP: Range<usize> = 0..12;
    pub const INNER_LIP: Range<usize> = 12..20;

    /// Vertically opposed (upper, lower) inner-lip index pairs.
    pub const INNER_LIP_PAIRS: [(usize, usize); 3] = [(13, 19), (14, 18), (15, 17)];
}

/// One frame's ordered landmark set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkFrame {
    pub points: Vec<Point2>,
}

impl LandmarkFrame {
    pub fn new(points: Vec<Point2>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Errors unless the frame follows the 39-point mouth convention.
    pub fn require_mouth(&self) -> Result<()> {
        if self.points.len() != mouth::POINTS {
            return Err(Error::ConventionViolation {
                expected: mouth::POINTS,
                found: self.points.len(),
            });
        }
        Ok(())
    }

    pub fn translated(&self, d: Point2) -> Self {
        Self::new(self.points.iter().map(|&p| p + d).collect())
    }
}

impl From<Vec<Point2>> for LandmarkFrame {
    fn from(points: Vec<Point2>) -> Self {
        Self::new(points)
    }
}

pub const DEFAULT_FPS: f64 = 30.0;

/// A `T x P` grid of landmark coordinates: `T` frames sharing `P` points.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkWindow {
    frames: Vec<LandmarkFrame>,
    pub fps: f64,
}

/// Landmark tracks of arbitrary length share the window representation.
pub type LandmarkSequence = LandmarkWindow;

impl LandmarkWindow {
    pub fn new(frames: Vec<LandmarkFrame>, fps: f64) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::invalid("landmark window needs at least one frame"));
        };
        let p = first.len();
        for (t, f) in frames.iter().enumerate() {
            if f.len() != p {
                return Err(Error::invalid(format!(
                    "frame {t} has {} points, expected {p}",
                    f.len()
                )));
            }
            if let Some(i) = f.points.iter().position(|q| !q.is_finite()) {
                return Err(Error::invalid(format!(
                    "frame {t} point {i} is not finite"
                )));
            }
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { frames, fps })
    }

    pub fn from_points(frames: Vec<Vec<Point2>>) -> Result<Self> {
        Self::new(frames.into_iter().map(LandmarkFrame::new).collect(), DEFAULT_FPS)
    }

    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &LandmarkFrame {
        &self.frames[t]
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Points per frame `P`.
    pub fn points_per_frame(&self) -> usize {
        self.frames[0].len()
    }

    /// Frames `[start, start + len)` as a new window.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames.len() || len == 0 {
            return Err(Error::invalid(format!(
                "slice {start}..{} out of range for {} frames",
                start + len,
                self.frames.len()
            )));
        }
        Ok(Self {
            frames: self.frames[start..start + len].to_vec(),
            fps: self.fps,
        })
    }

    pub fn map_frames(&self, f: impl FnMut(&LandmarkFrame) -> LandmarkFrame) -> Self {
        Self {
            frames: self.frames.iter().map(f).collect(),
            fps: self.fps,
        }
    }

    pub fn same_shape(&self, other: &LandmarkWindow) -> bool {
        self.len() == other.len() && self.points_per_frame() == other.points_per_frame()
    }

    pub(crate) fn require_same_shape(&self, other: &LandmarkWindow, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::invalid(format!(
                "{what}: shape {}x{} does not match {}x{}",
                self.len(),
                self.points_per_frame(),
                other.len(),
                other.points_per_frame()
            )));
        }
        Ok(())
    }
}

/// Square mouth crop geometry; the crop is centered on the mean lip landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub side: usize,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self { side: 148 }
    }
}

impl CropSpec {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 || side % 2 != 0 {
            return Err(Error::invalid(format!(
                "crop side must be positive and even, got {side}"
            )));
        }
        Ok(Self { side })
    }

    pub fn half(&self) -> i64 {
        (self.side / 2) as i64
    }

    /// Integer top-left corner of the crop centered at `center`.
    pub fn top_left(&self, center: Point2) -> (i64, i64) {
        (
            center.x.round() as i64 - self.half(),
            center.y.round() as i64 - self.half(),
        )
    }
}
