//! Boxes in normalized and pixel coordinates.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("coordinate {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("x-order: x1 ({0}) must be < x2 ({1})")]
    XOrder(f64, f64),
    #[error("y-order: y1 ({0}) must be < y2 ({1})")]
    YOrder(f64, f64),
    #[error("coordinate is not finite")]
    NotFinite,
}

impl BoxError {
    /// Short rule name used in schema violations.
    pub fn rule(&self) -> &'static str {
        match self {
            BoxError::OutOfRange(_) => "range",
            BoxError::XOrder(..) => "x-order",
            BoxError::YOrder(..) => "y-order",
            BoxError::NotFinite => "finite",
        }
    }
}

/// Axis-aligned box with corners as fractions of image width/height.
/// Invariant: `0 <= x1 < x2 <= 1` and `0 <= y1 < y2 <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl NormalizedBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        for v in [x1, y1, x2, y2] {
            if !v.is_finite() {
                return Err(BoxError::NotFinite);
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(BoxError::OutOfRange(v));
            }
        }
        if x1 >= x2 {
            return Err(BoxError::XOrder(x1, x2));
        }
        if y1 >= y2 {
            return Err(BoxError::YOrder(y1, y2));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn full() -> Self {
        Self { x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self, BoxError> {
        match v {
            [a, b, c, d] => Self::new(*a, *b, *c, *d),
            _ => Err(BoxError::NotFinite),
        }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Smallest box enclosing both.
    pub fn union(&self, other: &Self) -> Self {
        Self {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        Self::new(
            self.x1.max(other.x1),
            self.y1.max(other.y1),
            self.x2.min(other.x2),
            self.y2.min(other.y2),
        )
        .ok()
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection(other).map(|b| b.area()).unwrap_or(0.0);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Grow each side by `fraction` of the box's own extent, clamped to the frame.
    pub fn padded(&self, fraction: f64) -> Self {
        let dx = self.width() * fraction;
        let dy = self.height() * fraction;
        Self {
            x1: (self.x1 - dx).max(0.0),
            y1: (self.y1 - dy).max(0.0),
            x2: (self.x2 + dx).min(1.0),
            y2: (self.y2 + dy).min(1.0),
        }
    }

    /// Express this box in the coordinate frame of `outer` (clipping to it).
    pub fn relative_to(&self, outer: &Self) -> Option<Self> {
        let clipped = self.intersection(outer)?;
        let w = outer.width();
        let h = outer.height();
        Self::new(
            ((clipped.x1 - outer.x1) / w).clamp(0.0, 1.0),
            ((clipped.y1 - outer.y1) / h).clamp(0.0, 1.0),
            ((clipped.x2 - outer.x1) / w).clamp(0.0, 1.0),
            ((clipped.y2 - outer.y1) / h).clamp(0.0, 1.0),
        )
        .ok()
    }

    /// Pixel rectangle under the round-half-up rule on each edge.
    pub fn to_pixel_rect(&self, width: u32, height: u32) -> PixelRect {
        let x0 = round_half_up(self.x1 * width as f64);
        let y0 = round_half_up(self.y1 * height as f64);
        let x1 = round_half_up(self.x2 * width as f64);
        let y1 = round_half_up(self.y2 * height as f64);
        PixelRect { x: x0, y: y0, width: x1.saturating_sub(x0), height: y1.saturating_sub(y0) }
    }
}

pub(crate) fn round_half_up(v: f64) -> u32 {
    (v + 0.5).floor().max(0.0) as u32
}

impl Serialize for NormalizedBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for NormalizedBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; 4]>::deserialize(d)?;
        NormalizedBox::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

/// Integer pixel rectangle: origin plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.width >= 1
            && self.height >= 1
            && self.x as u64 + self.width as u64 <= width as u64
            && self.y as u64 + self.height as u64 <= height as u64
    }

    /// `inner` is expressed relative to this rect's origin.
    pub fn compose(&self, inner: &PixelRect) -> PixelRect {
        PixelRect { x: self.x + inner.x, y: self.y + inner.y, width: inner.width, height: inner.height }
    }
}
