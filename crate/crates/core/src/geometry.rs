//! Integer box algebra.
//!
//! Boxes use half-open pixel coordinates: `x0..x1` by `y0..y1`, origin at
//! the top-left corner with y growing downward. Two boxes that only share an
//! edge or a corner have a zero-area intersection and do not overlap.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when an IoU computed in floating point is tested against
/// zero. Integer routes ([`BBox::overlaps`], [`BBox::intersection_area`]) are
/// exact and preferred.
pub const IOU_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

/// Axis-aligned, non-degenerate pixel rectangle.
///
/// Serialized as the array `[x0, y0, x1, y1]`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 < x1 && y0 < y1 {
            Ok(Self { x0, y0, x1, y1 })
        } else {
            Err(Error::DegenerateBox { x0, y0, x1, y1 })
        }
    }

    /// Box anchored at `(x, y)` with the given size.
    pub fn from_origin_size(x: u32, y: u32, width: u32, height: u32) -> Result<Self> {
        Self::new(x, y, x.saturating_add(width), y.saturating_add(height))
    }

    pub fn x0(&self) -> u32 {
        self.x0
    }

    pub fn y0(&self) -> u32 {
        self.y0
    }

    pub fn x1(&self) -> u32 {
        self.x1
    }

    pub fn y1(&self) -> u32 {
        self.y1
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    /// Center with floor division.
    pub fn center(&self) -> Point {
        Point {
            x: ((u64::from(self.x0) + u64::from(self.x1)) / 2) as u32,
            y: ((u64::from(self.y0) + u64::from(self.y1)) / 2) as u32,
        }
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        BBox::new(x0, y0, x1, y1).ok()
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        self.intersection(other).map_or(0, |b| b.area())
    }

    pub fn union_area(&self, other: &BBox) -> u64 {
        self.area() + other.area() - self.intersection_area(other)
    }

    /// True iff the intersection has positive area.
    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0 {
            return 0.0;
        }
        inter as f64 / self.union_area(other) as f64
    }

    /// Smallest box containing both inputs.
    pub fn hull(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    /// Intersect with `0..width` by `0..height`. `None` when nothing is left.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<BBox> {
        BBox::new(
            self.x0.min(width),
            self.y0.min(height),
            self.x1.min(width),
            self.y1.min(height),
        )
        .ok()
    }

    pub fn translate(&self, dx: u32, dy: u32) -> BBox {
        BBox {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// Ordering key `(y0, x0, y1, x1)`: top-to-bottom, then left-to-right.
    pub fn raster_key(&self) -> (u32, u32, u32, u32) {
        (self.y0, self.x0, self.y1, self.x1)
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl fmt::Debug for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BBox({},{},{},{})", self.x0, self.y0, self.x1, self.y1)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x0, self.y0, self.x1, self.y1)
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [u32; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}
