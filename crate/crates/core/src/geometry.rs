//! Axis-aligned boxes, overlap, center/corner conversion, the occlusion
//! metric and the box-noise transform.
//!
//! Boxes are stored in corner format `(x1, y1, x2, y2)`. The center format
//! `(x, y, w, h)` only exists as [`GeometricFeature`], which is what the
//! embedding consumes.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned rectangle in image coordinates, corner format.
///
/// Construction normalizes the corners so that `x1 <= x2` and `y1 <= y2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox<T> {
    x1: T,
    y1: T,
    x2: T,
    y2: T,
}

impl<T: Scalar> BBox<T> {
    /// Builds a box from two opposite corners, swapping coordinates as needed.
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }

    /// Like [`BBox::new`] but rejects NaN and infinite coordinates.
    pub fn try_new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        if [x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            Ok(Self::new(x1, y1, x2, y2))
        } else {
            Err(Error::NonFiniteCoordinate)
        }
    }

    pub fn x1(&self) -> T {
        self.x1
    }

    pub fn y1(&self) -> T {
        self.y1
    }

    pub fn x2(&self) -> T {
        self.x2
    }

    pub fn y2(&self) -> T {
        self.y2
    }

    pub fn corners(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> (T, T) {
        ((self.x1 + self.x2) * T::half(), (self.y1 + self.y2) * T::half())
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        w.max(T::zero()) * h.max(T::zero())
    }

    /// Intersection over union. Two zero-area boxes have IoU 0.
    pub fn iou(&self, other: &Self) -> T {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= T::zero() {
            return T::zero();
        }
        (inter / union).min(T::one())
    }

    /// Center-format feature `(x, y, w, h)`; fails on zero width or height.
    pub fn to_geometric(&self) -> Result<GeometricFeature<T>> {
        let (w, h) = (self.width(), self.height());
        if w <= T::zero() || h <= T::zero() {
            return Err(Error::DegenerateBox {
                width: w.as_f64(),
                height: h.as_f64(),
            });
        }
        let (x, y) = self.center();
        Ok(GeometricFeature { x, y, w, h })
    }

    /// Converts the coordinates to another scalar type.
    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox {
            x1: U::lit(self.x1.as_f64()),
            y1: U::lit(self.y1.as_f64()),
            x2: U::lit(self.x2.as_f64()),
            y2: U::lit(self.y2.as_f64()),
        }
    }
}

impl<T: Scalar> fmt::Display for BBox<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Free-function form of [`BBox::iou`].
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    a.iou(b)
}

/// Center coordinates plus width and height of a non-degenerate box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricFeature<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> GeometricFeature<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Result<Self> {
        if !(w > T::zero() && h > T::zero()) {
            return Err(Error::DegenerateBox {
                width: w.as_f64(),
                height: h.as_f64(),
            });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn to_corner(&self) -> BBox<T> {
        let (hw, hh) = (self.w * T::half(), self.h * T::half());
        BBox::new(self.x - hw, self.y - hh, self.x + hw, self.y + hh)
    }

    pub fn as_array(&self) -> [T; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Rescales into image-relative units (`x, w` by width, `y, h` by height).
    pub fn normalized(&self, image_width: T, image_height: T) -> Self {
        Self {
            x: self.x / image_width,
            y: self.y / image_height,
            w: self.w / image_width,
            h: self.h / image_height,
        }
    }
}

/// Half-widths of the uniform distributions the noise coefficients are drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseBounds<T> {
    /// Bound for the center shifts `sx`, `sy`.
    pub center: T,
    /// Bound for the log-scale factors `sw`, `sh`.
    pub scale: T,
}

impl<T: Scalar> Default for NoiseBounds<T> {
    fn default() -> Self {
        Self {
            center: T::lit(0.05),
            scale: T::lit(0.2),
        }
    }
}

/// Box perturbation: center shift as a fraction of size and log-scale change.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseCoefficients<T> {
    pub sx: T,
    pub sy: T,
    pub sw: T,
    pub sh: T,
}

impl<T: Scalar> NoiseCoefficients<T> {
    pub fn new(sx: T, sy: T, sw: T, sh: T) -> Self {
        Self { sx, sy, sw, sh }
    }

    /// Draws each coefficient from the open interval `(-bound, bound)`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, bounds: &NoiseBounds<T>) -> Self {
        let mut draw = |bound: T| -> T {
            let b = bound.as_f64();
            if b <= 0.0 {
                return T::zero();
            }
            loop {
                let v: f64 = rng.random_range(-b..b);
                if v != -b {
                    return T::lit(v);
                }
            }
        };
        Self {
            sx: draw(bounds.center),
            sy: draw(bounds.center),
            sw: draw(bounds.scale),
            sh: draw(bounds.scale),
        }
    }
}

/// Shifts the center by `(sx * w, sy * h)` and scales the size by
/// `(exp(sw), exp(sh))`.
///
/// Evaluated in corner form so that zero coefficients return the input bit for bit.
pub fn apply_noise<T: Scalar>(b: &BBox<T>, c: &NoiseCoefficients<T>) -> BBox<T> {
    let (w, h) = (b.width(), b.height());
    let (new_w, new_h) = (w * c.sw.exp(), h * c.sh.exp());
    let (dx, dy) = (c.sx * w, c.sy * h);
    let (gx, gy) = ((w - new_w) * T::half(), (h - new_h) * T::half());
    BBox::new(b.x1 + dx + gx, b.y1 + dy + gy, b.x2 + dx - gx, b.y2 + dy - gy)
}

/// Largest IoU between `target` and any box in `others` (0 if empty).
///
/// The caller must leave `target` itself out of `others`.
pub fn max_mutual_iou<T: Scalar>(target: &BBox<T>, others: &[BBox<T>]) -> T {
    others
        .iter()
        .map(|o| target.iou(o))
        .fold(T::zero(), |acc, v| acc.max(v))
}

/// Occlusion bucket of a ground-truth box by its max-mutual-IoU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OcclusionLevel {
    /// `[0, 0.2]`
    Bare,
    /// `(0.2, 0.5]`
    Partial,
    /// `(0.5, 1]`
    Heavy,
}

impl OcclusionLevel {
    pub const BARE_MAX: f64 = 0.2;
    pub const PARTIAL_MAX: f64 = 0.5;

    pub fn from_mmiou<T: Scalar>(mmiou: T) -> Self {
        let v = mmiou.as_f64();
        if v <= Self::BARE_MAX {
            OcclusionLevel::Bare
        } else if v <= Self::PARTIAL_MAX {
            OcclusionLevel::Partial
        } else {
            OcclusionLevel::Heavy
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OcclusionLevel::Bare => "bare",
            OcclusionLevel::Partial => "partial",
            OcclusionLevel::Heavy => "heavy",
        }
    }
}

pub fn occlusion_level<T: Scalar>(mmiou: T) -> OcclusionLevel {
    OcclusionLevel::from_mmiou(mmiou)
}
