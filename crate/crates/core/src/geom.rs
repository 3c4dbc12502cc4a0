//! Axis-aligned box algebra and the coordinate-noise model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Axis-aligned box `(x1, y1, x2, y2)` in continuous image coordinates.
///
/// Zero-area boxes are allowed; inverted or non-finite ones are not.
/// Serializes as the 4-element array `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "box ({x1}, {y1}, {x2}, {y2}) has non-finite coordinates"
            )));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::invalid(format!(
                "box ({x1}, {y1}, {x2}, {y2}) is inverted"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Box of the given size centered on `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
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

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
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

    pub fn is_degenerate(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// True when `(x, y)` lies strictly inside the box.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x > self.x1 && x < self.x2 && y > self.y1 && y < self.y2
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Smallest box containing both.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<BBox> {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn scale(&self, s: f64) -> Result<BBox> {
        BBox::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union. Zero whenever the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `IoU - (|C| - |A ∪ B|) / |C|` with `C` the enclosing box.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.is_degenerate() && b.is_degenerate() {
        return Err(Error::Degenerate("GIoU of two zero-area boxes".into()));
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.enclosing(b).area();
    Ok(inter / union - (hull - union) / hull)
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Gaussian coordinate noise with standard deviation `rho` times the box extent.
///
/// Owns its generator; clone or build one per thread.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    rho: f64,
    rng: ChaCha8Rng,
}

impl NoiseModel {
    pub fn new(rho: f64, seed: u64) -> Result<Self> {
        Self::with_rng(rho, seed::rng(seed, &[]))
    }

    pub fn with_rng(rho: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::invalid(format!("noise ratio {rho} must be finite and >= 0")));
        }
        Ok(Self { rho, rng })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Draws the next box. Coordinates are perturbed in the order x1, y1, x2, y2;
    /// an axis that comes out inverted has its pair swapped.
    pub fn perturb(&mut self, b: &BBox) -> BBox {
        let (w, h) = (b.width(), b.height());
        let mut eps = [0.0f64; 4];
        for e in eps.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *e = self.rho * z;
        }
        let x1 = b.x1 + eps[0] * w;
        let y1 = b.y1 + eps[1] * h;
        let x2 = b.x2 + eps[2] * w;
        let y2 = b.y2 + eps[3] * h;
        BBox {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }
}

pub fn perturb(b: &BBox, noise: &mut NoiseModel) -> BBox {
    noise.perturb(b)
}
