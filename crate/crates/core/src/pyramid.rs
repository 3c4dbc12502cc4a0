//! Feature-pyramid anchors and offset-driven 3-D resampling.
//!
//! Resampling runs in two passes: an in-plane pass moves each cell by
//! `(d0, d1)` inside its own level, then a cross-scale pass reads the
//! in-plane result at level `l + d2` with coordinates rescaled to that
//! level's grid. Both passes interpolate (bilinear in-plane, linear across
//! levels) with border clamping, so every output is a convex combination of
//! input values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelShape {
    pub stride: u32,
    pub height: usize,
    pub width: usize,
}

/// Checks the dyadic structure: strides double and grids ceil-halve level to level.
pub fn validate_levels(levels: &[LevelShape]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid("pyramid has no levels"));
    }
    for (l, s) in levels.iter().enumerate() {
        if s.stride == 0 || s.height == 0 || s.width == 0 {
            return Err(Error::invalid(format!("level {l} has a zero stride or extent")));
        }
    }
    for (l, pair) in levels.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        if b.stride != 2 * a.stride {
            return Err(Error::invalid(format!(
                "stride of level {} is {}, expected {}",
                l + 1,
                b.stride,
                2 * a.stride
            )));
        }
        if b.height != a.height.div_ceil(2) || b.width != a.width.div_ceil(2) {
            return Err(Error::invalid(format!(
                "level {} is {}x{}, expected {}x{}",
                l + 1,
                b.height,
                b.width,
                a.height.div_ceil(2),
                a.width.div_ceil(2)
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidSpec {
    pub levels: Vec<LevelShape>,
    pub anchor_scales: Vec<f64>,
    /// Aspect ratios as height / width.
    pub anchor_ratios: Vec<f64>,
}

impl PyramidSpec {
    /// Pyramid whose finest level has the given stride and covers an
    /// `image_w x image_h` image.
    pub fn for_image(
        image_w: usize,
        image_h: usize,
        first_stride: u32,
        n_levels: usize,
        anchor_scales: Vec<f64>,
        anchor_ratios: Vec<f64>,
    ) -> Result<Self> {
        let mut levels = Vec::with_capacity(n_levels);
        let mut shape = LevelShape {
            stride: first_stride,
            height: image_h.div_ceil(first_stride as usize),
            width: image_w.div_ceil(first_stride as usize),
        };
        for _ in 0..n_levels {
            levels.push(shape);
            shape = LevelShape {
                stride: shape.stride * 2,
                height: shape.height.div_ceil(2),
                width: shape.width.div_ceil(2),
            };
        }
        let spec = Self {
            levels,
            anchor_scales,
            anchor_ratios,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        validate_levels(&self.levels)?;
        if self.anchor_scales.is_empty() || self.anchor_ratios.is_empty() {
            return Err(Error::invalid("need at least one anchor scale and one ratio"));
        }
        if self
            .anchor_scales
            .iter()
            .chain(&self.anchor_ratios)
            .any(|v| !v.is_finite() || *v <= 0.0)
        {
            return Err(Error::invalid("anchor scales and ratios must be positive"));
        }
        Ok(())
    }
}

/// An anchor box tied to a pyramid level. `cell` is `(row, col)` for anchors
/// produced by [`generate_anchors`] and `None` for free-standing ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub bbox: BBox,
    pub level: usize,
    pub cell: Option<(usize, usize)>,
}

impl Anchor {
    pub fn free(bbox: BBox, level: usize) -> Self {
        Self {
            bbox,
            level,
            cell: None,
        }
    }
}

/// Tiles anchors level-major, then row, column, scale and ratio.
pub fn generate_anchors(spec: &PyramidSpec) -> Result<Vec<Anchor>> {
    spec.validate()?;
    let mut out = Vec::new();
    for (level, shape) in spec.levels.iter().enumerate() {
        let stride = shape.stride as f64;
        for row in 0..shape.height {
            for col in 0..shape.width {
                let cx = (col as f64 + 0.5) * stride;
                let cy = (row as f64 + 0.5) * stride;
                for &scale in &spec.anchor_scales {
                    for &ratio in &spec.anchor_ratios {
                        let w = stride * scale / ratio.sqrt();
                        let h = stride * scale * ratio.sqrt();
                        out.push(Anchor {
                            bbox: BBox::from_center(cx, cy, w, h)?,
                            level,
                            cell: Some((row, col)),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    pub shape: LevelShape,
    /// `channels x height x width`, row-major within each channel.
    pub data: Vec<f64>,
}

impl FeatureLevel {
    fn plane(&self, c: usize) -> &[f64] {
        let n = self.shape.height * self.shape.width;
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    channels: usize,
    levels: Vec<FeatureLevel>,
}

impl FeaturePyramid {
    pub fn new(channels: usize, levels: Vec<FeatureLevel>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("pyramid needs at least one channel"));
        }
        let shapes: Vec<_> = levels.iter().map(|l| l.shape).collect();
        validate_levels(&shapes)?;
        for (l, lvl) in levels.iter().enumerate() {
            let want = channels * lvl.shape.height * lvl.shape.width;
            if lvl.data.len() != want {
                return Err(Error::invalid(format!(
                    "level {l} holds {} values, expected {want}",
                    lvl.data.len()
                )));
            }
            if lvl.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("level {l} has non-finite values")));
            }
        }
        Ok(Self { channels, levels })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn levels(&self) -> &[FeatureLevel] {
        &self.levels
    }

    pub fn shapes(&self) -> Vec<LevelShape> {
        self.levels.iter().map(|l| l.shape).collect()
    }

    pub fn get(&self, level: usize, c: usize, i: usize, j: usize) -> f64 {
        let s = self.levels[level].shape;
        self.levels[level].data[(c * s.height + i) * s.width + j]
    }

    /// Elementwise `a * self + b * other`; shapes must agree.
    pub fn axpby(&self, a: f64, other: &FeaturePyramid, b: f64) -> Result<FeaturePyramid> {
        if self.channels != other.channels || self.shapes() != other.shapes() {
            return Err(Error::domain("pyramids differ in shape"));
        }
        let levels = self
            .levels
            .iter()
            .zip(&other.levels)
            .map(|(x, y)| FeatureLevel {
                shape: x.shape,
                data: x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect(),
            })
            .collect();
        FeaturePyramid::new(self.channels, levels)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.levels
            .iter()
            .flat_map(|l| l.data.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Per-cell offsets `(d0, d1, d2)`: rows, columns, levels.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetLevel {
    pub height: usize,
    pub width: usize,
    /// `3 x height x width`: the d0 plane, then d1, then d2.
    pub data: Vec<f64>,
}

impl OffsetLevel {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> (f64, f64, f64) {
        let n = self.height * self.width;
        let k = i * self.width + j;
        (self.data[k], self.data[n + k], self.data[2 * n + k])
    }

    pub fn set(&mut self, i: usize, j: usize, d: (f64, f64, f64)) {
        let n = self.height * self.width;
        let k = i * self.width + j;
        self.data[k] = d.0;
        self.data[n + k] = d.1;
        self.data[2 * n + k] = d.2;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub levels: Vec<OffsetLevel>,
}

impl OffsetField {
    pub fn zeros_like(p: &FeaturePyramid) -> Self {
        Self {
            levels: p
                .levels
                .iter()
                .map(|l| OffsetLevel::zeros(l.shape.height, l.shape.width))
                .collect(),
        }
    }

    fn check_against(&self, p: &FeaturePyramid) -> Result<()> {
        if self.levels.len() != p.levels.len() {
            return Err(Error::domain(format!(
                "offset field has {} levels, pyramid has {}",
                self.levels.len(),
                p.levels.len()
            )));
        }
        for (l, (d, f)) in self.levels.iter().zip(&p.levels).enumerate() {
            if d.height != f.shape.height
                || d.width != f.shape.width
                || d.data.len() != 3 * d.height * d.width
            {
                return Err(Error::domain(format!("offset level {l} does not match the pyramid")));
            }
            if d.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("offset level {l} has non-finite values")));
            }
        }
        Ok(())
    }
}

/// Bilinear read of one plane at fractional `(y, x)`, clamped to the grid.
fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = (1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
    let bottom = (1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
    (1.0 - fy) * top + fy * bottom
}

/// In-plane pass: `P'(i, j, l) = P(i + d0, j + d1, l)`.
pub fn resample_inplane(p: &FeaturePyramid, d: &OffsetField) -> Result<FeaturePyramid> {
    d.check_against(p)?;
    let levels = p
        .levels
        .par_iter()
        .zip(&d.levels)
        .map(|(lvl, off)| {
            let LevelShape { height: h, width: w, .. } = lvl.shape;
            let mut data = vec![0.0; lvl.data.len()];
            for i in 0..h {
                for j in 0..w {
                    let (d0, d1, _) = off.at(i, j);
                    let (y, x) = (i as f64 + d0, j as f64 + d1);
                    for c in 0..p.channels {
                        data[(c * h + i) * w + j] = bilinear(lvl.plane(c), h, w, y, x);
                    }
                }
            }
            FeatureLevel { shape: lvl.shape, data }
        })
        .collect();
    Ok(FeaturePyramid {
        channels: p.channels,
        levels,
    })
}

/// Cross-scale pass: `P'(i, j, l) = P(i', j', l + d2)` with `l + d2` clamped
/// to the pyramid and fractional levels blended linearly.
pub fn resample_scale(p: &FeaturePyramid, d: &OffsetField) -> Result<FeaturePyramid> {
    d.check_against(p)?;
    let top = (p.levels.len() - 1) as f64;
    let levels = p
        .levels
        .par_iter()
        .zip(&d.levels)
        .enumerate()
        .map(|(l, (lvl, off))| {
            let LevelShape { height: h, width: w, .. } = lvl.shape;
            let mut data = vec![0.0; lvl.data.len()];
            for i in 0..h {
                for j in 0..w {
                    let (_, _, d2) = off.at(i, j);
                    let t = (l as f64 + d2).clamp(0.0, top);
                    let lo = t.floor() as usize;
                    let hi = t.ceil() as usize;
                    let frac = t - lo as f64;
                    for c in 0..p.channels {
                        let v_lo = read_rescaled(p, lo, c, i, j, lvl.shape);
                        data[(c * h + i) * w + j] = if hi == lo {
                            v_lo
                        } else {
                            let v_hi = read_rescaled(p, hi, c, i, j, lvl.shape);
                            (1.0 - frac) * v_lo + frac * v_hi
                        };
                    }
                }
            }
            FeatureLevel { shape: lvl.shape, data }
        })
        .collect();
    Ok(FeaturePyramid {
        channels: p.channels,
        levels,
    })
}

fn read_rescaled(p: &FeaturePyramid, target: usize, c: usize, i: usize, j: usize, src: LevelShape) -> f64 {
    let t = &p.levels[target];
    let (th, tw) = (t.shape.height, t.shape.width);
    let y = i as f64 * th as f64 / src.height as f64;
    let x = j as f64 * tw as f64 / src.width as f64;
    bilinear(t.plane(c), th, tw, y, x)
}

/// In-plane pass followed by the cross-scale pass.
pub fn fam3d(p: &FeaturePyramid, d: &OffsetField) -> Result<FeaturePyramid> {
    resample_scale(&resample_inplane(p, d)?, d)
}
