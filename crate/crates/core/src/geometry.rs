//! Raster grids and the deterministic geometric primitives built on them:
//! drivable masks, placement bands, the closest-depth fallback and crop
//! geometry for inpainting patches.
//!
//! Depth values are relative disparity: larger means nearer the camera.
//! Nothing in this crate inverts them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the square crop fed to the inpainting model.
pub const CROP_RESOLUTION: u32 = 512;

/// Per-pixel relative disparity for one frame, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthGrid {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl DepthGrid {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if width as usize * height as usize != values.len() {
            return Err(Error::InvalidGrid(format!(
                "{}x{} depth grid with {} values",
                width,
                height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidGrid(format!("depth value {v} is not finite and >= 0")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Grid filled with a single value.
    pub fn constant(width: u32, height: u32, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Median of the 3x3 neighborhood around `(x, y)`, truncated at the
    /// grid border. Even-sized neighborhoods average the two middle values.
    pub fn median3x3(&self, x: u32, y: u32) -> f32 {
        let mut vals = [0f32; 9];
        let mut n = 0;
        for yy in y.saturating_sub(1)..=(y + 1).min(self.height - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(self.width - 1) {
                vals[n] = self.get(xx, yy);
                n += 1;
            }
        }
        let vals = &mut vals[..n];
        vals.sort_by(f32::total_cmp);
        if n % 2 == 1 {
            vals[n / 2]
        } else {
            0.5 * (vals[n / 2 - 1] + vals[n / 2])
        }
    }
}

/// Per-pixel semantic class indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl LabelGrid {
    pub fn new(width: u32, height: u32, labels: Vec<u8>) -> Result<Self> {
        if width as usize * height as usize != labels.len() {
            return Err(Error::InvalidGrid(format!(
                "{}x{} label grid with {} labels",
                width,
                height,
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }
}

/// Boolean drivable-space mask derived from a [`LabelGrid`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DrivableMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl DrivableMask {
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if width as usize * height as usize != bits.len() {
            return Err(Error::InvalidGrid(format!(
                "{}x{} mask with {} bits",
                width,
                height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Axis-aligned box anchored at its bottom-center, continuous pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub by: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, by: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, by, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.by, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!("{self:?}")));
        }
        Ok(())
    }

    /// From a top-left corner box `[x, y, w, h]`.
    pub fn from_corner(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self {
            cx: x + 0.5 * w,
            by: y + h,
            w,
            h,
        }
    }

    /// Top-left corner representation `[x, y, w, h]`.
    pub fn to_corner(&self) -> [f64; 4] {
        [self.cx - 0.5 * self.w, self.by - self.h, self.w, self.h]
    }

    pub fn x0(&self) -> f64 {
        self.cx - 0.5 * self.w
    }

    pub fn x1(&self) -> f64 {
        self.cx + 0.5 * self.w
    }

    pub fn y0(&self) -> f64 {
        self.by - self.h
    }

    pub fn y1(&self) -> f64 {
        self.by
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Center of the box (not the anchor).
    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.by - 0.5 * self.h)
    }

    /// Intersection with the frame `[0, fw] x [0, fh]`, if non-empty.
    pub fn clip(&self, frame_w: f64, frame_h: f64) -> Option<BBox> {
        let x0 = self.x0().max(0.0);
        let x1 = self.x1().min(frame_w);
        let y0 = self.y0().max(0.0);
        let y1 = self.y1().min(frame_h);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BBox {
            cx: 0.5 * (x0 + x1),
            by: y1,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    /// Fraction of the box area inside the frame.
    pub fn visible_fraction(&self, frame_w: f64, frame_h: f64) -> f64 {
        match self.clip(frame_w, frame_h) {
            Some(c) => (c.area() / self.area()).clamp(0.0, 1.0),
            None => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

/// Pixels in canonical row-major order, without duplicates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PixelSet {
    pixels: Vec<Pixel>,
}

impl PixelSet {
    pub fn as_slice(&self) -> &[Pixel] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Square crop in frame coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRect {
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
}

impl PatchRect {
    /// Factor mapping patch pixels to the fixed inpainting resolution.
    pub fn resize_factor(&self) -> f64 {
        CROP_RESOLUTION as f64 / self.side as f64
    }
}

/// Maps frame pixel coordinates onto a (possibly coarser) raster grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridMapping {
    pub grid_w: u32,
    pub grid_h: u32,
    pub scale_x: f64,
    pub scale_y: f64,
}

impl GridMapping {
    pub fn new(frame_w: u32, frame_h: u32, grid_w: u32, grid_h: u32) -> Result<Self> {
        if frame_w == 0 || frame_h == 0 || grid_w == 0 || grid_h == 0 {
            return Err(Error::InvalidGrid(format!(
                "frame {frame_w}x{frame_h} / grid {grid_w}x{grid_h}"
            )));
        }
        Ok(Self {
            grid_w,
            grid_h,
            scale_x: frame_w as f64 / grid_w as f64,
            scale_y: frame_h as f64 / grid_h as f64,
        })
    }

    /// Grid cell under a frame point, clamped to the grid.
    pub fn to_grid(&self, x: f64, y: f64) -> Pixel {
        let gx = (x / self.scale_x).floor().clamp(0.0, (self.grid_w - 1) as f64);
        let gy = (y / self.scale_y).floor().clamp(0.0, (self.grid_h - 1) as f64);
        Pixel {
            x: gx as u32,
            y: gy as u32,
        }
    }

    /// Frame point at the center of a grid cell.
    pub fn to_frame(&self, p: Pixel) -> (f64, f64) {
        ((p.x as f64 + 0.5) * self.scale_x, (p.y as f64 + 0.5) * self.scale_y)
    }
}

pub fn drivable_mask(labels: &LabelGrid, drivable_classes: &BTreeSet<u8>) -> Result<DrivableMask> {
    if drivable_classes.is_empty() {
        return Err(Error::Config("drivable class set is empty".into()));
    }
    let mut table = [false; 256];
    for &c in drivable_classes {
        table[c as usize] = true;
    }
    Ok(DrivableMask {
        width: labels.width,
        height: labels.height,
        bits: labels.labels.iter().map(|&l| table[l as usize]).collect(),
    })
}

fn check_dims(depth: &DepthGrid, mask: &DrivableMask) -> Result<()> {
    if depth.width != mask.width || depth.height != mask.height {
        return Err(Error::DimensionMismatch(format!(
            "depth {}x{} vs mask {}x{}",
            depth.width, depth.height, mask.width, mask.height
        )));
    }
    Ok(())
}

/// Drivable pixels whose depth lies within `tau` of `d`, row-major.
pub fn placement_band(depth: &DepthGrid, mask: &DrivableMask, d: f64, tau: f64) -> Result<PixelSet> {
    check_dims(depth, mask)?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("band threshold must be > 0, got {tau}")));
    }
    let w = depth.width as usize;
    let pixels = depth
        .values
        .iter()
        .zip(&mask.bits)
        .enumerate()
        .filter(|(_, (v, m))| **m && (**v as f64 - d).abs() <= tau)
        .map(|(i, _)| Pixel {
            x: (i % w) as u32,
            y: (i / w) as u32,
        })
        .collect();
    Ok(PixelSet { pixels })
}

/// Depth of the drivable pixel nearest to `d` in value; first in row-major
/// order on ties.
pub fn closest_allowed_depth(depth: &DepthGrid, mask: &DrivableMask, d: f64) -> Result<f64> {
    check_dims(depth, mask)?;
    let mut best: Option<(f64, f64)> = None;
    for (v, m) in depth.values.iter().zip(&mask.bits) {
        if !*m {
            continue;
        }
        let v = *v as f64;
        let dist = (v - d).abs();
        if best.is_none_or(|(bd, _)| dist < bd) {
            best = Some((dist, v));
        }
    }
    best.map(|(_, v)| v).ok_or(Error::EmptyDrivableSpace)
}

/// Square crop of side `round(2 * max(w, h))` centered on the box.
///
/// A crop overrunning the frame is shifted back inside. If it cannot fit at
/// all it is shrunk to the largest square the frame holds.
pub fn crop_geometry(bbox: &BBox, frame_w: u32, frame_h: u32) -> Result<PatchRect> {
    bbox.validate()?;
    if frame_w == 0 || frame_h == 0 {
        return Err(Error::InvalidBox(format!("empty frame {frame_w}x{frame_h}")));
    }
    if bbox.clip(frame_w as f64, frame_h as f64).is_none() {
        return Err(Error::InvalidBox(format!("{bbox:?} does not intersect the frame")));
    }
    let side = ((2.0 * bbox.w.max(bbox.h)).round() as u32)
        .max(1)
        .min(frame_w.min(frame_h));
    let (cx, cy) = bbox.center();
    let half = side as f64 / 2.0;
    let place = |center: f64, extent: u32| -> u32 {
        let start = (center - half).round();
        start.clamp(0.0, (extent - side) as f64) as u32
    };
    Ok(PatchRect {
        x0: place(cx, frame_w),
        y0: place(cy, frame_h),
        side,
    })
}
