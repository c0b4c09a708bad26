//! Synthetic data, scenes and brute-force oracles shared by the integration
//! tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scene_placer::fit::{fit_samples, GroupedSamples, ObjectSample};
use scene_placer::geometry::{BBox, Pixel};
use scene_placer::{DepthGrid, DrivableMask, LocationModel, RunConfig, SceneContext};
use statrs::distribution::{ContinuousCDF, Normal};

pub const CAMERA: &str = "default";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `a + b * x^c`
#[derive(Clone, Copy, Debug)]
pub struct Curve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Curve {
    pub fn eval(&self, x: f64) -> f64 {
        self.a + self.b * x.powf(self.c)
    }
}

/// Known generative process for one class: log-normal depth, log-normal
/// height whose parameters follow power curves in depth, log-normal aspect.
#[derive(Clone, Copy, Debug)]
pub struct ClassGen {
    pub depth_mu: f64,
    pub depth_sigma: f64,
    pub height_mu: Curve,
    pub height_sigma: Curve,
    pub aspect_mu: f64,
    pub aspect_sigma: f64,
}

impl ClassGen {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> ObjectSample {
        let z = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };
        let depth = (self.depth_mu + self.depth_sigma * z(rng)).exp();
        let height = (self.height_mu.eval(depth) + self.height_sigma.eval(depth) * z(rng)).exp();
        let aspect = (self.aspect_mu + self.aspect_sigma * z(rng)).exp();
        ObjectSample {
            depth,
            height,
            width: aspect * height,
        }
    }

    pub fn depth_cdf(&self, d: f64) -> f64 {
        std_normal().cdf((d.ln() - self.depth_mu) / self.depth_sigma)
    }

    pub fn aspect_cdf(&self, r: f64) -> f64 {
        std_normal().cdf((r.ln() - self.aspect_mu) / self.aspect_sigma)
    }

    /// Marginal height CDF, integrating the depth out on a fine grid of
    /// standard-normal quantiles.
    pub fn height_cdf(&self, h: f64) -> f64 {
        let n = std_normal();
        let steps = 1600;
        let (lo, hi) = (-8.0, 8.0);
        let dz = (hi - lo) / steps as f64;
        let mut acc = 0.0;
        for k in 0..=steps {
            let z = lo + k as f64 * dz;
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            let d = (self.depth_mu + self.depth_sigma * z).exp();
            let s = self.height_sigma.eval(d);
            let m = self.height_mu.eval(d);
            acc += w * (-0.5 * z * z).exp() * n.cdf((h.ln() - m) / s);
        }
        acc * dz / (2.0 * std::f64::consts::PI).sqrt()
    }
}

pub fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

/// Vehicle-like class: wide boxes, mid-range depths.
pub const CAR: ClassGen = ClassGen {
    depth_mu: 2.3,
    depth_sigma: 0.35,
    height_mu: Curve { a: 3.0, b: 0.3, c: 0.5 },
    height_sigma: Curve { a: 0.1, b: 0.005, c: 1.0 },
    aspect_mu: 0.6,
    aspect_sigma: 0.15,
};

/// Pedestrian-like class: narrow boxes, slightly nearer.
pub const PERSON: ClassGen = ClassGen {
    depth_mu: 2.6,
    depth_sigma: 0.25,
    height_mu: Curve { a: 3.2, b: 0.25, c: 0.6 },
    height_sigma: Curve { a: 0.12, b: 0.003, c: 1.0 },
    aspect_mu: -0.9,
    aspect_sigma: 0.2,
};

pub fn generate(gens: &[(u32, ClassGen)], per_class: usize, seed: u64) -> GroupedSamples {
    let mut r = rng(seed);
    let mut groups = GroupedSamples::new();
    for &(class, g) in gens {
        let samples = (0..per_class).map(|_| g.sample(&mut r)).collect();
        groups.insert((CAMERA.to_string(), class), samples);
    }
    groups
}

pub fn fit_synthetic(gens: &[(u32, ClassGen)], per_class: usize, seed: u64, config: &RunConfig) -> LocationModel {
    fit_samples(&generate(gens, per_class, seed), config).unwrap().0
}

/// One-sample KS statistic of `samples` against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Scene whose disparity grows left to right from `d_lo` to `d_hi`; rows
/// above `drivable_from` are non-drivable.
pub fn column_gradient_scene(frame: u32, grid: u32, d_lo: f32, d_hi: f32, drivable_from: u32) -> SceneContext {
    let mut values = Vec::with_capacity((grid * grid) as usize);
    let mut bits = Vec::with_capacity(values.capacity());
    for y in 0..grid {
        for x in 0..grid {
            values.push(d_lo + (d_hi - d_lo) * x as f32 / (grid - 1) as f32);
            bits.push(y >= drivable_from);
        }
    }
    SceneContext::new(
        frame,
        frame,
        CAMERA,
        DepthGrid::new(grid, grid, values).unwrap(),
        DrivableMask::from_bits(grid, grid, bits).unwrap(),
    )
    .unwrap()
}

/// Street-like random scene: disparity rising toward the bottom rows with
/// per-pixel noise, each pixel drivable with probability `coverage`.
pub fn random_scene<R: Rng>(rng: &mut R, frame_w: u32, frame_h: u32, gw: u32, gh: u32, coverage: f64) -> SceneContext {
    let horizon: f32 = rng.random_range(0.0..0.5);
    let near: f32 = rng.random_range(20.0..60.0);
    let mut values = Vec::with_capacity((gw * gh) as usize);
    let mut bits = Vec::with_capacity(values.capacity());
    for y in 0..gh {
        let t = (y as f32 / gh.max(2) as f32 - horizon).max(0.0) / (1.0 - horizon);
        for _ in 0..gw {
            let noise: f32 = rng.random_range(-2.0..2.0);
            values.push((near * t + noise).max(0.0));
            bits.push(rng.random_bool(coverage));
        }
    }
    SceneContext::new(
        frame_w,
        frame_h,
        CAMERA,
        DepthGrid::new(gw, gh, values).unwrap(),
        DrivableMask::from_bits(gw, gh, bits).unwrap(),
    )
    .unwrap()
}

/// Every drivable pixel within `tau` of `d`, by direct enumeration.
pub fn brute_band(depth: &DepthGrid, mask: &DrivableMask, d: f64, tau: f64) -> Vec<Pixel> {
    let mut out = Vec::new();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if mask.get(x, y) && (depth.get(x, y) as f64 - d).abs() <= tau {
                out.push(Pixel { x, y });
            }
        }
    }
    out
}

/// Tight box of the set mask pixels, each mask pixel covering a `sx` by
/// `sy` rectangle of the frame starting at `(x0, y0)`.
pub fn brute_tight_box(width: u32, height: u32, bits: &[bool], x0: f64, y0: f64, sx: f64, sy: f64) -> Option<BBox> {
    let (mut xl, mut xh, mut yl, mut yh) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..height {
        for i in 0..width {
            if bits[(j * width + i) as usize] {
                xl = xl.min(x0 + i as f64 * sx);
                xh = xh.max(x0 + (i + 1) as f64 * sx);
                yl = yl.min(y0 + j as f64 * sy);
                yh = yh.max(y0 + (j + 1) as f64 * sy);
            }
        }
    }
    xl.is_finite().then_some(BBox {
        cx: 0.5 * (xl + xh),
        by: yh,
        w: xh - xl,
        h: yh - yl,
    })
}

/// Owner of each frame pixel: the covering mask with the largest disparity,
/// ties going to the larger index.
pub fn brute_owner(masks: &[Vec<u32>], depths: &[f64], n_pixels: usize) -> Vec<Option<usize>> {
    let mut sets: Vec<BTreeMap<u32, ()>> = Vec::new();
    for m in masks {
        sets.push(m.iter().map(|&p| (p, ())).collect());
    }
    (0..n_pixels as u32)
        .map(|p| {
            (0..masks.len())
                .filter(|&k| sets[k].contains_key(&p))
                .max_by(|&a, &b| depths[a].total_cmp(&depths[b]).then(a.cmp(&b)))
        })
        .collect()
}
