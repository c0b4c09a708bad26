//! Distributional comparison of sampled layouts against real annotations,
//! plus the baseline placement policies used for comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{LocationModel, ObjectSample};
use crate::geometry::{BBox, Pixel};
use crate::sampler::{sample_class, PlacementProposal, SceneContext};

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS statistic needs two non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// A real object with its class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledSample {
    pub class_id: u32,
    pub sample: ObjectSample,
}

/// A proposal to be scored, tied to the scene it was placed in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalProposal {
    pub scene: usize,
    pub class_id: u32,
    pub d: f64,
    pub bbox: BBox,
}

impl EvalProposal {
    pub fn from_placement(scene: usize, p: &PlacementProposal) -> Self {
        Self {
            scene,
            class_id: p.class_id,
            d: p.d,
            bbox: p.bbox,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub n_real: usize,
    pub n_proposed: usize,
    pub ks_depth: f64,
    pub ks_height: f64,
    pub ks_aspect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub n_real: usize,
    pub n_proposals: usize,
    pub classes: BTreeMap<u32, ClassReport>,
    /// Proposal classes with no real objects to compare against.
    pub incomparable: Vec<u32>,
    pub n_band_valid: usize,
    /// Undefined (null) without proposals.
    pub band_validity: Option<f64>,
    pub class_chi_square: Option<f64>,
    pub chi_square_dof: usize,
}

impl LayoutReport {
    pub fn max_ks(&self) -> f64 {
        self.classes
            .values()
            .flat_map(|c| [c.ks_depth, c.ks_height, c.ks_aspect])
            .fold(0.0, f64::max)
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6} {:>8} {:>8} {:>9} {:>9} {:>9}",
            "class", "n_real", "n_prop", "ks_depth", "ks_height", "ks_aspect"
        );
        for (c, r) in &self.classes {
            let _ = writeln!(
                s,
                "{:>6} {:>8} {:>8} {:>9.4} {:>9.4} {:>9.4}",
                c, r.n_real, r.n_proposed, r.ks_depth, r.ks_height, r.ks_aspect
            );
        }
        for c in &self.incomparable {
            let _ = writeln!(s, "{:>6} {:>8} {:>8} {:>9} {:>9} {:>9}", c, 0, "-", "n/a", "n/a", "n/a");
        }
        let validity = self
            .band_validity
            .map_or("undefined".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(s, "band_validity   {validity} ({}/{})", self.n_band_valid, self.n_proposals);
        let chi = self
            .class_chi_square
            .map_or("undefined".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(s, "class_chi2      {chi} (dof {})", self.chi_square_dof);
        s
    }
}

/// Compares proposals with real objects per class and checks every proposal
/// anchor against the placement band of its scene.
///
/// Depth marginals compare real anchor depths with proposal depths; the
/// proposal anchor is the bottom-center of its box.
pub fn layout_report(
    real: &[LabeledSample],
    proposals: &[EvalProposal],
    scenes: &[SceneContext],
    model: &LocationModel,
    tau: f64,
) -> Result<LayoutReport> {
    let mut real_by_class: BTreeMap<u32, Vec<ObjectSample>> = BTreeMap::new();
    for r in real {
        real_by_class.entry(r.class_id).or_default().push(r.sample);
    }
    let mut prop_by_class: BTreeMap<u32, Vec<&EvalProposal>> = BTreeMap::new();
    let mut n_valid = 0;
    for p in proposals {
        let scene = scenes
            .get(p.scene)
            .ok_or_else(|| Error::Schema(format!("proposal references missing scene {}", p.scene)))?;
        let anchor: Pixel = scene.mapping().to_grid(p.bbox.cx, p.bbox.by);
        if scene.in_band(anchor, p.d, tau) {
            n_valid += 1;
        }
        prop_by_class.entry(p.class_id).or_default().push(p);
    }

    let mut classes = BTreeMap::new();
    let mut incomparable = Vec::new();
    for (class, props) in &prop_by_class {
        let Some(reals) = real_by_class.get(class) else {
            incomparable.push(*class);
            continue;
        };
        let col = |f: fn(&ObjectSample) -> f64| reals.iter().map(f).collect::<Vec<f64>>();
        let pcol = |f: fn(&EvalProposal) -> f64| props.iter().map(|p| f(p)).collect::<Vec<f64>>();
        classes.insert(
            *class,
            ClassReport {
                n_real: reals.len(),
                n_proposed: props.len(),
                ks_depth: ks_statistic(&col(|s| s.depth), &pcol(|p| p.d))?,
                ks_height: ks_statistic(&col(|s| s.height), &pcol(|p| p.bbox.h))?,
                ks_aspect: ks_statistic(&col(|s| s.width / s.height), &pcol(|p| p.bbox.w / p.bbox.h))?,
            },
        );
    }

    let n = proposals.len();
    let (class_chi_square, chi_square_dof) = if n == 0 {
        (None, 0)
    } else {
        let prior = &model.class_prior;
        let mut chi = 0.0;
        let mut cells = 0;
        for (&c, &p) in prior.classes.iter().zip(&prior.probs) {
            if p <= 0.0 {
                continue;
            }
            let expected = n as f64 * p;
            let observed = prop_by_class.get(&c).map_or(0, Vec::len) as f64;
            chi += (observed - expected).powi(2) / expected;
            cells += 1;
        }
        (Some(chi), cells.max(1) - 1)
    };

    Ok(LayoutReport {
        n_real: real.len(),
        n_proposals: n,
        classes,
        incomparable,
        n_band_valid: n_valid,
        band_validity: (n > 0).then(|| n_valid as f64 / n as f64),
        class_chi_square,
        chi_square_dof,
    })
}

/// "Random location" baseline: class from the model prior, size and depth
/// copied from a random real object of that class, anchor uniform over the
/// whole frame.
pub fn random_location_proposals<R: Rng + ?Sized>(
    scene: &SceneContext,
    model: &LocationModel,
    reals_by_class: &BTreeMap<u32, Vec<ObjectSample>>,
    n: usize,
    show_prob: f64,
    rng: &mut R,
) -> Result<Vec<PlacementProposal>> {
    let gw = scene.depth().width() as u64;
    let gh = scene.depth().height() as u64;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let class_id = sample_class(model, rng)?;
        let pool = reals_by_class
            .get(&class_id)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::InsufficientData(format!("no real objects of class {class_id}")))?;
        let s = pool[rng.random_range(0..pool.len() as u64) as usize];
        let anchor = Pixel {
            x: rng.random_range(0..gw) as u32,
            y: rng.random_range(0..gh) as u32,
        };
        let (cx, by) = scene.mapping().to_frame(anchor);
        let bbox = BBox {
            cx,
            by,
            w: s.width,
            h: s.height,
        };
        out.push(PlacementProposal {
            class_id,
            d: s.depth,
            d_sampled: s.depth,
            bbox,
            anchor,
            visible_frac: bbox.visible_fraction(scene.frame_w as f64, scene.frame_h as f64),
            show_prob,
            stream: 0,
            attempt: 0,
        });
    }
    Ok(out)
}

/// "Original" baseline: the real annotations themselves, with the depth
/// read at each anchor.
pub fn original_proposals(scene_index: usize, scene: &SceneContext, boxes: &[(u32, BBox)]) -> Vec<EvalProposal> {
    boxes
        .iter()
        .map(|&(class_id, bbox)| {
            let p = scene.mapping().to_grid(bbox.cx, bbox.by);
            EvalProposal {
                scene: scene_index,
                class_id,
                d: scene.depth().get(p.x, p.y) as f64,
                bbox,
            }
        })
        .collect()
}
