//! Box refinement from instance masks and depth-ordered mask compositing.

use crate::dataset::AugmentedLayout;
use crate::error::{Error, Result};
use crate::geometry::{crop_geometry, BBox, PatchRect};

/// Binary mask over a square crop; mask pixels scale onto the patch side.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
    pub patch: PatchRect,
}

impl InstanceMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>, patch: PatchRect) -> Result<Self> {
        if width == 0 || height == 0 || width as usize * height as usize != bits.len() {
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
            patch,
        })
    }

    fn scale(&self) -> (f64, f64) {
        (
            self.patch.side as f64 / self.width as f64,
            self.patch.side as f64 / self.height as f64,
        )
    }

    /// Frame pixels covered by the mask (nearest-neighbor resampling),
    /// clipped to the frame.
    pub fn to_frame(&self, frame_w: u32, frame_h: u32) -> FrameMask {
        let PatchRect { x0, y0, side } = self.patch;
        // source index of a target pixel center, in exact integer arithmetic
        let source = |t: u32, n: u32| ((2 * t as u64 + 1) * n as u64 / (2 * side as u64)).min(n as u64 - 1) as usize;
        let mut pixels = Vec::new();
        for y in y0..(y0 + side).min(frame_h) {
            let j = source(y - y0, self.height);
            for x in x0..(x0 + side).min(frame_w) {
                let i = source(x - x0, self.width);
                if self.bits[j * self.width as usize + i] {
                    pixels.push(y * frame_w + x);
                }
            }
        }
        FrameMask {
            frame_w,
            frame_h,
            pixels,
        }
    }
}

/// Mask in frame coordinates as sorted row-major linear pixel indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrameMask {
    pub frame_w: u32,
    pub frame_h: u32,
    pub pixels: Vec<u32>,
}

impl FrameMask {
    pub fn from_pixels(frame_w: u32, frame_h: u32, mut pixels: Vec<u32>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Self {
            frame_w,
            frame_h,
            pixels,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Tight box around the set bits, in frame coordinates.
pub fn refine_bbox(mask: &InstanceMask) -> Result<BBox> {
    let w = mask.width as usize;
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (k, _) in mask.bits.iter().enumerate().filter(|(_, b)| **b) {
        let (i, j) = (k % w, k / w);
        bounds = Some(match bounds {
            None => (i, j, i, j),
            Some((a, b, c, d)) => (a.min(i), b.min(j), c.max(i), d.max(j)),
        });
    }
    let (i0, j0, i1, j1) = bounds.ok_or(Error::EmptyMask)?;
    let (sx, sy) = mask.scale();
    let x_lo = mask.patch.x0 as f64 + i0 as f64 * sx;
    let x_hi = mask.patch.x0 as f64 + (i1 + 1) as f64 * sx;
    let y_lo = mask.patch.y0 as f64 + j0 as f64 * sy;
    let y_hi = mask.patch.y0 as f64 + (j1 + 1) as f64 * sy;
    Ok(BBox {
        cx: 0.5 * (x_lo + x_hi),
        by: y_hi,
        w: x_hi - x_lo,
        h: y_hi - y_lo,
    })
}

/// Paste order: farthest (lowest disparity) first, ties by index.
pub fn composite_order(depths: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..depths.len()).collect();
    order.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositePlan {
    /// Indices in paste order; proposals left out of the plan are absent.
    pub order: Vec<usize>,
    /// Unoccluded frame pixels per input proposal.
    pub visible: Vec<FrameMask>,
    /// Visible pixels over mask pixels, per input proposal (0 for empty or
    /// excluded masks).
    pub visible_frac: Vec<f64>,
}

/// Pastes masks in `order`, later ones overwriting earlier ones.
pub fn composite_masks(masks: &[FrameMask], order: &[usize]) -> CompositePlan {
    let mut visible: Vec<FrameMask> = masks
        .iter()
        .map(|m| FrameMask {
            frame_w: m.frame_w,
            frame_h: m.frame_h,
            pixels: Vec::new(),
        })
        .collect();
    let mut visible_frac = vec![0.0; masks.len()];
    if let Some(first) = masks.first() {
        let n = first.frame_w as usize * first.frame_h as usize;
        let mut owner = vec![u32::MAX; n];
        for &k in order {
            for &p in &masks[k].pixels {
                owner[p as usize] = k as u32;
            }
        }
        for &k in order {
            let vis: Vec<u32> = masks[k]
                .pixels
                .iter()
                .copied()
                .filter(|&p| owner[p as usize] == k as u32)
                .collect();
            if !masks[k].is_empty() {
                visible_frac[k] = vis.len() as f64 / masks[k].len() as f64;
            }
            visible[k].pixels = vis;
        }
    }
    CompositePlan {
        order: order.to_vec(),
        visible,
        visible_frac,
    }
}

/// Keeps proposals whose unoccluded fraction reaches `min_visible`.
///
/// Visibility only depends on nearer proposals, so decisions are made from
/// the nearest proposal backwards against the proposals already kept. The
/// returned plan is recomputed over the kept set only.
pub fn visibility_filter(masks: &[FrameMask], depths: &[f64], min_visible: f64) -> (Vec<usize>, CompositePlan) {
    let order = composite_order(depths);
    let mut kept = Vec::new();
    if let Some(first) = masks.first() {
        let mut covered = vec![false; first.frame_w as usize * first.frame_h as usize];
        for &k in order.iter().rev() {
            let m = &masks[k];
            let free = m.pixels.iter().filter(|&&p| !covered[p as usize]).count();
            let frac = if m.is_empty() { 0.0 } else { free as f64 / m.len() as f64 };
            if frac >= min_visible {
                kept.push(k);
                for &p in &m.pixels {
                    covered[p as usize] = true;
                }
            }
        }
    }
    kept.sort_unstable();
    let kept_order: Vec<usize> = order.into_iter().filter(|k| kept.binary_search(k).is_ok()).collect();
    let plan = composite_masks(masks, &kept_order);
    (kept, plan)
}

/// Patch-local mask loaded for one layout proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalMask {
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

/// Tightens every masked proposal's box to its mask, composites the masks
/// far to near and drops proposals left with less than `min_visible` of
/// their mask visible. Proposals without a mask pass through unchanged.
/// `masks[i]` belongs to `layout.proposals[i]`; each mask covers the crop
/// of its proposal box.
pub fn refine_layout(
    layout: &AugmentedLayout,
    masks: &[Option<ProposalMask>],
    frame_w: u32,
    frame_h: u32,
    min_visible: f64,
) -> Result<AugmentedLayout> {
    if masks.len() != layout.proposals.len() {
        return Err(Error::Schema(format!(
            "{} masks for {} proposals",
            masks.len(),
            layout.proposals.len()
        )));
    }
    let mut out = layout.clone();
    let mut keep = vec![true; layout.proposals.len()];
    let mut masked = Vec::new();
    let mut frame_masks = Vec::new();
    for (i, (prop, mask)) in out.proposals.iter_mut().zip(masks).enumerate() {
        let Some(mask) = mask else { continue };
        let patch = crop_geometry(&prop.bbox(), frame_w, frame_h)?;
        let inst = InstanceMask::new(mask.width, mask.height, mask.bits.clone(), patch)?;
        match refine_bbox(&inst) {
            Ok(b) => {
                prop.bbox = [b.cx, b.by, b.w, b.h];
                prop.mask = Some(mask.path.clone());
                masked.push(i);
                frame_masks.push(inst.to_frame(frame_w, frame_h));
            }
            Err(Error::EmptyMask) => keep[i] = false,
            Err(e) => return Err(e),
        }
    }
    let depths: Vec<f64> = masked.iter().map(|&i| out.proposals[i].d).collect();
    let (kept, _) = visibility_filter(&frame_masks, &depths, min_visible);
    for (k, &i) in masked.iter().enumerate() {
        if kept.binary_search(&k).is_err() {
            keep[i] = false;
        }
    }
    let before = out.proposals.len();
    let mut it = keep.iter();
    out.proposals.retain(|_| *it.next().unwrap());
    out.dropped += before - out.proposals.len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(fw: u32, fh: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> FrameMask {
        let mut px = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                px.push(y * fw + x);
            }
        }
        FrameMask::from_pixels(fw, fh, px)
    }

    #[test]
    fn full_patch_mask_gives_patch_box() {
        let patch = PatchRect { x0: 10, y0: 20, side: 8 };
        let m = InstanceMask::new(8, 8, vec![true; 64], patch).unwrap();
        assert_eq!(refine_bbox(&m).unwrap(), BBox { cx: 14.0, by: 28.0, w: 8.0, h: 8.0 });
        // a 512x512 mask over the same patch maps back onto it
        let m = InstanceMask::new(512, 512, vec![true; 512 * 512], patch).unwrap();
        assert_eq!(refine_bbox(&m).unwrap(), BBox { cx: 14.0, by: 28.0, w: 8.0, h: 8.0 });
    }

    #[test]
    fn single_pixel_mask() {
        let mut bits = vec![false; 100];
        bits[4 * 10 + 3] = true;
        let m = InstanceMask::new(10, 10, bits, PatchRect { x0: 0, y0: 0, side: 10 }).unwrap();
        assert_eq!(refine_bbox(&m).unwrap(), BBox { cx: 3.5, by: 5.0, w: 1.0, h: 1.0 });
    }

    #[test]
    fn empty_mask_error() {
        let m = InstanceMask::new(2, 2, vec![false; 4], PatchRect { x0: 0, y0: 0, side: 2 }).unwrap();
        assert!(matches!(refine_bbox(&m), Err(Error::EmptyMask)));
    }

    #[test]
    fn order_cases() {
        assert_eq!(composite_order(&[30.0, 10.0, 20.0]), vec![1, 2, 0]);
        assert_eq!(composite_order(&[5.0; 4]), vec![0, 1, 2, 3]);
    }

    #[test]
    fn disjoint_and_total_occlusion() {
        let a = rect_mask(10, 10, 0, 0, 3, 3);
        let b = rect_mask(10, 10, 5, 5, 8, 8);
        let plan = composite_masks(&[a.clone(), b], &[0, 1]);
        assert_eq!(plan.visible_frac, vec![1.0, 1.0]);

        let plan = composite_masks(&[a.clone(), a.clone()], &composite_order(&[1.0, 2.0]));
        assert_eq!(plan.visible_frac, vec![0.0, 1.0]);
        assert!(plan.visible[0].is_empty());
    }

    #[test]
    fn filter_thresholds() {
        let a = rect_mask(10, 10, 0, 0, 4, 4);
        let masks = vec![a.clone(), a];
        let (kept, _) = visibility_filter(&masks, &[1.0, 2.0], 0.0);
        assert_eq!(kept, vec![0, 1]);
        let (kept, plan) = visibility_filter(&masks, &[1.0, 2.0], 0.2);
        assert_eq!(kept, vec![1]);
        assert_eq!(plan.order, vec![1]);
        assert_eq!(plan.visible_frac, vec![0.0, 1.0]);
    }

    #[test]
    fn layout_refinement_drops_hidden_and_empty() {
        use crate::dataset::LayoutProposal;
        let prop = |d: f64| LayoutProposal {
            class: 1,
            d,
            bbox: [50.0, 60.0, 10.0, 10.0],
            show_prob: 0.5,
            mask: None,
        };
        let layout = AugmentedLayout {
            frame_id: 1,
            proposals: vec![prop(1.0), prop(2.0), prop(3.0), prop(4.0)],
            dropped: 1,
        };
        // 4x4 mask over the 20x20 crop, object in the central 2x2 cells
        let mut bits = vec![false; 16];
        for k in [5, 6, 9, 10] {
            bits[k] = true;
        }
        let m = |path: &str, bits: Vec<bool>| {
            Some(ProposalMask {
                path: path.into(),
                width: 4,
                height: 4,
                bits,
            })
        };
        let masks = vec![m("a", bits.clone()), m("b", bits), m("c", vec![false; 16]), None];
        let out = refine_layout(&layout, &masks, 100, 100, 0.2).unwrap();
        assert_eq!(out.proposals.len(), 2);
        assert_eq!(out.dropped, 3);
        assert_eq!(out.proposals[0].mask.as_deref(), Some("b"));
        assert_eq!(out.proposals[0].bbox, [50.0, 60.0, 10.0, 10.0]);
        assert_eq!(out.proposals[1], prop(4.0));
    }

    #[test]
    fn removing_occluded_keeps_others() {
        let far = rect_mask(10, 10, 0, 0, 4, 4);
        let near = rect_mask(10, 10, 0, 0, 6, 6);
        let other = rect_mask(10, 10, 3, 3, 9, 9);
        let depths = [1.0, 3.0, 2.0];
        let masks = vec![far, near, other];
        let full = composite_masks(&masks, &composite_order(&depths));
        assert_eq!(full.visible_frac[0], 0.0);
        let without = composite_masks(&masks, &[2, 1]);
        assert_eq!(full.visible[1], without.visible[1]);
        assert_eq!(full.visible[2], without.visible[2]);
    }
}
