//! Ancestral sampling of object placements.
//!
//! Each proposal walks the factorization class -> depth -> location ->
//! height -> width: a class from the prior, a depth from the class
//! log-normal, an anchor drawn uniformly from the drivable pixels whose
//! depth lies within `tau` of it, a log-normal height whose parameters
//! follow the depth, and a width from the class aspect-ratio histogram.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fit::{ClassModel, LocationModel};
use crate::geometry::{BBox, DepthGrid, DrivableMask, GridMapping, Pixel};

/// Seedable generator. A stream is fully keyed by the triple
/// (master seed, frame id, proposal index), so results do not depend on
/// which thread draws them.
#[derive(Clone, Debug)]
pub struct RngState(ChaCha8Rng);

const STREAM_TAG: u64 = 0x7363_656e_6570_6c63;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn from_seed(seed: u64) -> Self {
        Self::for_proposal(seed, u64::MAX, u64::MAX)
    }

    pub fn for_proposal(master_seed: u64, frame_id: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        for (chunk, word) in key.chunks_exact_mut(8).zip([
            splitmix64(master_seed),
            splitmix64(frame_id ^ STREAM_TAG),
            index,
            STREAM_TAG,
        ]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        Self(ChaCha8Rng::from_seed(key))
    }

    /// Seed digest recorded in proposal provenance.
    pub fn stream_id(master_seed: u64, frame_id: u64, index: u64) -> u64 {
        splitmix64(splitmix64(master_seed) ^ splitmix64(frame_id ^ STREAM_TAG) ^ index)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Uniform index in `0..len` that is identical on 32- and 64-bit targets.
fn uniform_index<R: Rng + ?Sized>(rng: &mut R, len: usize) -> usize {
    rng.random_range(0..len as u64) as usize
}

/// Depth and drivable grids of one frame, plus the grid-to-frame mapping.
#[derive(Clone, Debug)]
pub struct SceneContext {
    pub frame_w: u32,
    pub frame_h: u32,
    pub camera_id: String,
    depth: DepthGrid,
    drivable: DrivableMask,
    mapping: GridMapping,
    /// Row-major linear indices of drivable pixels.
    drivable_index: Vec<u32>,
}

impl SceneContext {
    pub fn new(
        frame_w: u32,
        frame_h: u32,
        camera_id: impl Into<String>,
        depth: DepthGrid,
        drivable: DrivableMask,
    ) -> Result<Self> {
        if depth.width() != drivable.width() || depth.height() != drivable.height() {
            return Err(Error::DimensionMismatch(format!(
                "depth {}x{} vs drivable {}x{}",
                depth.width(),
                depth.height(),
                drivable.width(),
                drivable.height()
            )));
        }
        let mapping = GridMapping::new(frame_w, frame_h, depth.width(), depth.height())?;
        let drivable_index = drivable
            .bits()
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| i as u32)
            .collect();
        Ok(Self {
            frame_w,
            frame_h,
            camera_id: camera_id.into(),
            depth,
            drivable,
            mapping,
            drivable_index,
        })
    }

    pub fn depth(&self) -> &DepthGrid {
        &self.depth
    }

    pub fn drivable(&self) -> &DrivableMask {
        &self.drivable
    }

    pub fn mapping(&self) -> &GridMapping {
        &self.mapping
    }

    fn pixel(&self, linear: u32) -> Pixel {
        let w = self.depth.width();
        Pixel {
            x: linear % w,
            y: linear / w,
        }
    }

    /// Same set and order as [`crate::geometry::placement_band`], restricted
    /// to the precomputed drivable pixels.
    pub fn band(&self, d: f64, tau: f64) -> Vec<Pixel> {
        let values = self.depth.values();
        self.drivable_index
            .iter()
            .filter(|&&i| (values[i as usize] as f64 - d).abs() <= tau)
            .map(|&i| self.pixel(i))
            .collect()
    }

    fn closest_depth(&self, d: f64) -> Option<f64> {
        let values = self.depth.values();
        let mut best: Option<(f64, f64)> = None;
        for &i in &self.drivable_index {
            let v = values[i as usize] as f64;
            let dist = (v - d).abs();
            if best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, v));
            }
        }
        best.map(|(_, v)| v)
    }

    /// Whether an anchor pixel lies in the placement band of `d`.
    pub fn in_band(&self, p: Pixel, d: f64, tau: f64) -> bool {
        self.drivable.get(p.x, p.y) && (self.depth.get(p.x, p.y) as f64 - d).abs() <= tau
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalParams {
    pub tau: f64,
    pub min_visible_frac: f64,
    pub max_attempts: u32,
    pub show_prob: f64,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self::from(&RunConfig::default())
    }
}

impl From<&RunConfig> for ProposalParams {
    fn from(c: &RunConfig) -> Self {
        Self {
            tau: c.tau,
            min_visible_frac: c.min_visible_frac,
            max_attempts: c.max_attempts,
            show_prob: c.show_prob,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacementProposal {
    pub class_id: u32,
    /// Depth the object is placed at (the sampled depth unless it was reset
    /// to the closest drivable depth).
    pub d: f64,
    pub d_sampled: f64,
    /// Box as sampled; its bottom-center is the anchor.
    pub bbox: BBox,
    /// Anchor cell on the depth grid.
    pub anchor: Pixel,
    pub visible_frac: f64,
    pub show_prob: f64,
    pub stream: u64,
    pub attempt: u32,
}

pub fn sample_class<R: Rng + ?Sized>(model: &LocationModel, rng: &mut R) -> Result<u32> {
    let prior = &model.class_prior;
    if prior.classes.is_empty() {
        return Err(Error::InsufficientData("class prior is empty".into()));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (&c, &p) in prior.classes.iter().zip(&prior.probs) {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(c);
        if u < acc {
            return Ok(c);
        }
    }
    last.ok_or_else(|| Error::InsufficientData("class prior has no mass".into()))
}

pub fn sample_depth<R: Rng + ?Sized>(model: &LocationModel, camera: &str, class_id: u32, rng: &mut R) -> Result<f64> {
    Ok(model.class_model(camera, class_id)?.depth.sample(rng))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocationDraw {
    pub pixel: Pixel,
    pub d_effective: f64,
}

/// Uniform anchor from the placement band of `d`. An empty band resets the
/// depth to the closest drivable depth first.
pub fn sample_location<R: Rng + ?Sized>(scene: &SceneContext, d: f64, tau: f64, rng: &mut R) -> Result<LocationDraw> {
    let mut d_effective = d;
    let mut band = scene.band(d, tau);
    if band.is_empty() {
        d_effective = scene.closest_depth(d).ok_or(Error::EmptyDrivableSpace)?;
        band = scene.band(d_effective, tau);
    }
    let pixel = band[uniform_index(rng, band.len())];
    Ok(LocationDraw { pixel, d_effective })
}

fn height_from<R: Rng + ?Sized>(cm: &ClassModel, d: f64, rng: &mut R) -> f64 {
    cm.height_params(d).sample(rng)
}

pub fn sample_height<R: Rng + ?Sized>(model: &LocationModel, camera: &str, class_id: u32, d: f64, rng: &mut R) -> Result<f64> {
    Ok(height_from(model.class_model(camera, class_id)?, d, rng))
}

pub fn sample_width<R: Rng + ?Sized>(model: &LocationModel, camera: &str, class_id: u32, h: f64, rng: &mut R) -> Result<f64> {
    Ok(model.class_model(camera, class_id)?.aspect.sample(rng) * h)
}

/// One proposal, resampled from scratch while its box shows less than
/// `min_visible_frac` of its area inside the frame.
pub fn propose<R: Rng + ?Sized>(
    scene: &SceneContext,
    model: &LocationModel,
    rng: &mut R,
    params: &ProposalParams,
) -> Result<PlacementProposal> {
    let (fw, fh) = (scene.frame_w as f64, scene.frame_h as f64);
    for attempt in 0..params.max_attempts {
        let class_id = sample_class(model, rng)?;
        let cm = model.class_model(&scene.camera_id, class_id)?;
        let d_sampled = cm.depth.sample(rng);
        let loc = sample_location(scene, d_sampled, params.tau, rng)?;
        let h = height_from(cm, loc.d_effective, rng);
        let w = cm.aspect.sample(rng) * h;
        let (cx, by) = scene.mapping.to_frame(loc.pixel);
        let bbox = BBox { cx, by, w, h };
        let visible_frac = bbox.visible_fraction(fw, fh);
        if visible_frac >= params.min_visible_frac && visible_frac > 0.0 {
            return Ok(PlacementProposal {
                class_id,
                d: loc.d_effective,
                d_sampled,
                bbox,
                anchor: loc.pixel,
                visible_frac,
                show_prob: params.show_prob,
                stream: 0,
                attempt,
            });
        }
    }
    Err(Error::MaxAttemptsExceeded {
        attempts: params.max_attempts,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameProposals {
    pub proposals: Vec<PlacementProposal>,
    /// Proposals abandoned after `max_attempts` rejections.
    pub dropped: usize,
}

/// `n_objects` independent proposals, proposal `i` drawing from the stream
/// keyed by `(master_seed, frame_id, i)`.
pub fn augment_frame(
    scene: &SceneContext,
    model: &LocationModel,
    n_objects: usize,
    master_seed: u64,
    frame_id: u64,
    params: &ProposalParams,
) -> Result<FrameProposals> {
    let mut out = FrameProposals::default();
    for i in 0..n_objects as u64 {
        let mut rng = RngState::for_proposal(master_seed, frame_id, i);
        match propose(scene, model, &mut rng, params) {
            Ok(mut p) => {
                p.stream = RngState::stream_id(master_seed, frame_id, i);
                out.proposals.push(p);
            }
            Err(Error::MaxAttemptsExceeded { .. }) => out.dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
