use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use rayon::prelude::*;
use rayon::ThreadPool;
use scene_placer::dataset::{
    self, read_annotations, read_depth_grid, read_label_grid, read_mask, AnnotatedFrame, AugmentedLayout,
    LayoutProposal,
};
use scene_placer::eval::{layout_report, EvalProposal, LabeledSample};
use scene_placer::fit::{fit_model, FitStatus, ObjectSample};
use scene_placer::geometry::drivable_mask;
use scene_placer::refine::{refine_layout, ProposalMask};
use scene_placer::sampler::{augment_frame, ProposalParams};
use scene_placer::{Error, LocationModel, RunConfig, SceneContext};

fn grid_path(dir: &Path, rel: &Option<String>) -> Option<PathBuf> {
    rel.as_ref().map(|r| dir.join(r))
}

/// Depth and drivable grids of a frame; `None` if either reference is missing.
fn load_scene(
    frame: &AnnotatedFrame,
    depth_dir: &Path,
    semantic_dir: &Path,
    config: &RunConfig,
) -> scene_placer::Result<Option<SceneContext>> {
    let (Some(dp), Some(sp)) = (
        grid_path(depth_dir, &frame.depth_path),
        grid_path(semantic_dir, &frame.semantic_path),
    ) else {
        return Ok(None);
    };
    let depth = read_depth_grid(&dp, config.depth_scale)?;
    let labels = read_label_grid(&sp)?;
    let drivable = drivable_mask(&labels, &config.drivable_set())?;
    SceneContext::new(frame.width, frame.height, frame.camera_id.clone(), depth, drivable).map(Some)
}

pub fn fit(
    annotations: &Path,
    depth_dir: &Path,
    config: &RunConfig,
    out: &Path,
    pool: &ThreadPool,
) -> anyhow::Result<()> {
    let data = read_annotations(annotations)?;
    if data.dropped_annotations > 0 {
        warn!("dropped {} annotations lying outside their frame", data.dropped_annotations);
    }
    let lookup = |f: &AnnotatedFrame| match grid_path(depth_dir, &f.depth_path) {
        Some(p) => read_depth_grid(&p, config.depth_scale).map(Some),
        None => Ok(None),
    };
    let (model, report) = pool.install(|| fit_model(&data.frames, lookup, config))?;
    dataset::save_model(&model, out)?;

    println!("{:<12} {:>6} {:>8}  status", "camera", "class", "count");
    for c in &report.classes {
        let status = match c.status {
            FitStatus::Fitted => "fitted",
            FitStatus::Fallback => "pooled-fallback",
            FitStatus::Excluded => "excluded",
        };
        println!("{:<12} {:>6} {:>8}  {status}", c.camera, c.class, c.count);
    }
    if report.skipped_frames > 0 {
        println!("skipped {} frames without depth", report.skipped_frames);
    }
    if report.skipped_objects > 0 {
        println!("skipped {} objects with non-positive depth", report.skipped_objects);
    }
    Ok(())
}

fn mask_file(masks_dir: &Path, frame_id: u64, index: usize) -> PathBuf {
    masks_dir.join(format!("{frame_id}_{index}.pgm"))
}

/// Loads the mask of every proposal. An explicit `mask` entry must exist;
/// otherwise `<frame_id>_<index>.pgm` is used when present.
fn load_masks(layout: &AugmentedLayout, masks_dir: &Path) -> scene_placer::Result<Vec<Option<ProposalMask>>> {
    layout
        .proposals
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (path, required) = match &p.mask {
                Some(m) => (masks_dir.join(m), true),
                None => (mask_file(masks_dir, layout.frame_id, i), false),
            };
            if !required && !path.is_file() {
                return Ok(None);
            }
            let (width, height, bits) = read_mask(&path)?;
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(Some(ProposalMask {
                path: name,
                width,
                height,
                bits,
            }))
        })
        .collect()
}

enum FrameOutcome {
    Written(usize, usize),
    Skipped,
}

#[allow(clippy::too_many_arguments)]
pub fn augment(
    annotations: &Path,
    model_path: &Path,
    depth_dir: &Path,
    semantic_dir: &Path,
    masks_dir: Option<&Path>,
    config: &RunConfig,
    out: &Path,
    pool: &ThreadPool,
) -> anyhow::Result<()> {
    let data = read_annotations(annotations)?;
    if data.frames.is_empty() {
        return Err(Error::InsufficientData("dataset has no frames".into()).into());
    }
    let model = dataset::load_model(model_path)?;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let params = ProposalParams::from(config);

    let outcomes: Vec<scene_placer::Result<FrameOutcome>> = pool.install(|| {
        data.frames
            .par_iter()
            .map(|frame| augment_one(frame, &model, depth_dir, semantic_dir, masks_dir, config, &params, out))
            .collect()
    });

    let (mut written, mut skipped, mut proposals, mut dropped) = (0, 0, 0, 0);
    for o in outcomes {
        match o? {
            FrameOutcome::Written(n, d) => {
                written += 1;
                proposals += n;
                dropped += d;
            }
            FrameOutcome::Skipped => skipped += 1,
        }
    }
    println!("frames written: {written}");
    println!("frames skipped: {skipped}");
    println!("proposals: {proposals}");
    println!("dropped: {dropped}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn augment_one(
    frame: &AnnotatedFrame,
    model: &LocationModel,
    depth_dir: &Path,
    semantic_dir: &Path,
    masks_dir: Option<&Path>,
    config: &RunConfig,
    params: &ProposalParams,
    out: &Path,
) -> scene_placer::Result<FrameOutcome> {
    let Some(scene) = load_scene(frame, depth_dir, semantic_dir, config)? else {
        warn!("frame {} has no depth or semantic grid, skipped", frame.frame_id);
        return Ok(FrameOutcome::Skipped);
    };
    let props = augment_frame(&scene, model, config.n_objects, config.seed, frame.frame_id, params)?;
    let mut layout = AugmentedLayout {
        frame_id: frame.frame_id,
        proposals: props.proposals.iter().map(LayoutProposal::from).collect(),
        dropped: props.dropped,
    };
    if let Some(dir) = masks_dir {
        let masks = load_masks(&layout, dir)?;
        layout = refine_layout(&layout, &masks, frame.width, frame.height, config.min_visible)?;
    }
    dataset::save_layout(&layout, &out.join(format!("{}.json", frame.frame_id)))?;
    Ok(FrameOutcome::Written(layout.proposals.len(), layout.dropped))
}

pub fn refine(
    layout_path: &Path,
    masks_dir: &Path,
    width: u32,
    height: u32,
    config: &RunConfig,
    out: &Path,
) -> anyhow::Result<()> {
    let layout = dataset::load_layout(layout_path)?;
    let masks = load_masks(&layout, masks_dir)?;
    let refined = refine_layout(&layout, &masks, width, height, config.min_visible)?;
    dataset::save_layout(&refined, out)?;
    println!(
        "kept {} of {} proposals ({} dropped in total)",
        refined.proposals.len(),
        layout.proposals.len(),
        refined.dropped
    );
    Ok(())
}

fn read_layouts(dir: &Path) -> scene_placer::Result<BTreeMap<u64, AugmentedLayout>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut layouts = BTreeMap::new();
    for p in paths {
        let layout = dataset::load_layout(&p)?;
        if layouts.insert(layout.frame_id, layout).is_some() {
            return Err(Error::Schema(format!("duplicate layout for frame in {}", p.display())));
        }
    }
    Ok(layouts)
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    annotations: &Path,
    layouts_dir: &Path,
    model_path: &Path,
    depth_dir: &Path,
    semantic_dir: &Path,
    config: &RunConfig,
    out: &Path,
) -> anyhow::Result<()> {
    let data = read_annotations(annotations)?;
    if data.frames.is_empty() {
        return Err(Error::InsufficientData("dataset has no frames".into()).into());
    }
    let model = dataset::load_model(model_path)?;
    let layouts = read_layouts(layouts_dir)?;

    let mut scenes = Vec::new();
    let mut real = Vec::new();
    let mut proposals = Vec::new();
    for frame in &data.frames {
        let Some(scene) = load_scene(frame, depth_dir, semantic_dir, config)? else {
            continue;
        };
        let idx = scenes.len();
        for ann in &frame.annotations {
            let p = scene.mapping().to_grid(ann.bbox.cx, ann.bbox.by);
            let d = scene.depth().median3x3(p.x, p.y) as f64;
            if d > 0.0 {
                real.push(LabeledSample {
                    class_id: ann.class_id,
                    sample: ObjectSample {
                        depth: d,
                        height: ann.bbox.h,
                        width: ann.bbox.w,
                    },
                });
            }
        }
        if let Some(layout) = layouts.get(&frame.frame_id) {
            proposals.extend(layout.proposals.iter().map(|p| EvalProposal {
                scene: idx,
                class_id: p.class,
                d: p.d,
                bbox: p.bbox(),
            }));
        }
        scenes.push(scene);
    }
    let unmatched = layouts
        .keys()
        .filter(|id| !data.frames.iter().any(|f| f.frame_id == **id))
        .count();
    if unmatched > 0 {
        warn!("{unmatched} layouts reference frames not in the annotations");
    }
    info!("{} scenes, {} real objects, {} proposals", scenes.len(), real.len(), proposals.len());

    let report = layout_report(&real, &proposals, &scenes, &model, config.tau)?;
    let mut json = serde_json::to_string_pretty(&report).context("serializing report")?;
    json.push('\n');
    dataset::write_atomic(out, json.as_bytes())?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn render(
    layout_path: &Path,
    width: u32,
    height: u32,
    annotations: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let layout = dataset::load_layout(layout_path)?;
    let proposals: Vec<_> = layout.proposals.iter().map(LayoutProposal::bbox).collect();
    let real = match annotations {
        Some(path) => {
            let data = read_annotations(path)?;
            data.frames
                .iter()
                .find(|f| f.frame_id == layout.frame_id)
                .map(|f| f.annotations.iter().map(|a| a.bbox).collect())
                .unwrap_or_default()
        }
        None => Vec::new(),
    };
    dataset::render_overlay(width, height, &real, &proposals, out)?;
    Ok(())
}
