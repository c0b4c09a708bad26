//! Reading and writing everything that crosses the process boundary:
//! COCO-style annotations, PGM depth/label/mask grids, the model JSON,
//! augmented layouts and PPM overlays.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{LocationModel, MODEL_SCHEMA_VERSION};
use crate::geometry::{BBox, DepthGrid, LabelGrid};
use crate::sampler::PlacementProposal;

pub const DEFAULT_CAMERA: &str = "default";

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub class_id: u32,
    pub bbox: BBox,
    pub mask: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedFrame {
    pub frame_id: u64,
    pub file_name: String,
    pub camera_id: String,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<Annotation>,
    pub depth_path: Option<String>,
    pub semantic_path: Option<String>,
}

impl AnnotatedFrame {
    /// False when the frame lacks a depth or semantic grid reference.
    pub fn has_grids(&self) -> bool {
        self.depth_path.is_some() && self.semantic_path.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub frames: Vec<AnnotatedFrame>,
    pub categories: Vec<Category>,
    /// Annotations removed because nothing of them lay inside the frame.
    pub dropped_annotations: usize,
}

impl Dataset {
    pub fn category_name(&self, id: u32) -> Option<&str> {
        self.categories.iter().find(|c| c.id == id).map(|c| c.name.as_str())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<Category>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera: Option<String>,
    #[serde(default)]
    depth_file: Option<String>,
    #[serde(default)]
    semantic_file: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
}

fn json_offset(text: &str, err: &serde_json::Error) -> usize {
    let line = err.line();
    if line == 0 {
        return text.len();
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + err.column().saturating_sub(1)).min(text.len())
}

fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: json_offset(text, &e),
        message: e.to_string(),
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Parses COCO-style annotation JSON. Boxes are clipped to their frame and
/// converted to the bottom-center representation.
pub fn parse_annotations(text: &str) -> Result<Dataset> {
    let coco: CocoFile = parse_json(text)?;
    let mut frames: Vec<AnnotatedFrame> = Vec::with_capacity(coco.images.len());
    let mut index = std::collections::HashMap::new();
    for img in coco.images {
        if index.insert(img.id, frames.len()).is_some() {
            return Err(Error::Schema(format!("duplicate image id {}", img.id)));
        }
        if img.width == 0 || img.height == 0 {
            return Err(Error::Schema(format!("image {} has zero size", img.id)));
        }
        frames.push(AnnotatedFrame {
            frame_id: img.id,
            file_name: img.file_name,
            camera_id: img.camera.unwrap_or_else(|| DEFAULT_CAMERA.to_string()),
            width: img.width,
            height: img.height,
            annotations: Vec::new(),
            depth_path: img.depth_file,
            semantic_path: img.semantic_file,
        });
    }
    let mut dropped = 0;
    for ann in coco.annotations {
        if !coco.categories.iter().any(|c| c.id == ann.category_id) {
            return Err(Error::Schema(format!(
                "annotation {} references unknown category {}",
                ann.id, ann.category_id
            )));
        }
        let Some(&fi) = index.get(&ann.image_id) else {
            return Err(Error::Schema(format!(
                "annotation {} references unknown image {}",
                ann.id, ann.image_id
            )));
        };
        let [x, y, w, h] = ann.bbox;
        if !ann.bbox.iter().all(|v| v.is_finite()) {
            return Err(Error::Schema(format!("annotation {} has a non-finite box", ann.id)));
        }
        let frame = &mut frames[fi];
        let clipped = BBox::from_corner(x, y, w, h).clip(frame.width as f64, frame.height as f64);
        match clipped {
            Some(bbox) if w > 0.0 && h > 0.0 => frame.annotations.push(Annotation {
                class_id: ann.category_id,
                bbox,
                mask: ann.mask,
            }),
            _ => dropped += 1,
        }
    }
    Ok(Dataset {
        frames,
        categories: coco.categories,
        dropped_annotations: dropped,
    })
}

pub fn read_annotations(path: &Path) -> Result<Dataset> {
    parse_annotations(&read_text(path)?)
}

/// Canonical COCO JSON: images in dataset order, annotations renumbered
/// from 1 in frame order.
pub fn annotations_to_json(dataset: &Dataset) -> String {
    let mut images = Vec::with_capacity(dataset.frames.len());
    let mut annotations = Vec::new();
    for f in &dataset.frames {
        images.push(CocoImage {
            id: f.frame_id,
            file_name: f.file_name.clone(),
            width: f.width,
            height: f.height,
            camera: (f.camera_id != DEFAULT_CAMERA).then(|| f.camera_id.clone()),
            depth_file: f.depth_path.clone(),
            semantic_file: f.semantic_path.clone(),
        });
        for a in &f.annotations {
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id: f.frame_id,
                category_id: a.class_id,
                bbox: a.bbox.to_corner(),
                mask: a.mask.clone(),
            });
        }
    }
    let coco = CocoFile {
        images,
        annotations,
        categories: dataset.categories.clone(),
    };
    let mut s = serde_json::to_string_pretty(&coco).expect("COCO structures serialize");
    s.push('\n');
    s
}

pub fn write_annotations(dataset: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, annotations_to_json(dataset).as_bytes())
}

struct Pgm<'a> {
    width: u32,
    height: u32,
    maxval: u32,
    data: &'a [u8],
}

fn parse_pgm(bytes: &[u8]) -> Result<Pgm<'_>> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each header token
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("bad PGM header at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad PGM header number at byte {start}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("PGM header not terminated by whitespace".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("invalid PGM maxval {maxval}")));
    }
    let bpp = if maxval > 255 { 2 } else { 1 };
    let expected = width as usize * height as usize * bpp;
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(Error::Format(format!(
            "PGM {}x{} expects {} data bytes, found {}",
            width,
            height,
            expected,
            data.len()
        )));
    }
    Ok(Pgm {
        width,
        height,
        maxval,
        data,
    })
}

fn pgm_header(width: u32, height: u32, maxval: u32) -> Vec<u8> {
    format!("P5\n{width} {height}\n{maxval}\n").into_bytes()
}

/// 16-bit big-endian PGM (maxval 65535); disparity = raw * scale.
pub fn parse_depth_grid(bytes: &[u8], scale: f64) -> Result<DepthGrid> {
    let pgm = parse_pgm(bytes)?;
    if pgm.maxval != 65535 {
        return Err(Error::Format(format!(
            "depth PGM must have maxval 65535, found {}",
            pgm.maxval
        )));
    }
    let values = pgm
        .data
        .chunks_exact(2)
        .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 * scale) as f32)
        .collect();
    DepthGrid::new(pgm.width, pgm.height, values)
}

pub fn read_depth_grid(path: &Path, scale: f64) -> Result<DepthGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_depth_grid(&bytes, scale)
}

pub fn encode_depth_grid(grid: &DepthGrid, scale: f64) -> Result<Vec<u8>> {
    let mut out = pgm_header(grid.width(), grid.height(), 65535);
    out.reserve(grid.values().len() * 2);
    for &v in grid.values() {
        let raw = (v as f64 / scale).round();
        if !(0.0..=65535.0).contains(&raw) {
            return Err(Error::Format(format!(
                "depth {v} not representable at scale {scale}"
            )));
        }
        out.extend_from_slice(&(raw as u16).to_be_bytes());
    }
    Ok(out)
}

pub fn write_depth_grid(grid: &DepthGrid, scale: f64, path: &Path) -> Result<()> {
    write_atomic(path, &encode_depth_grid(grid, scale)?)
}

/// 8-bit PGM of class indices.
pub fn parse_label_grid(bytes: &[u8]) -> Result<LabelGrid> {
    let pgm = parse_pgm(bytes)?;
    if pgm.maxval > 255 {
        return Err(Error::Format(format!(
            "label PGM must be 8-bit, found maxval {}",
            pgm.maxval
        )));
    }
    LabelGrid::new(pgm.width, pgm.height, pgm.data.to_vec())
}

pub fn read_label_grid(path: &Path) -> Result<LabelGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_label_grid(&bytes)
}

pub fn encode_label_grid(grid: &LabelGrid) -> Vec<u8> {
    let mut out = pgm_header(grid.width(), grid.height(), 255);
    out.extend_from_slice(grid.labels());
    out
}

pub fn write_label_grid(grid: &LabelGrid, path: &Path) -> Result<()> {
    write_atomic(path, &encode_label_grid(grid))
}

/// Binary mask from an 8-bit PGM: any non-zero value is object.
pub fn parse_mask(bytes: &[u8]) -> Result<(u32, u32, Vec<bool>)> {
    let pgm = parse_pgm(bytes)?;
    if pgm.maxval > 255 {
        return Err(Error::Format("mask PGM must be 8-bit".into()));
    }
    Ok((pgm.width, pgm.height, pgm.data.iter().map(|&v| v != 0).collect()))
}

pub fn read_mask(path: &Path) -> Result<(u32, u32, Vec<bool>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_mask(&bytes)
}

pub fn encode_mask(width: u32, height: u32, bits: &[bool]) -> Vec<u8> {
    let mut out = pgm_header(width, height, 255);
    out.extend(bits.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn model_to_json(model: &LocationModel) -> String {
    let mut s = serde_json::to_string_pretty(model).expect("model serializes");
    s.push('\n');
    s
}

pub fn parse_model(text: &str) -> Result<LocationModel> {
    let value: serde_json::Value = parse_json(text)?;
    match value.get("schema").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_SCHEMA_VERSION as u64 => {}
        other => {
            return Err(Error::Version(format!(
                "expected schema {MODEL_SCHEMA_VERSION}, found {other:?}"
            )))
        }
    }
    serde_json::from_value(value).map_err(|e| {
        Error::Version(format!("document does not match schema {MODEL_SCHEMA_VERSION}: {e}"))
    })
}

pub fn save_model(model: &LocationModel, path: &Path) -> Result<()> {
    write_atomic(path, model_to_json(model).as_bytes())
}

pub fn load_model(path: &Path) -> Result<LocationModel> {
    parse_model(&read_text(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutProposal {
    pub class: u32,
    pub d: f64,
    /// `[cx, by, w, h]`
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub show_prob: f64,
    pub mask: Option<String>,
}

impl LayoutProposal {
    pub fn bbox(&self) -> BBox {
        let [cx, by, w, h] = self.bbox;
        BBox { cx, by, w, h }
    }
}

impl From<&PlacementProposal> for LayoutProposal {
    fn from(p: &PlacementProposal) -> Self {
        Self {
            class: p.class_id,
            d: p.d,
            bbox: [p.bbox.cx, p.bbox.by, p.bbox.w, p.bbox.h],
            show_prob: p.show_prob,
            mask: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentedLayout {
    pub frame_id: u64,
    pub proposals: Vec<LayoutProposal>,
    pub dropped: usize,
}

pub fn layout_to_json(layout: &AugmentedLayout) -> String {
    let mut s = serde_json::to_string_pretty(layout).expect("layout serializes");
    s.push('\n');
    s
}

pub fn parse_layout(text: &str) -> Result<AugmentedLayout> {
    let layout: AugmentedLayout = parse_json(text)?;
    for p in &layout.proposals {
        p.bbox().validate()?;
        if !(p.d > 0.0) || !(0.0..=1.0).contains(&p.show_prob) {
            return Err(Error::Schema(format!("invalid proposal {p:?}")));
        }
    }
    Ok(layout)
}

pub fn save_layout(layout: &AugmentedLayout, path: &Path) -> Result<()> {
    write_atomic(path, layout_to_json(layout).as_bytes())
}

pub fn load_layout(path: &Path) -> Result<AugmentedLayout> {
    parse_layout(&read_text(path)?)
}

pub const OVERLAY_BACKGROUND: [u8; 3] = [128, 128, 128];
pub const OVERLAY_REAL: [u8; 3] = [0, 0, 255];
pub const OVERLAY_PROPOSAL: [u8; 3] = [0, 255, 0];
const STROKE: i64 = 2;

/// Integer pixel extent `[x0, x1] x [y0, y1]` (inclusive) covered by a box.
pub fn box_pixel_extent(b: &BBox) -> (i64, i64, i64, i64) {
    (
        b.x0().floor() as i64,
        b.y0().floor() as i64,
        (b.x1().ceil() as i64 - 1).max(b.x0().floor() as i64),
        (b.y1().ceil() as i64 - 1).max(b.y0().floor() as i64),
    )
}

fn draw_outline(canvas: &mut [u8], width: u32, height: u32, b: &BBox, color: [u8; 3]) {
    let (x0, y0, x1, y1) = box_pixel_extent(b);
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && x < width as i64 && y < height as i64 {
            let i = 3 * (y as usize * width as usize + x as usize);
            canvas[i..i + 3].copy_from_slice(&color);
        }
    };
    for y in y0..=y1 {
        for x in x0..=x1 {
            let on_edge =
                x - x0 < STROKE || x1 - x < STROKE || y - y0 < STROKE || y1 - y < STROKE;
            if on_edge {
                put(x, y);
            }
        }
    }
}

/// Binary PPM with real boxes in blue and proposals in green on gray.
pub fn render_overlay_bytes(width: u32, height: u32, real: &[BBox], proposals: &[BBox]) -> Vec<u8> {
    let mut canvas: Vec<u8> = OVERLAY_BACKGROUND
        .iter()
        .copied()
        .cycle()
        .take(3 * width as usize * height as usize)
        .collect();
    for b in real {
        draw_outline(&mut canvas, width, height, b, OVERLAY_REAL);
    }
    for b in proposals {
        draw_outline(&mut canvas, width, height, b, OVERLAY_PROPOSAL);
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&canvas);
    out
}

pub fn render_overlay(width: u32, height: u32, real: &[BBox], proposals: &[BBox], path: &Path) -> Result<()> {
    write_atomic(path, &render_overlay_bytes(width, height, real, proposals))
}
