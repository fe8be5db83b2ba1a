//! Local and global depth features from per-frame depth maps.
//!
//! Local features crop the depth map under each detection and average-pool
//! the crop onto a fixed `g × g` grid. The global feature flattens the map
//! and passes it through a trainable affine map and ReLU.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamStore, Tape, Var};
use crate::scene::{BBox, DepthMap, FrameObservation};

pub const DEFAULT_POOL_GRID: usize = 7;

/// Per-slot local features plus the frame's projected global feature.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFeatures {
    /// `m × g²`; rows of masked slots are zero.
    pub local: Array2<f64>,
    pub valid: Vec<bool>,
    pub global_proj: Vec<f64>,
}

/// Pixel box scaled into depth-map cell coordinates.
pub fn box_to_map(bbox: &BBox, frame_size: [u32; 2], map: &DepthMap) -> BBox {
    let sx = map.width as f32 / frame_size[0] as f32;
    let sy = map.height as f32 / frame_size[1] as f32;
    BBox::new(bbox.x1 * sx, bbox.y1 * sy, bbox.x2 * sx, bbox.y2 * sy)
}

fn clamped_span(lo: f32, hi: f32, limit: usize) -> (usize, usize) {
    let start = (lo.floor().max(0.0) as usize).min(limit);
    let end = (hi.ceil().max(0.0) as usize).min(limit);
    (start, end)
}

/// Sub-matrix of `map` covered by `bbox` (in map cells), clamped to bounds.
pub fn crop_local_depth(map: &DepthMap, bbox: &BBox) -> Result<Array2<f64>> {
    let (r0, r1) = clamped_span(bbox.y1, bbox.y2, map.height);
    let (c0, c1) = clamped_span(bbox.x1, bbox.x2, map.width);
    if r0 >= r1 || c0 >= c1 {
        return Err(Error::EmptyCrop(format!(
            "box ({}, {}, {}, {}) misses the {}x{} map",
            bbox.x1, bbox.y1, bbox.x2, bbox.y2, map.height, map.width
        )));
    }
    Ok(Array2::from_shape_fn((r1 - r0, c1 - c0), |(r, c)| {
        map.get(r0 + r, c0 + c) as f64
    }))
}

/// Start/end of adaptive pooling cell `i` of `g` over `n` inputs.
pub fn adaptive_range(i: usize, n: usize, g: usize) -> (usize, usize) {
    ((i * n) / g, ((i + 1) * n).div_ceil(g))
}

/// Adaptive average pooling onto a `g × g` grid, flattened row-major.
pub fn pool_local_depth(crop: ArrayView2<f64>, g: usize) -> Result<Vec<f64>> {
    let (h, w) = crop.dim();
    if h == 0 || w == 0 {
        return Err(Error::EmptyCrop("cannot pool an empty crop".into()));
    }
    if g == 0 {
        return Err(Error::Argument("pool grid must be positive".into()));
    }
    let mut out = Vec::with_capacity(g * g);
    for i in 0..g {
        let (r0, r1) = adaptive_range(i, h, g);
        for j in 0..g {
            let (c0, c1) = adaptive_range(j, w, g);
            let mut sum = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    sum += crop[[r, c]];
                }
            }
            out.push(sum / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    Ok(out)
}

/// Pooled local feature of one detection, or `None` when its box collapses
/// to nothing after clamping.
pub fn local_depth_feature(map: &DepthMap, bbox: &BBox, frame_size: [u32; 2], g: usize) -> Option<Vec<f64>> {
    let cell_box = box_to_map(bbox, frame_size, map);
    let crop = crop_local_depth(map, &cell_box).ok()?;
    pool_local_depth(crop.view(), g).ok()
}

/// Local features for the first `m` detections of a frame.
pub fn local_depth_slots(
    frame: &FrameObservation,
    frame_size: [u32; 2],
    m: usize,
    g: usize,
) -> (Array2<f64>, Vec<bool>) {
    let mut local = Array2::zeros((m, g * g));
    let mut valid = vec![false; m];
    for (j, det) in frame.detections.iter().take(m).enumerate() {
        if let Some(feature) = local_depth_feature(&frame.depth_map, &det.bbox, frame_size, g) {
            for (k, v) in feature.into_iter().enumerate() {
                local[[j, k]] = v;
            }
            valid[j] = true;
        }
    }
    (local, valid)
}

/// Flattened depth maps of a clip, one row per frame.
pub fn flatten_maps<'a>(maps: impl ExactSizeIterator<Item = &'a DepthMap>) -> Array2<f64> {
    let maps: Vec<&DepthMap> = maps.collect();
    let width = maps.first().map_or(0, |m| m.data.len());
    Array2::from_shape_fn((maps.len(), width), |(i, k)| maps[i].data[k] as f64)
}

/// `ReLU(flat · W + b)` for a batch of flattened maps.
pub fn project_global_depth(tape: &mut Tape, store: &ParamStore, flat_maps: Var, projection: &Linear) -> Result<Var> {
    let z = projection.forward(tape, store, flat_maps)?;
    Ok(tape.relu(z))
}

/// Both depth features of a single frame, evaluated without gradients.
pub fn frame_depth_features(
    frame: &FrameObservation,
    frame_size: [u32; 2],
    m: usize,
    g: usize,
    store: &ParamStore,
    projection: &Linear,
) -> Result<DepthFeatures> {
    let (local, valid) = local_depth_slots(frame, frame_size, m, g);
    let mut tape = Tape::new();
    let flat = tape.input(flatten_maps(std::iter::once(&frame.depth_map)));
    let out = project_global_depth(&mut tape, store, flat, projection)?;
    Ok(DepthFeatures {
        local,
        valid,
        global_proj: tape.value(out).row(0).to_vec(),
    })
}
