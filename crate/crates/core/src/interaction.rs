//! Per-frame scene graphs and the interaction feature.
//!
//! Each frame's detections become graph nodes whose features are the
//! embedded object, label and local depth vectors. Two adjacencies are built:
//!
//! * spatial: `exp(-d(c_m, c_n))` over all valid ordered pairs, normalised so
//!   the whole matrix sums to one. Distances are divided by the image
//!   diagonal.
//! * reconstruction: objects that disappear are carried forward for up to
//!   `K_occ` frames at a constant-velocity prediction plus a learned
//!   correction `θ(f_last, f_prev)`. Every edge with at least one
//!   reconstructed endpoint gets the same distance kernel, normalised over
//!   that edge subset.
//!
//! A graph convolution runs over each adjacency, nodes are mean-pooled per
//! frame and the two results are concatenated.

use std::sync::Arc;

use ndarray::{s, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{block_graph_conv, block_mean};
use crate::nn::tape::CustomOp;
use crate::nn::{Blocks, GraphConvParams, Linear, ParamStore, Tape, Var};
use crate::scene::BBox;

pub const DEFAULT_OCCLUSION_MEMORY: usize = 5;
pub const MATCH_IOU_THRESHOLD: f64 = 0.3;

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Spatial adjacency over the valid nodes of one frame.
pub fn spatial_adjacency(centers: &[[f64; 2]], valid: &[bool], scale: f64) -> Result<Array2<f64>> {
    if centers.len() != valid.len() {
        return Err(Error::Dimension("centers and mask differ in length".into()));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Argument(format!("distance scale {scale}")));
    }
    let n = centers.len();
    if !valid.iter().any(|&v| v) {
        return Err(Error::EmptyGraph("no valid node for spatial adjacency".into()));
    }
    let mut a = Array2::zeros((n, n));
    let mut total = 0.0;
    for m in 0..n {
        if !valid[m] {
            continue;
        }
        for k in 0..n {
            if valid[k] {
                let w = (-distance(centers[m], centers[k]) / scale).exp();
                a[[m, k]] = w;
                total += w;
            }
        }
    }
    a /= total;
    Ok(a)
}

/// Node and edge weights of the reconstruction adjacency for one frame, given
/// the corrected centers.
pub fn reconstruction_adjacency(
    centers: &[[f64; 2]],
    valid: &[bool],
    reconstructed: &[bool],
    scale: f64,
) -> Array2<f64> {
    let n = centers.len();
    let mut a = Array2::zeros((n, n));
    let mut total = 0.0;
    for m in 0..n {
        for k in 0..n {
            if valid[m] && valid[k] && (reconstructed[m] || reconstructed[k]) {
                let w = (-distance(centers[m], centers[k]) / scale).exp();
                a[[m, k]] = w;
                total += w;
            }
        }
    }
    if total > 0.0 {
        a /= total;
    }
    a
}

// ---------------------------------------------------------------------------
// Tracking and occlusion reconstruction
// ---------------------------------------------------------------------------

/// Object as seen by the tracker: geometry plus the features a reconstructed
/// node inherits.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedObservation {
    pub bbox: BBox,
    pub label_id: u32,
    pub obj: Vec<f64>,
    pub label: Vec<f64>,
    pub local_depth: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: u64,
    pub label_id: u32,
    /// Most recent observed center and its frame number.
    pub last_center: ([f64; 2], usize),
    pub prev_center: Option<([f64; 2], usize)>,
    pub size: [f64; 2],
    pub last: TrackedObservation,
    /// Object feature of the observation before `last` (or `last` itself).
    pub prev_obj: Vec<f64>,
    pub frames_since_seen: usize,
}

impl Track {
    /// Displacement per frame between the last two observations.
    pub fn velocity(&self) -> [f64; 2] {
        match self.prev_center {
            Some((p, pf)) => {
                let (c, cf) = self.last_center;
                let gap = (cf - pf).max(1) as f64;
                [(c[0] - p[0]) / gap, (c[1] - p[1]) / gap]
            }
            None => [0.0, 0.0],
        }
    }

    pub fn predicted_center(&self, elapsed: usize) -> [f64; 2] {
        let v = self.velocity();
        let c = self.last_center.0;
        [c[0] + v[0] * elapsed as f64, c[1] + v[1] * elapsed as f64]
    }

    fn predicted_box(&self, elapsed: usize) -> BBox {
        let c = self.predicted_center(elapsed);
        BBox::from_center(c[0], c[1], self.size[0], self.size[1])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrackMatch {
    /// (track index, detection index)
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub new_detections: Vec<usize>,
}

/// Greedy same-label matching by descending IoU between each track's
/// predicted box and the detections. Ties resolve by track id, then
/// detection index.
pub fn match_tracks(tracks: &[Track], detections: &[(BBox, u32)], threshold: f64) -> TrackMatch {
    let mut candidates = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        let pred = t.predicted_box(t.frames_since_seen + 1);
        for (di, (b, label)) in detections.iter().enumerate() {
            if *label != t.label_id {
                continue;
            }
            let iou = pred.iou(b);
            if iou >= threshold {
                candidates.push((iou, t.id, ti, di));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.3.cmp(&b.3)));
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut out = TrackMatch::default();
    for (_, _, ti, di) in candidates {
        if !track_used[ti] && !det_used[di] {
            track_used[ti] = true;
            det_used[di] = true;
            out.matches.push((ti, di));
        }
    }
    out.matches.sort_unstable();
    out.unmatched_tracks = (0..tracks.len()).filter(|&t| !track_used[t]).collect();
    out.new_detections = (0..detections.len()).filter(|&d| !det_used[d]).collect();
    out
}

/// Stand-in node for an occluded object.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructedNode {
    pub track_id: u64,
    pub center: [f64; 2],
    pub features: TrackedObservation,
    pub prev_obj: Vec<f64>,
}

/// Constant-velocity stand-ins for tracks unseen for `1..=k_occ` frames.
/// Older tracks are skipped.
pub fn reconstruct_occluded(tracks: &[Track], k_occ: usize) -> Vec<ReconstructedNode> {
    tracks
        .iter()
        .filter(|t| t.frames_since_seen >= 1 && t.frames_since_seen <= k_occ)
        .map(|t| ReconstructedNode {
            track_id: t.id,
            center: t.predicted_center(t.frames_since_seen),
            features: t.last.clone(),
            prev_obj: t.prev_obj.clone(),
        })
        .collect()
}

/// Sequential tracker state for one video.
#[derive(Clone, Debug)]
pub struct TrackState {
    pub tracks: Vec<Track>,
    next_id: u64,
    k_occ: usize,
    iou_threshold: f64,
}

impl TrackState {
    pub fn new(k_occ: usize) -> Self {
        Self {
            tracks: Vec::new(),
            next_id: 0,
            k_occ,
            iou_threshold: MATCH_IOU_THRESHOLD,
        }
    }

    /// Advance to `frame` (1-based) and return the reconstructed nodes.
    pub fn step(&mut self, frame: usize, observations: &[TrackedObservation]) -> Vec<ReconstructedNode> {
        let boxes: Vec<(BBox, u32)> = observations.iter().map(|o| (o.bbox, o.label_id)).collect();
        let m = match_tracks(&self.tracks, &boxes, self.iou_threshold);
        for &(ti, di) in &m.matches {
            let obs = &observations[di];
            let t = &mut self.tracks[ti];
            t.prev_center = Some(t.last_center);
            t.last_center = (obs.bbox.center(), frame);
            t.size = [obs.bbox.width(), obs.bbox.height()];
            t.prev_obj = std::mem::replace(&mut t.last, obs.clone()).obj;
            t.frames_since_seen = 0;
        }
        for &ti in &m.unmatched_tracks {
            self.tracks[ti].frames_since_seen += 1;
        }
        let k_occ = self.k_occ;
        self.tracks.retain(|t| t.frames_since_seen <= k_occ);
        let reconstructed = reconstruct_occluded(&self.tracks, k_occ);
        for &di in &m.new_detections {
            let obs = &observations[di];
            self.tracks.push(Track {
                id: self.next_id,
                label_id: obs.label_id,
                last_center: (obs.bbox.center(), frame),
                prev_center: None,
                size: [obs.bbox.width(), obs.bbox.height()],
                last: obs.clone(),
                prev_obj: obs.obj.clone(),
                frames_since_seen: 0,
            });
            self.next_id += 1;
        }
        reconstructed
    }
}

// ---------------------------------------------------------------------------
// Scene graph
// ---------------------------------------------------------------------------

/// One frame's graph with `m` node slots: detections first, then
/// reconstructed stand-ins.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub obj: Array2<f64>,
    pub label: Array2<f64>,
    pub local_depth: Array2<f64>,
    /// `[f_last, f_prev]` object features feeding θ; zero for detected slots.
    pub theta_input: Array2<f64>,
    pub a_mn: Array2<f64>,
    /// Reconstruction adjacency at the uncorrected (linear) prediction.
    pub a_rec: Array2<f64>,
    pub valid: Vec<bool>,
    pub reconstructed: Vec<bool>,
    pub centers: Vec<[f64; 2]>,
    pub scale: f64,
}

impl SceneGraph {
    pub fn capacity(&self) -> usize {
        self.valid.len()
    }

    pub fn detected_mask(&self) -> Vec<bool> {
        self.valid
            .iter()
            .zip(&self.reconstructed)
            .map(|(&v, &r)| v && !r)
            .collect()
    }

    pub fn n_detected(&self) -> usize {
        self.detected_mask().iter().filter(|&&v| v).count()
    }

    pub fn n_reconstructed(&self) -> usize {
        self.reconstructed.iter().filter(|&&v| v).count()
    }

    /// Assemble a frame graph. Detections beyond capacity are dropped;
    /// reconstructed nodes fill the remaining slots.
    pub fn build(
        detections: &[TrackedObservation],
        reconstructed: &[ReconstructedNode],
        m: usize,
        dims: (usize, usize, usize),
        scale: f64,
    ) -> Result<Self> {
        let (d_obj, d_label, d_depth) = dims;
        let mut g = SceneGraph {
            obj: Array2::zeros((m, d_obj)),
            label: Array2::zeros((m, d_label)),
            local_depth: Array2::zeros((m, d_depth)),
            theta_input: Array2::zeros((m, 2 * d_obj)),
            a_mn: Array2::zeros((m, m)),
            a_rec: Array2::zeros((m, m)),
            valid: vec![false; m],
            reconstructed: vec![false; m],
            centers: vec![[0.0, 0.0]; m],
            scale,
        };
        let fill = |slot: usize, obs: &TrackedObservation, g: &mut SceneGraph| -> Result<()> {
            if obs.obj.len() != d_obj || obs.label.len() != d_label || obs.local_depth.len() != d_depth {
                return Err(Error::Dimension(format!("node {slot} feature widths")));
            }
            for (k, &v) in obs.obj.iter().enumerate() {
                g.obj[[slot, k]] = v;
            }
            for (k, &v) in obs.label.iter().enumerate() {
                g.label[[slot, k]] = v;
            }
            for (k, &v) in obs.local_depth.iter().enumerate() {
                g.local_depth[[slot, k]] = v;
            }
            g.valid[slot] = true;
            Ok(())
        };
        let mut slot = 0;
        for det in detections.iter().take(m) {
            fill(slot, det, &mut g)?;
            g.centers[slot] = det.bbox.center();
            slot += 1;
        }
        for rec in reconstructed {
            if slot >= m {
                break;
            }
            fill(slot, &rec.features, &mut g)?;
            for (k, &v) in rec.features.obj.iter().chain(&rec.prev_obj).enumerate() {
                g.theta_input[[slot, k]] = v;
            }
            g.centers[slot] = rec.center;
            g.reconstructed[slot] = true;
            slot += 1;
        }
        let detected = g.detected_mask();
        if detected.iter().any(|&v| v) {
            g.a_mn = spatial_adjacency(&g.centers, &detected, scale)?;
        }
        g.a_rec = reconstruction_adjacency(&g.centers, &g.valid, &g.reconstructed, scale);
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// Packed (multi-frame) representation
// ---------------------------------------------------------------------------

/// Scene graphs of a whole clip with only occupied slots kept.
#[derive(Clone, Debug)]
pub struct PackedScenes {
    pub blocks: Arc<Blocks>,
    pub n_detected: Vec<usize>,
    pub n_reconstructed: Vec<usize>,
    pub obj: Array2<f64>,
    pub label: Array2<f64>,
    pub local_depth: Array2<f64>,
    /// θ inputs of reconstructed rows, in packed order.
    pub theta_input: Array2<f64>,
    /// Packed spatial adjacency (`R × B`), zero on reconstructed rows/cols.
    pub a_mn: Array2<f64>,
    pub detected_valid: Arc<Vec<bool>>,
    /// Rows that take part in the reconstruction pass (all rows of frames
    /// that have at least one reconstructed node).
    pub rec_pass_valid: Arc<Vec<bool>>,
    pub centers: Vec<[f64; 2]>,
    /// For each packed row, its row in `theta_input` if reconstructed.
    pub rec_index: Vec<Option<usize>>,
    pub scale: f64,
}

impl PackedScenes {
    pub fn from_graphs(graphs: &[SceneGraph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::EmptyGraph("no frames to pack".into()))?;
        let (d_obj, d_label, d_depth) = (first.obj.ncols(), first.label.ncols(), first.local_depth.ncols());
        let sizes: Vec<usize> = graphs.iter().map(|g| g.valid.iter().filter(|&&v| v).count()).collect();
        let blocks = Arc::new(Blocks::from_sizes(&sizes));
        let rows = blocks.rows();
        let n_rec_total: usize = graphs.iter().map(SceneGraph::n_reconstructed).sum();
        let mut p = PackedScenes {
            n_detected: graphs.iter().map(SceneGraph::n_detected).collect(),
            n_reconstructed: graphs.iter().map(SceneGraph::n_reconstructed).collect(),
            obj: Array2::zeros((rows, d_obj)),
            label: Array2::zeros((rows, d_label)),
            local_depth: Array2::zeros((rows, d_depth)),
            theta_input: Array2::zeros((n_rec_total, 2 * d_obj)),
            a_mn: Array2::zeros((rows, blocks.width())),
            detected_valid: Arc::new(Vec::new()),
            rec_pass_valid: Arc::new(Vec::new()),
            centers: Vec::with_capacity(rows),
            rec_index: Vec::with_capacity(rows),
            scale: first.scale,
            blocks: blocks.clone(),
        };
        let mut detected_valid = Vec::with_capacity(rows);
        let mut rec_pass_valid = Vec::with_capacity(rows);
        let mut rec_row = 0;
        for (f, g) in graphs.iter().enumerate() {
            let slots: Vec<usize> = (0..g.capacity()).filter(|&k| g.valid[k]).collect();
            let base = blocks.range(f).start;
            let has_rec = g.n_reconstructed() > 0;
            for (local, &k) in slots.iter().enumerate() {
                let r = base + local;
                p.obj.row_mut(r).assign(&g.obj.row(k));
                p.label.row_mut(r).assign(&g.label.row(k));
                p.local_depth.row_mut(r).assign(&g.local_depth.row(k));
                for (lc, &kc) in slots.iter().enumerate() {
                    p.a_mn[[r, lc]] = g.a_mn[[k, kc]];
                }
                p.centers.push(g.centers[k]);
                detected_valid.push(!g.reconstructed[k]);
                rec_pass_valid.push(has_rec);
                if g.reconstructed[k] {
                    p.theta_input.row_mut(rec_row).assign(&g.theta_input.row(k));
                    p.rec_index.push(Some(rec_row));
                    rec_row += 1;
                } else {
                    p.rec_index.push(None);
                }
            }
        }
        p.detected_valid = Arc::new(detected_valid);
        p.rec_pass_valid = Arc::new(rec_pass_valid);
        Ok(p)
    }

    pub fn frames(&self) -> usize {
        self.blocks.count()
    }

    pub fn total_reconstructed(&self) -> usize {
        self.theta_input.nrows()
    }
}

/// Reconstruction adjacency as a differentiable function of the θ center
/// corrections (one `[dx, dy]` row per reconstructed node).
struct RecAdjacencyOp {
    blocks: Arc<Blocks>,
    centers: Arc<Vec<[f64; 2]>>,
    rec_index: Arc<Vec<Option<usize>>>,
    n_reconstructed: Arc<Vec<usize>>,
    scale: f64,
}

impl RecAdjacencyOp {
    fn corrected(&self, corr: &Array2<f64>, r: usize) -> [f64; 2] {
        let c = self.centers[r];
        match self.rec_index[r] {
            Some(k) => [c[0] + corr[[k, 0]], c[1] + corr[[k, 1]]],
            None => c,
        }
    }

    fn edge(&self, r: usize, q: usize) -> bool {
        self.rec_index[r].is_some() || self.rec_index[q].is_some()
    }

    fn forward(&self, corr: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.blocks.rows(), self.blocks.width()));
        for f in 0..self.blocks.count() {
            if self.n_reconstructed[f] == 0 {
                continue;
            }
            let range = self.blocks.range(f);
            let base = range.start;
            let pts: Vec<[f64; 2]> = range.clone().map(|r| self.corrected(corr, r)).collect();
            let mut total = 0.0;
            for r in range.clone() {
                for q in range.clone() {
                    if self.edge(r, q) {
                        let w = (-distance(pts[r - base], pts[q - base]) / self.scale).exp();
                        out[[r, q - base]] = w;
                        total += w;
                    }
                }
            }
            out.slice_mut(s![range, ..]).mapv_inplace(|v| v / total);
        }
        out
    }
}

impl CustomOp for RecAdjacencyOp {
    fn name(&self) -> &'static str {
        "reconstruction_adjacency"
    }

    fn backward(&self, inputs: &[&Array2<f64>], output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Array2<f64>> {
        let corr = inputs[0];
        let mut gcorr = Array2::zeros(corr.raw_dim());
        for f in 0..self.blocks.count() {
            if self.n_reconstructed[f] == 0 {
                continue;
            }
            let range = self.blocks.range(f);
            let base = range.start;
            let pts: Vec<[f64; 2]> = range.clone().map(|r| self.corrected(corr, r)).collect();
            let mut total = 0.0;
            let mut dot = 0.0;
            for r in range.clone() {
                for q in range.clone() {
                    if self.edge(r, q) {
                        total += (-distance(pts[r - base], pts[q - base]) / self.scale).exp();
                        dot += grad[[r, q - base]] * output[[r, q - base]];
                    }
                }
            }
            for r in range.clone() {
                for q in range.clone() {
                    if r == q || !self.edge(r, q) {
                        continue;
                    }
                    let (a, b) = (pts[r - base], pts[q - base]);
                    let d = distance(a, b);
                    if d < 1e-12 {
                        continue;
                    }
                    let k = (-d / self.scale).exp();
                    let dk = (grad[[r, q - base]] - dot) / total;
                    // dk/da = -k/scale * (a - b)/d
                    let coef = -dk * k / (self.scale * d);
                    let ga = [coef * (a[0] - b[0]), coef * (a[1] - b[1])];
                    if let Some(ka) = self.rec_index[r] {
                        gcorr[[ka, 0]] += ga[0];
                        gcorr[[ka, 1]] += ga[1];
                    }
                    if let Some(kb) = self.rec_index[q] {
                        gcorr[[kb, 0]] -= ga[0];
                        gcorr[[kb, 1]] -= ga[1];
                    }
                }
            }
        }
        vec![gcorr]
    }
}

/// Record the packed reconstruction adjacency for the given corrections.
pub fn record_reconstruction_adjacency(tape: &mut Tape, scenes: &PackedScenes, corrections: Var) -> Result<Var> {
    if tape.shape(corrections) != (scenes.total_reconstructed(), 2) {
        return Err(Error::Dimension(format!(
            "corrections {:?} for {} reconstructed nodes",
            tape.shape(corrections),
            scenes.total_reconstructed()
        )));
    }
    let op = RecAdjacencyOp {
        blocks: scenes.blocks.clone(),
        centers: Arc::new(scenes.centers.clone()),
        rec_index: Arc::new(scenes.rec_index.clone()),
        n_reconstructed: Arc::new(scenes.n_reconstructed.clone()),
        scale: scenes.scale,
    };
    let out = op.forward(tape.value(corrections));
    Ok(tape.custom(&[corrections], out, Box::new(op)))
}

// ---------------------------------------------------------------------------
// Learned parts
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct InteractionParams {
    pub embed_obj: Linear,
    pub embed_label: Linear,
    pub embed_depth: Linear,
    pub gcn_spatial: GraphConvParams,
    pub gcn_rec: GraphConvParams,
    /// Center correction for reconstructed nodes; starts at zero.
    pub theta: Linear,
}

impl InteractionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dims: (usize, usize, usize),
        d_embed: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let (d_obj, d_label, d_depth) = dims;
        Self {
            embed_obj: Linear::new(store, "interaction.embed_obj", d_obj, d_embed, rng),
            embed_label: Linear::new(store, "interaction.embed_label", d_label, d_embed, rng),
            embed_depth: Linear::new(store, "interaction.embed_depth", d_depth, d_embed, rng),
            gcn_spatial: GraphConvParams::new(store, "interaction.gcn_spatial", 3 * d_embed, d_out, rng),
            gcn_rec: GraphConvParams::new(store, "interaction.gcn_rec", 3 * d_embed, d_out, rng),
            theta: Linear::zeros(store, "interaction.theta", 2 * d_obj, 2),
        }
    }

    pub fn d_out(&self, store: &ParamStore) -> usize {
        store.get(self.gcn_spatial.weight).value.ncols()
    }
}

/// Which inputs of the interaction branch are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InteractionSwitches {
    pub spatial: bool,
    pub local_depth: bool,
    pub reconstruction: bool,
}

/// `[Φ(obj), Φ(label), Φ(depth)]` per row; `row_factors` zero masked rows.
/// With `depth` absent the last third is zero.
pub fn embed_nodes(
    tape: &mut Tape,
    store: &ParamStore,
    obj: Var,
    label: Var,
    depth: Option<Var>,
    params: &InteractionParams,
    row_factors: Option<Vec<f64>>,
) -> Result<Var> {
    let rows = tape.shape(obj).0;
    if tape.shape(label).0 != rows || depth.is_some_and(|d| tape.shape(d).0 != rows) {
        return Err(Error::Dimension("node feature rows are misaligned".into()));
    }
    let eo = params.embed_obj.forward(tape, store, obj)?;
    let el = params.embed_label.forward(tape, store, label)?;
    let ed = match depth {
        Some(d) => params.embed_depth.forward(tape, store, d)?,
        None => {
            let width = params.embed_depth.d_out(store);
            tape.input(Array2::zeros((rows, width)))
        }
    };
    let nodes = tape.concat(&[eo, el, ed])?;
    match row_factors {
        Some(f) => tape.scale_rows(nodes, f),
        None => Ok(nodes),
    }
}

/// Interaction feature `ReLU([f_Int, f_Int^rec])` for every frame of a clip
/// (`frames × 2·d_int`). Frames without detections contribute a zero
/// spatial half; frames without reconstructed nodes a zero second half.
pub fn interaction_features(
    tape: &mut Tape,
    store: &ParamStore,
    scenes: &PackedScenes,
    params: &InteractionParams,
    switches: InteractionSwitches,
) -> Result<Var> {
    if scenes.frames() == 0 {
        return Err(Error::EmptyGraph("clip has no frames".into()));
    }
    let d_out = params.d_out(store);
    let obj = tape.input(scenes.obj.clone());
    let label = tape.input(scenes.label.clone());
    let depth = if switches.local_depth {
        Some(tape.input(scenes.local_depth.clone()))
    } else {
        None
    };
    let nodes = embed_nodes(tape, store, obj, label, depth, params, None)?;

    let f_int = if switches.spatial {
        let a_mn = tape.input(scenes.a_mn.clone());
        let w_sp = tape.param(store, params.gcn_spatial.weight);
        let h_sp = block_graph_conv(tape, nodes, a_mn, w_sp, &scenes.blocks, &scenes.detected_valid)?;
        block_mean(tape, h_sp, &scenes.blocks, &scenes.detected_valid)?
    } else {
        tape.input(Array2::zeros((scenes.frames(), d_out)))
    };

    let f_rec = if switches.reconstruction && scenes.total_reconstructed() > 0 {
        let theta_in = tape.input(scenes.theta_input.clone());
        let corr = params.theta.forward(tape, store, theta_in)?;
        let a_rec = record_reconstruction_adjacency(tape, scenes, corr)?;
        let w_rec = tape.param(store, params.gcn_rec.weight);
        let h_rec = block_graph_conv(tape, nodes, a_rec, w_rec, &scenes.blocks, &scenes.rec_pass_valid)?;
        block_mean(tape, h_rec, &scenes.blocks, &scenes.rec_pass_valid)?
    } else {
        tape.input(Array2::zeros((scenes.frames(), d_out)))
    };
    let joined = tape.concat(&[f_int, f_rec])?;
    Ok(tape.relu(joined))
}
