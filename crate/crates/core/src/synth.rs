//! Seeded toy dashcam scenes with depth-aware collision labels.
//!
//! Every clip has a lead vehicle (the target), a second vehicle (the
//! threat) and a few slow distractors. In positive and depth-confusable
//! clips the threat cuts in laterally until its box overlaps the target.
//! A collision needs both 2D overlap and similar depth, so confusable clips
//! look like positives in the image plane and differ only in depth. After
//! contact the two cars are carried sideways together; a confusable threat
//! passes behind the target.
//!
//! Distractors are distant traffic painted at the road depth of their image
//! row, so they blend into the depth background.
//!
//! Box sizes are drawn independently of depth, and the dynamic feature is
//! computed from a depth-free occupancy raster, so depth reaches the model
//! only through the depth maps.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BBox, DepthMap, Detection, FeatureDims, FrameObservation, VideoSample};

pub const DEPTH_EPS: f64 = 0.1;
pub const OVERLAP_THRESHOLD: f64 = 0.3;
pub const NUM_LABELS: u32 = 4;
const VEHICLE: u32 = 0;
const CANVAS: f64 = 128.0;

/// Background depth of the road at a fractional image height: far at the
/// top, nearer towards the bottom.
fn road_depth(frac: f64) -> f64 {
    0.1 + 0.3 * frac.clamp(0.0, 1.0)
}

/// Per-clip script.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Total agents including target and threat.
    pub n_agents: usize,
    pub n_frames: usize,
    pub fps: f64,
    pub collision: bool,
    /// Cut-in with 2D overlap but a depth gap larger than the collision
    /// tolerance. Ignored when `collision` is set.
    pub depth_confusable: bool,
    /// `(agent, start, end)`, 1-based inclusive frames.
    pub occlusion_windows: Vec<(usize, usize, usize)>,
    pub rng_seed: u64,
}

/// Distribution over scenarios for a whole dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub positive_fraction: f64,
    /// Share of negatives that are depth-confusable.
    pub confusable_fraction: f64,
    pub n_frames: usize,
    pub fps: f64,
    pub min_agents: usize,
    pub max_agents: usize,
    /// Probability that a clip gets one scripted occlusion.
    pub occlusion_probability: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            positive_fraction: 0.5,
            confusable_fraction: 0.5,
            n_frames: 40,
            fps: 10.0,
            min_agents: 3,
            max_agents: 8,
            occlusion_probability: 0.3,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.positive_fraction) || !(0.0..=1.0).contains(&self.confusable_fraction) {
            return Err(Error::Scenario("fractions must lie in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.occlusion_probability) {
            return Err(Error::Scenario("occlusion probability must lie in [0,1]".into()));
        }
        if self.n_frames < 40 {
            return Err(Error::Scenario(format!(
                "{} frames; cut-in scripts need at least 40",
                self.n_frames
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Scenario("fps must be positive".into()));
        }
        if self.min_agents < 2 || self.min_agents > self.max_agents || self.max_agents > 12 {
            return Err(Error::Scenario(format!(
                "agent range {}..={} must lie within 2..=12",
                self.min_agents, self.max_agents
            )));
        }
        Ok(())
    }
}

/// Layout of the generated archives.
pub fn synthetic_dims() -> FeatureDims {
    FeatureDims {
        obj_dim: 16,
        label_dim: 8,
        depth_height: 16,
        depth_width: 16,
        dyn_dim: 32,
        image_width: CANVAS as u32,
        image_height: CANVAS as u32,
        max_objects: crate::scene::DEFAULT_MAX_OBJECTS,
    }
}

/// Ground truth kept beside a generated clip.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth {
    /// `[agent][frame]`
    pub boxes: Vec<Vec<BBox>>,
    pub depths: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub target: usize,
    pub threat: usize,
    /// Which agent produced each detection of each frame.
    pub detection_agents: Vec<Vec<usize>>,
    pub occlusions: Vec<(usize, usize, usize)>,
}

/// First frame (1-based) at which any agent pair overlaps by at least
/// `overlap` IoU with depth difference below `eps`.
pub fn first_collision(boxes: &[Vec<BBox>], depths: &[Vec<f64>], overlap: f64, eps: f64) -> Option<usize> {
    let frames = boxes.first().map_or(0, Vec::len);
    (0..frames)
        .find(|&t| {
            (0..boxes.len()).any(|a| {
                (a + 1..boxes.len())
                    .any(|b| boxes[a][t].iou(&boxes[b][t]) >= overlap && (depths[a][t] - depths[b][t]).abs() < eps)
            })
        })
        .map(|t| t + 1)
}

/// Whether any pair overlaps by at least `overlap` IoU at some frame.
pub fn any_overlap(boxes: &[Vec<BBox>], overlap: f64) -> bool {
    let frames = boxes.first().map_or(0, Vec::len);
    (0..frames)
        .any(|t| (0..boxes.len()).any(|a| (a + 1..boxes.len()).any(|b| boxes[a][t].iou(&boxes[b][t]) >= overlap)))
}

struct Agent {
    label: u32,
    size: [f64; 2],
    centers: Vec<[f64; 2]>,
    depths: Vec<f64>,
}

fn lateral_plan<R: Rng>(rng: &mut R) -> (usize, f64) {
    let lead = rng.random_range(8..=15usize);
    let speed = rng.random_range(2.0..4.0f64).min(40.0 / lead as f64);
    (lead, speed)
}

/// Draw agent trajectories for one attempt.
fn draw_agents<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> (Vec<Agent>, usize) {
    let n = spec.n_frames;
    let drift = |rng: &mut R| rng.random_range(-0.002..0.002f64);
    let target_depth = rng.random_range(0.55..0.65f64);
    let target_center = [rng.random_range(54.0..74.0f64), rng.random_range(62.0..82.0f64)];
    let target_velocity = [rng.random_range(-0.3..0.3f64), rng.random_range(-0.3..0.3f64)];
    let target_size = [rng.random_range(16.0..24.0f64), rng.random_range(14.0..20.0f64)];
    let target_drift = drift(rng);

    let cut_in = spec.collision || spec.depth_confusable;
    let threat_depth = if spec.collision {
        (target_depth + rng.random_range(-0.05..0.05f64)).clamp(0.15, 1.0)
    } else if spec.depth_confusable {
        // farther than the target, as when a distant car appears to merge
        (target_depth - rng.random_range(0.25..0.4f64)).max(0.15)
    } else {
        rng.random_range(0.15..1.0f64)
    };
    let threat_size = [rng.random_range(16.0..24.0f64), rng.random_range(14.0..20.0f64)];
    let accident_goal = rng.random_range(25..=38usize);
    let (lead, speed) = lateral_plan(rng);
    let onset = accident_goal - lead;
    let side = if target_center[0] < 64.0 { 1.0 } else { -1.0 };
    let contact = 0.5 * (target_size[0] + threat_size[0]) * 0.45;
    let offset = if cut_in {
        speed * lead as f64 + contact
    } else {
        rng.random_range(30.0..50.0f64)
    };
    let threat_dy = rng.random_range(-3.0..3.0f64);
    let threat_drift = drift(rng);

    let mut target = Agent {
        label: VEHICLE,
        size: target_size,
        centers: Vec::with_capacity(n),
        depths: Vec::with_capacity(n),
    };
    let mut threat = Agent {
        label: VEHICLE,
        size: threat_size,
        centers: Vec::with_capacity(n),
        depths: Vec::with_capacity(n),
    };
    let mut lateral = 0.0;
    let mut shove = 0.0;
    for t in 0..n {
        let tc = [
            target_center[0] + target_velocity[0] * t as f64 - side * shove,
            target_center[1] + target_velocity[1] * t as f64,
        ];
        target.centers.push(tc);
        target
            .depths
            .push((target_depth + target_drift * t as f64).clamp(0.15, 1.0));
        // a colliding threat stays in contact; a confusable one passes
        // behind the target into the next lane
        let gap = offset - lateral;
        let moving = if spec.collision {
            gap > 3.0
        } else {
            gap > -(contact + 12.0)
        };
        if cut_in && t + 1 >= onset && moving {
            lateral += speed;
        } else if spec.collision && !moving {
            // after contact both cars are carried sideways together
            shove += 0.5 * speed;
        }
        let c = [tc[0] + side * (offset - lateral), tc[1] + threat_dy];
        threat.centers.push(c);
        threat
            .depths
            .push((threat_depth + threat_drift * t as f64).clamp(0.15, 1.0));
    }

    let mut agents = vec![target, threat];
    for _ in 2..spec.n_agents {
        let start = [rng.random_range(10.0..118.0f64), rng.random_range(10.0..118.0f64)];
        let v = [rng.random_range(-1.0..1.0f64), rng.random_range(-1.0..1.0f64)];
        // background traffic sits at road depth for its image row
        let offset = rng.random_range(-0.03..0.03f64);
        let centers: Vec<[f64; 2]> = (0..n)
            .map(|t| [start[0] + v[0] * t as f64, start[1] + v[1] * t as f64])
            .collect();
        let depths = centers
            .iter()
            .map(|c| (road_depth(c[1] / CANVAS) + offset).clamp(0.15, 1.0))
            .collect();
        agents.push(Agent {
            label: rng.random_range(0..NUM_LABELS),
            size: [rng.random_range(10.0..24.0f64), rng.random_range(10.0..22.0f64)],
            centers,
            depths,
        });
    }
    (agents, accident_goal)
}

fn agent_boxes(agents: &[Agent]) -> Vec<Vec<BBox>> {
    agents
        .iter()
        .map(|a| {
            a.centers
                .iter()
                .map(|c| BBox::from_center(c[0], c[1], a.size[0], a.size[1]))
                .collect()
        })
        .collect()
}

fn inside_canvas(b: &BBox, dims: &FeatureDims) -> bool {
    let (cx, cy) = (b.center()[0], b.center()[1]);
    cx > 2.0 && cy > 2.0 && cx < dims.image_width as f64 - 2.0 && cy < dims.image_height as f64 - 2.0
}

fn check_spec(spec: &ScenarioSpec) -> Result<()> {
    if spec.n_agents < 2 && (spec.collision || spec.depth_confusable) {
        return Err(Error::Scenario(format!(
            "a cut-in needs two agents, spec has {}",
            spec.n_agents
        )));
    }
    if spec.n_agents < 2 {
        return Err(Error::Scenario("scenes need a target and a second vehicle".into()));
    }
    if spec.n_frames < 40 {
        return Err(Error::Scenario(format!(
            "{} frames; at least 40 required",
            spec.n_frames
        )));
    }
    if !(spec.fps.is_finite() && spec.fps > 0.0) {
        return Err(Error::Scenario("fps must be positive".into()));
    }
    for &(agent, start, end) in &spec.occlusion_windows {
        if agent >= spec.n_agents || start == 0 || end > spec.n_frames || start > end + 1 {
            return Err(Error::Scenario(format!(
                "occlusion window ({agent}, {start}, {end}) is invalid"
            )));
        }
    }
    Ok(())
}

fn label_feature<R: Rng>(label: u32, rng: &mut R, noise: &Normal<f64>, dims: &FeatureDims) -> Vec<f32> {
    (0..dims.label_dim)
        .map(|k| {
            let base = if k as u32 == label { 1.0 } else { 0.0 };
            (base + noise.sample(rng) * 0.05) as f32
        })
        .collect()
}

fn obj_feature<R: Rng>(
    bbox: &BBox,
    velocity: [f64; 2],
    label: u32,
    rng: &mut R,
    noise: &Normal<f64>,
    dims: &FeatureDims,
) -> Vec<f32> {
    let c = bbox.center();
    let (w, h) = (dims.image_width as f64, dims.image_height as f64);
    let mut f = vec![
        c[0] / w,
        c[1] / h,
        bbox.width() / 64.0,
        bbox.height() / 64.0,
        velocity[0] / 4.0,
        velocity[1] / 4.0,
    ];
    for k in 0..NUM_LABELS {
        f.push(if k == label { 1.0 } else { 0.0 });
    }
    f.resize(dims.obj_dim, 0.0);
    f.iter().map(|&v| (v + noise.sample(rng) * 0.02) as f32).collect()
}

fn render_depth<R: Rng>(
    boxes: &[Vec<BBox>],
    depths: &[Vec<f64>],
    t: usize,
    dims: &FeatureDims,
    rng: &mut R,
    noise: &Normal<f64>,
) -> DepthMap {
    let (hh, ww) = (dims.depth_height, dims.depth_width);
    let mut map = DepthMap::filled(hh, ww, 0.0);
    for r in 0..hh {
        let v = road_depth((r as f64 + 0.5) / hh as f64);
        for c in 0..ww {
            map.set(r, c, v as f32);
        }
    }
    let sx = ww as f64 / dims.image_width as f64;
    let sy = hh as f64 / dims.image_height as f64;
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| depths[a][t].total_cmp(&depths[b][t]).then(a.cmp(&b)));
    for a in order {
        let b = &boxes[a][t];
        let r0 = ((b.y1 as f64 * sy).round().max(0.0) as usize).min(hh);
        let r1 = ((b.y2 as f64 * sy).round().max(0.0) as usize).min(hh);
        let c0 = ((b.x1 as f64 * sx).round().max(0.0) as usize).min(ww);
        let c1 = ((b.x2 as f64 * sx).round().max(0.0) as usize).min(ww);
        for r in r0..r1 {
            for c in c0..c1 {
                map.set(r, c, depths[a][t] as f32);
            }
        }
    }
    for v in &mut map.data {
        *v = (*v as f64 + noise.sample(rng) * 0.01).max(0.0) as f32;
    }
    map
}

/// Coarse label-weighted occupancy per 4×4 cell of the canvas.
fn occupancy(boxes: &[BBox], labels: &[u32], dims: &FeatureDims) -> [f64; 16] {
    let mut occ = [0.0; 16];
    let cw = dims.image_width as f64 / 4.0;
    let ch = dims.image_height as f64 / 4.0;
    for (b, &label) in boxes.iter().zip(labels) {
        let intensity = 0.4 + 0.2 * label as f64;
        for i in 0..4 {
            for j in 0..4 {
                let cell = BBox::from_center((j as f64 + 0.5) * cw, (i as f64 + 0.5) * ch, cw, ch);
                let ix = (b.x2.min(cell.x2) - b.x1.max(cell.x1)).max(0.0) as f64;
                let iy = (b.y2.min(cell.y2) - b.y1.max(cell.y1)).max(0.0) as f64;
                let cover = ix * iy / (cw * ch);
                occ[i * 4 + j] = f64::max(occ[i * 4 + j], cover * intensity);
            }
        }
    }
    occ
}

fn dyn_feature(prev: Option<&[f64; 16]>, cur: &[f64; 16], dims: &FeatureDims) -> Vec<f32> {
    let mut f = vec![0.0f32; dims.dyn_dim];
    if let Some(p) = prev {
        for k in 0..16 {
            let d = (cur[k] - p[k]) * 4.0;
            if k < dims.dyn_dim {
                f[k] = d.abs() as f32;
            }
            if 16 + k < dims.dyn_dim {
                f[16 + k] = d as f32;
            }
        }
    }
    f
}

/// One clip and its ground truth from a scenario script.
pub fn generate_scenario(spec: &ScenarioSpec, id: &str) -> Result<(VideoSample, SceneTruth)> {
    check_spec(spec)?;
    let dims = synthetic_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    for _attempt in 0..500 {
        let (agents, _) = draw_agents(spec, &mut rng);
        let boxes = agent_boxes(&agents);
        let depths: Vec<Vec<f64>> = agents.iter().map(|a| a.depths.clone()).collect();
        if boxes.iter().any(|track| track.iter().any(|b| !inside_canvas(b, &dims))) {
            continue;
        }
        let y = first_collision(&boxes, &depths, OVERLAP_THRESHOLD, DEPTH_EPS);
        let acceptable = if spec.collision {
            // the first collision must be the scripted one, late in the clip
            y.is_some_and(|y| {
                (25..=38).contains(&y)
                    && boxes[0][y - 1].iou(&boxes[1][y - 1]) >= OVERLAP_THRESHOLD
                    && (depths[0][y - 1] - depths[1][y - 1]).abs() < DEPTH_EPS
            })
        } else if spec.depth_confusable {
            y.is_none() && (0..spec.n_frames).any(|t| boxes[0][t].iou(&boxes[1][t]) >= OVERLAP_THRESHOLD)
        } else {
            y.is_none() && !any_overlap(&boxes, OVERLAP_THRESHOLD)
        };
        if !acceptable {
            continue;
        }
        return Ok(render(spec, id, agents, boxes, depths, y, &dims, &mut rng));
    }
    Err(Error::Scenario(format!(
        "could not realise scenario '{id}' after 500 attempts"
    )))
}

#[allow(clippy::too_many_arguments)]
fn render(
    spec: &ScenarioSpec,
    id: &str,
    agents: Vec<Agent>,
    boxes: Vec<Vec<BBox>>,
    depths: Vec<Vec<f64>>,
    y: Option<usize>,
    dims: &FeatureDims,
    rng: &mut ChaCha8Rng,
) -> (VideoSample, SceneTruth) {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let labels: Vec<u32> = agents.iter().map(|a| a.label).collect();
    // detection order should not reveal roles
    let mut order: Vec<usize> = (0..agents.len()).collect();
    order.shuffle(rng);
    let label_feats: Vec<Vec<f32>> = labels.iter().map(|&l| label_feature(l, rng, &noise, dims)).collect();
    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut detection_agents = Vec::with_capacity(spec.n_frames);
    let mut prev_occ: Option<[f64; 16]> = None;
    for t in 0..spec.n_frames {
        let frame_boxes: Vec<BBox> = boxes.iter().map(|b| b[t]).collect();
        let occ = occupancy(&frame_boxes, &labels, dims);
        let dyn_f = dyn_feature(prev_occ.as_ref(), &occ, dims);
        prev_occ = Some(occ);
        let depth_map = render_depth(&boxes, &depths, t, dims, rng, &noise);
        let mut detections = Vec::new();
        let mut agents_here = Vec::new();
        for &a in &order {
            let velocity = if t == 0 {
                [0.0, 0.0]
            } else {
                let (c, p) = (agents[a].centers[t], agents[a].centers[t - 1]);
                [c[0] - p[0], c[1] - p[1]]
            };
            detections.push(Detection {
                bbox: boxes[a][t],
                label_id: labels[a],
                score: rng.random_range(0.5..1.0f32),
                obj_feature: obj_feature(&boxes[a][t], velocity, labels[a], rng, &noise, dims),
                label_feature: label_feats[a].clone(),
            });
            agents_here.push(a);
        }
        frames.push(FrameObservation {
            index: t,
            detections,
            depth_map,
            dyn_feature: dyn_f,
        });
        detection_agents.push(agents_here);
    }
    let sample = VideoSample {
        id: id.to_string(),
        frames,
        positive: y.is_some(),
        accident_frame: y,
        fps: spec.fps,
        frame_size: [dims.image_width, dims.image_height],
    };
    let mut truth = SceneTruth {
        boxes,
        depths,
        labels,
        target: 0,
        threat: 1,
        detection_agents,
        occlusions: Vec::new(),
    };
    let mut sample = sample;
    for &(agent, start, end) in &spec.occlusion_windows {
        sample = occlude(&sample, &mut truth, agent, start, end).expect("windows checked");
    }
    (sample, truth)
}

/// Remove `agent`'s detections in frames `start..=end` (1-based). A window
/// with `end + 1 == start` is empty and leaves the sample unchanged.
pub fn occlude(
    sample: &VideoSample,
    truth: &mut SceneTruth,
    agent: usize,
    start: usize,
    end: usize,
) -> Result<VideoSample> {
    if agent >= truth.boxes.len() {
        return Err(Error::Argument(format!("no agent {agent} in '{}'", sample.id)));
    }
    if start == 0 || end > sample.len() || start > end + 1 {
        return Err(Error::Argument(format!(
            "occlusion window {start}..={end} outside 1..={}",
            sample.len()
        )));
    }
    let mut out = sample.clone();
    if start > end {
        return Ok(out);
    }
    for f in start..=end {
        let agents = &mut truth.detection_agents[f - 1];
        if let Some(k) = agents.iter().position(|&a| a == agent) {
            agents.remove(k);
            out.frames[f - 1].detections.remove(k);
        }
    }
    truth.occlusions.push((agent, start, end));
    Ok(out)
}

/// Scenario kind of a generated clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneKind {
    Positive,
    Confusable,
    Plain,
}

/// `count` clips with their ground truth. The clip mix is fixed by the
/// fractions; each clip has its own seed drawn from `seed`.
pub fn generate_with_truth(
    spec: &DatasetSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<(VideoSample, SceneTruth, SceneKind)>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Scenario("count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = (count as f64 * spec.positive_fraction).round() as usize;
    let n_neg = count - n_pos;
    let n_conf = (n_neg as f64 * spec.confusable_fraction).round() as usize;
    let mut kinds: Vec<SceneKind> = std::iter::repeat_n(SceneKind::Positive, n_pos)
        .chain(std::iter::repeat_n(SceneKind::Confusable, n_conf))
        .chain(std::iter::repeat_n(SceneKind::Plain, n_neg - n_conf))
        .collect();
    kinds.shuffle(&mut rng);
    let mut out = Vec::with_capacity(count);
    for (i, kind) in kinds.into_iter().enumerate() {
        let n_agents = rng.random_range(spec.min_agents..=spec.max_agents);
        let mut occlusion_windows = Vec::new();
        if rng.random_bool(spec.occlusion_probability) {
            let agent = rng.random_range(0..n_agents);
            let len = rng.random_range(2..=4usize);
            let start = rng.random_range(5..=spec.n_frames - 10);
            occlusion_windows.push((agent, start, start + len - 1));
        }
        let scenario = ScenarioSpec {
            n_agents,
            n_frames: spec.n_frames,
            fps: spec.fps,
            collision: kind == SceneKind::Positive,
            depth_confusable: kind == SceneKind::Confusable,
            occlusion_windows,
            rng_seed: rng.next_u64(),
        };
        let (sample, truth) = generate_scenario(&scenario, &format!("syn-{i:05}"))?;
        out.push((sample, truth, kind));
    }
    Ok(out)
}

pub fn generate_dataset(spec: &DatasetSpec, count: usize, seed: u64) -> Result<Vec<VideoSample>> {
    Ok(generate_with_truth(spec, count, seed)?
        .into_iter()
        .map(|(s, _, _)| s)
        .collect())
}
