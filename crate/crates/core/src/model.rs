//! The full network: frozen per-video preparation plus the trainable
//! depth, interaction, dynamics and temporal stages.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{flatten_maps, local_depth_feature, project_global_depth};
use crate::dynamics::{causal_pool, project_pooled, DynamicsParams};
use crate::error::{Error, Result};
use crate::interaction::{
    interaction_features, InteractionParams, InteractionSwitches, PackedScenes, SceneGraph, TrackState,
    TrackedObservation,
};
use crate::nn::{Linear, ParamStore, Tape, Var};
use crate::scene::{select_top_m, FeatureDims, PredictionCurve, VideoSample};
use crate::temporal::{causal_mask, fuse_node, predict_logits, TemporalParams};

/// Widths and structural knobs of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Embedding width of each node feature third.
    pub d_e: usize,
    /// Projected global depth width.
    pub d_gd: usize,
    /// Output width of each interaction graph convolution.
    pub d_int: usize,
    pub d_dyn: usize,
    /// Local depth pooling grid side.
    pub g: usize,
    /// Node slots per frame.
    pub m: usize,
    /// Frames an unseen track is reconstructed for.
    pub k_occ: usize,
    pub max_lookback: Option<usize>,
    pub heads: usize,
    pub gat_hidden: usize,
    pub dyn_window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_e: 32,
            d_gd: 64,
            d_int: 32,
            d_dyn: 32,
            g: 7,
            m: 19,
            k_occ: 5,
            max_lookback: None,
            heads: 1,
            gat_hidden: 64,
            dyn_window: 4,
        }
    }
}

impl ModelConfig {
    pub fn full_scale() -> Self {
        Self {
            d_e: 512,
            d_gd: 1024,
            d_int: 512,
            d_dyn: 512,
            gat_hidden: 512,
            ..Self::default()
        }
    }

    /// Width of a fused frame node.
    pub fn d_node(&self) -> usize {
        self.d_gd + 2 * self.d_int + self.d_dyn
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_e", self.d_e),
            ("d_gd", self.d_gd),
            ("d_int", self.d_int),
            ("d_dyn", self.d_dyn),
            ("g", self.g),
            ("m", self.m),
            ("heads", self.heads),
            ("gat_hidden", self.gat_hidden),
            ("dyn_window", self.dyn_window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.g > 64 || self.m > 256 {
            return Err(Error::Config("model.g or model.m out of range".into()));
        }
        if !self.gat_hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model.gat_hidden {} not divisible by {} heads",
                self.gat_hidden, self.heads
            )));
        }
        if self.max_lookback == Some(0) {
            return Err(Error::Config("model.max_lookback must be positive when set".into()));
        }
        Ok(())
    }
}

/// Which feature branches feed the frame graph. Disabled branches contribute
/// zeros at fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    /// Global and local depth features.
    pub depth: bool,
    /// Spatial adjacency pass.
    pub spatial: bool,
    /// Reconstruction adjacency pass.
    pub reconstruction: bool,
    pub dynamics: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Variant::Full.ablation()
    }
}

/// The seven ablation rows, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoRec,
    NoDepth,
    NoInteraction,
    NoDynamics,
    DynamicsOnly,
    InteractionOnly,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoRec,
        Variant::NoDepth,
        Variant::NoInteraction,
        Variant::NoDynamics,
        Variant::DynamicsOnly,
        Variant::InteractionOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRec => "no-A_rec",
            Variant::NoDepth => "no-DEM",
            Variant::NoInteraction => "no-IEM",
            Variant::NoDynamics => "no-DYM",
            Variant::DynamicsOnly => "STFM+DYM-only",
            Variant::InteractionOnly => "STFM+IEM-only",
        }
    }

    pub fn ablation(self) -> Ablation {
        let (depth, spatial, reconstruction, dynamics) = match self {
            Variant::Full => (true, true, true, true),
            Variant::NoRec => (true, true, false, true),
            Variant::NoDepth => (false, true, true, true),
            Variant::NoInteraction => (true, false, false, true),
            Variant::NoDynamics => (true, true, true, false),
            Variant::DynamicsOnly => (false, false, false, true),
            Variant::InteractionOnly => (false, true, true, false),
        };
        Ablation {
            depth,
            spatial,
            reconstruction,
            dynamics,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Argument(format!("unknown variant '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

/// Everything about a video that does not depend on trainable weights.
#[derive(Clone, Debug)]
pub struct PreparedVideo {
    pub id: String,
    pub positive: bool,
    pub accident_frame: Option<usize>,
    pub fps: f64,
    /// Flattened depth maps, one row per frame.
    pub depth_flat: Array2<f64>,
    /// Causally pooled dynamic features.
    pub dyn_pooled: Array2<f64>,
    pub scenes: PackedScenes,
}

impl PreparedVideo {
    pub fn len(&self) -> usize {
        self.depth_flat.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-frame scene graphs of a video: top-`m` selection, local depth crops,
/// tracking and occlusion reconstruction.
pub fn scene_graphs(video: &VideoSample, config: &ModelConfig, dims: &FeatureDims) -> Result<Vec<SceneGraph>> {
    let mut tracker = TrackState::new(config.k_occ);
    let scale = video.diagonal();
    let widths = (dims.obj_dim, dims.label_dim, config.g * config.g);
    let mut graphs = Vec::with_capacity(video.len());
    for (i, frame) in video.frames.iter().enumerate() {
        let mut observations = Vec::new();
        for det in select_top_m(&frame.detections, config.m) {
            let Some(local) = local_depth_feature(&frame.depth_map, &det.bbox, video.frame_size, config.g) else {
                continue;
            };
            observations.push(TrackedObservation {
                bbox: det.bbox,
                label_id: det.label_id,
                obj: det.obj_feature.iter().map(|&v| v as f64).collect(),
                label: det.label_feature.iter().map(|&v| v as f64).collect(),
                local_depth: local,
            });
        }
        let reconstructed = tracker.step(i + 1, &observations);
        graphs.push(SceneGraph::build(
            &observations,
            &reconstructed,
            config.m,
            widths,
            scale,
        )?);
    }
    Ok(graphs)
}

pub fn prepare_video(video: &VideoSample, config: &ModelConfig, dims: &FeatureDims) -> Result<PreparedVideo> {
    if video.is_empty() {
        return Err(Error::Argument(format!("video '{}' has no frames", video.id)));
    }
    let graphs = scene_graphs(video, config, dims)?;
    let dyn_raw = Array2::from_shape_fn((video.len(), dims.dyn_dim), |(i, k)| {
        video.frames[i].dyn_feature[k] as f64
    });
    Ok(PreparedVideo {
        id: video.id.clone(),
        positive: video.positive,
        accident_frame: video.accident_frame,
        fps: video.fps,
        depth_flat: flatten_maps(video.frames.iter().map(|f| &f.depth_map)),
        dyn_pooled: causal_pool(&dyn_raw, config.dyn_window)?,
        scenes: PackedScenes::from_graphs(&graphs)?,
    })
}

/// Trainable network with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: FeatureDims,
    pub ablation: Ablation,
    pub store: ParamStore,
    depth_projection: Linear,
    interaction: InteractionParams,
    dynamics: DynamicsParams,
    temporal: TemporalParams,
}

impl Model {
    pub fn new(config: ModelConfig, dims: FeatureDims, ablation: Ablation, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let depth_projection = Linear::new(
            &mut store,
            "depth.projection",
            dims.depth_height * dims.depth_width,
            config.d_gd,
            &mut rng,
        );
        let interaction = InteractionParams::new(
            &mut store,
            (dims.obj_dim, dims.label_dim, config.g * config.g),
            config.d_e,
            config.d_int,
            &mut rng,
        );
        let dynamics = DynamicsParams::new(&mut store, dims.dyn_dim, config.d_dyn, &mut rng);
        let temporal = TemporalParams::new(&mut store, config.d_node(), config.gat_hidden, config.heads, &mut rng)?;
        Ok(Self {
            config,
            dims,
            ablation,
            store,
            depth_projection,
            interaction,
            dynamics,
            temporal,
        })
    }

    pub fn interaction_params(&self) -> &InteractionParams {
        &self.interaction
    }

    pub fn prepare(&self, video: &VideoSample) -> Result<PreparedVideo> {
        prepare_video(video, &self.config, &self.dims)
    }

    /// Fused frame features (`N × d_node`) recorded on `tape`.
    pub fn fused_features(&self, tape: &mut Tape, store: &ParamStore, video: &PreparedVideo) -> Result<Var> {
        let n = video.len();
        let c = &self.config;
        let depth = if self.ablation.depth {
            let flat = tape.input(video.depth_flat.clone());
            project_global_depth(tape, store, flat, &self.depth_projection)?
        } else {
            tape.input(Array2::zeros((n, c.d_gd)))
        };
        let interaction = if self.ablation.spatial || self.ablation.reconstruction {
            let switches = InteractionSwitches {
                spatial: self.ablation.spatial,
                local_depth: self.ablation.depth,
                reconstruction: self.ablation.reconstruction,
            };
            interaction_features(tape, store, &video.scenes, &self.interaction, switches)?
        } else {
            tape.input(Array2::zeros((n, 2 * c.d_int)))
        };
        let dynamics = if self.ablation.dynamics {
            let pooled = tape.input(video.dyn_pooled.clone());
            project_pooled(tape, store, pooled, &self.dynamics)?
        } else {
            tape.input(Array2::zeros((n, c.d_dyn)))
        };
        fuse_node(tape, depth, interaction, dynamics, [c.d_gd, 2 * c.d_int, c.d_dyn])
    }

    /// Per-frame logits (`N × 1`) using parameters from `store`, which must
    /// share this model's layout.
    pub fn logits_with(&self, tape: &mut Tape, store: &ParamStore, video: &PreparedVideo) -> Result<Var> {
        let fused = self.fused_features(tape, store, video)?;
        let mask = Arc::new(causal_mask(video.len(), self.config.max_lookback)?);
        predict_logits(tape, store, fused, &mask, &self.temporal)
    }

    pub fn logits(&self, tape: &mut Tape, video: &PreparedVideo) -> Result<Var> {
        self.logits_with(tape, &self.store, video)
    }

    pub fn predict_prepared(&self, video: &PreparedVideo) -> Result<PredictionCurve> {
        let mut tape = Tape::new();
        let z = self.logits(&mut tape, video)?;
        let p = tape.sigmoid(z);
        let probs = tape.value(p).column(0).to_vec();
        PredictionCurve::new(video.id.clone(), probs, video.positive, video.accident_frame, video.fps)
    }

    pub fn predict(&self, video: &VideoSample) -> Result<PredictionCurve> {
        self.predict_prepared(&self.prepare(video)?)
    }
}
