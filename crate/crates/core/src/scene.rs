//! Videos, detections and per-frame precomputed features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default node capacity per frame.
pub const DEFAULT_MAX_OBJECTS: usize = 19;

/// Axis-aligned box in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(
            (cx - w / 2.0) as f32,
            (cy - h / 2.0) as f32,
            (cx + w / 2.0) as f32,
            (cy + h / 2.0) as f32,
        )
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1) as f64
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1) as f64
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.x1 as f64 + self.x2 as f64) / 2.0,
            (self.y1 as f64 + self.y2 as f64) / 2.0,
        ]
    }

    pub fn is_well_formed(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x2.min(other.x2) as f64 - self.x1.max(other.x1) as f64).max(0.0);
        let iy = (self.y2.min(other.y2) as f64 - self.y1.max(other.y1) as f64).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub label_id: u32,
    pub score: f32,
    pub obj_feature: Vec<f32>,
    pub label_feature: Vec<f32>,
}

/// Relative inverse depth, row-major; larger values are nearer.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "depth map {height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameObservation {
    pub index: usize,
    pub detections: Vec<Detection>,
    pub depth_map: DepthMap,
    pub dyn_feature: Vec<f32>,
}

/// One clip. Frames are numbered from 1; `accident_frame` is the first
/// accident frame of a positive clip.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub frames: Vec<FrameObservation>,
    pub positive: bool,
    pub accident_frame: Option<usize>,
    pub fps: f64,
    /// Image width and height in pixels, the coordinate frame of every box.
    pub frame_size: [u32; 2],
}

impl VideoSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn diagonal(&self) -> f64 {
        let [w, h] = self.frame_size;
        ((w as f64).powi(2) + (h as f64).powi(2)).sqrt()
    }

    /// Check every invariant against the archive dimensions; errors name the
    /// offending video and frame.
    pub fn validate(&self, dims: &FeatureDims) -> Result<()> {
        let ctx = |frame: Option<usize>| match frame {
            Some(f) => format!("video '{}' frame {}", self.id, f),
            None => format!("video '{}'", self.id),
        };
        if self.id.is_empty()
            || !self
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        {
            return Err(Error::load(ctx(None), "id must be non-empty [A-Za-z0-9_.-]"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::load(ctx(None), format!("fps {} not positive", self.fps)));
        }
        if self.frame_size != [dims.image_width, dims.image_height] {
            return Err(Error::load(ctx(None), "frame size differs from archive"));
        }
        let n = self.frames.len();
        match (self.positive, self.accident_frame) {
            (true, Some(y)) if y >= 1 && y <= n => {}
            (true, Some(y)) => return Err(Error::load(ctx(None), format!("accident frame {y} outside 1..={n}"))),
            (true, None) => return Err(Error::load(ctx(None), "positive video without accident frame")),
            (false, Some(_)) => return Err(Error::load(ctx(None), "negative video with accident frame")),
            (false, None) => {}
        }
        for (i, frame) in self.frames.iter().enumerate() {
            let c = || ctx(Some(i + 1));
            if frame.detections.len() > dims.max_objects {
                return Err(Error::load(
                    c(),
                    format!(
                        "{} detections exceed capacity {}",
                        frame.detections.len(),
                        dims.max_objects
                    ),
                ));
            }
            for (j, d) in frame.detections.iter().enumerate() {
                if !d.bbox.is_well_formed() {
                    return Err(Error::load(c(), format!("detection {j} has malformed box")));
                }
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(Error::load(
                        c(),
                        format!("detection {j} score {} outside [0,1]", d.score),
                    ));
                }
                if d.obj_feature.len() != dims.obj_dim || d.label_feature.len() != dims.label_dim {
                    return Err(Error::load(c(), format!("detection {j} feature width")));
                }
                if d.obj_feature.iter().chain(&d.label_feature).any(|v| !v.is_finite()) {
                    return Err(Error::load(c(), format!("detection {j} non-finite feature")));
                }
            }
            let dm = &frame.depth_map;
            if dm.height != dims.depth_height || dm.width != dims.depth_width || dm.data.len() != dm.height * dm.width {
                return Err(Error::load(c(), "depth map size"));
            }
            if dm.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::load(c(), "depth map must be finite and nonnegative"));
            }
            if frame.dyn_feature.len() != dims.dyn_dim || frame.dyn_feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::load(c(), "dynamic feature width or value"));
            }
        }
        Ok(())
    }
}

/// Per-frame accident probabilities for one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurve {
    pub video_id: String,
    pub probs: Vec<f64>,
    pub positive: bool,
    pub accident_frame: Option<usize>,
    pub fps: f64,
}

impl PredictionCurve {
    pub fn new(
        video_id: impl Into<String>,
        probs: Vec<f64>,
        positive: bool,
        accident_frame: Option<usize>,
        fps: f64,
    ) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Argument("probabilities must lie in [0,1]".into()));
        }
        Ok(Self {
            video_id: video_id.into(),
            probs,
            positive,
            accident_frame,
            fps,
        })
    }

    pub fn from_sample(sample: &VideoSample, probs: Vec<f64>) -> Result<Self> {
        Self::new(
            sample.id.clone(),
            probs,
            sample.positive,
            sample.accident_frame,
            sample.fps,
        )
    }
}

/// Widths shared by every video of an archive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDims {
    pub obj_dim: usize,
    pub label_dim: usize,
    pub depth_height: usize,
    pub depth_width: usize,
    pub dyn_dim: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub max_objects: usize,
}

impl FeatureDims {
    /// Widths of the frozen encoders at full scale.
    pub fn full_scale() -> Self {
        Self {
            obj_dim: 4096,
            label_dim: 96,
            depth_height: 32,
            depth_width: 32,
            dyn_dim: 2048,
            image_width: 1280,
            image_height: 720,
            max_objects: DEFAULT_MAX_OBJECTS,
        }
    }
}

/// Indices of the `m` highest-scoring detections, score-descending; ties
/// go to the smaller box, then to the earlier detection.
pub fn top_m_indices(detections: &[Detection], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        db.score
            .total_cmp(&da.score)
            .then(da.bbox.area().total_cmp(&db.bbox.area()))
            .then(a.cmp(&b))
    });
    order.truncate(m);
    order
}

pub fn select_top_m(detections: &[Detection], m: usize) -> Vec<Detection> {
    top_m_indices(detections, m)
        .into_iter()
        .map(|i| detections[i].clone())
        .collect()
}

/// Validity mask of `m` slots with the first `count` occupied.
pub fn slot_mask(count: usize, m: usize) -> Vec<bool> {
    (0..m).map(|i| i < count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(score: f32, side: f32) -> Detection {
        Detection {
            bbox: BBox::new(0.0, 0.0, side, side),
            label_id: 1,
            score,
            obj_feature: vec![],
            label_feature: vec![],
        }
    }

    #[test]
    fn default_capacity_is_nineteen() {
        assert_eq!(DEFAULT_MAX_OBJECTS, 19);
    }

    #[test]
    fn fewer_than_m_keeps_all() {
        let dets = vec![det(0.2, 5.0), det(0.7, 5.0), det(0.5, 5.0)];
        let top = select_top_m(&dets, DEFAULT_MAX_OBJECTS);
        assert_eq!(top.len(), 3);
        assert_eq!(top.iter().map(|d| d.score).collect::<Vec<_>>(), vec![0.7, 0.5, 0.2]);
        let mask = slot_mask(top.len(), DEFAULT_MAX_OBJECTS);
        assert_eq!(mask.len(), 19);
        assert_eq!(mask.iter().filter(|&&v| v).count(), 3);
    }

    #[test]
    fn ties_prefer_smaller_area() {
        // areas 100 and 50
        let dets = vec![det(0.9, 10.0), det(0.9, 50f32.sqrt()), det(0.1, 1.0)];
        let top = top_m_indices(&dets, 2);
        assert_eq!(top, vec![1, 0]);
    }

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = BBox::new(1.0, 2.0, 5.0, 9.0);
        assert_eq!(b.iou(&b), 1.0);
        assert_eq!(b.iou(&BBox::new(10.0, 10.0, 11.0, 11.0)), 0.0);
    }
}
