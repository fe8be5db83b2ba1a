//! PDAF feature archives.
//!
//! An archive is a directory holding `manifest.json` and one binary blob per
//! video. A blob is little-endian throughout:
//!
//! ```text
//! "PDAF" | u32 version (=1) | u32 frame count
//! per frame:
//!   u32 detection count k
//!   f32 boxes [k × 4]  (x1, y1, x2, y2)
//!   f32 scores [k]
//!   u32 label ids [k]
//!   f32 object features [k × obj_dim]
//!   f32 label features [k × label_dim]
//!   f32 depth map [depth_height × depth_width], row-major
//!   f32 dynamic feature [dyn_dim]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BBox, DepthMap, Detection, FeatureDims, FrameObservation, VideoSample};

pub const MAGIC: &[u8; 4] = b"PDAF";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dims: FeatureDims,
    pub videos: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub frames: usize,
    pub fps: f64,
    pub positive: bool,
    pub accident_frame: Option<usize>,
}

/// Videos that share one set of feature widths.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub dims: FeatureDims,
    pub videos: Vec<VideoSample>,
}

impl Archive {
    pub fn new(dims: FeatureDims, videos: Vec<VideoSample>) -> Self {
        Self { dims, videos }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.videos {
            v.validate(&self.dims)?;
            if !seen.insert(v.id.as_str()) {
                return Err(Error::load(format!("video '{}'", v.id), "duplicate id"));
            }
        }
        Ok(())
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, vs: impl IntoIterator<Item = f32>) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialise one video to the blob layout.
pub fn encode_video(video: &VideoSample) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, video.frames.len() as u32);
    for frame in &video.frames {
        let dets = &frame.detections;
        put_u32(&mut buf, dets.len() as u32);
        put_f32s(
            &mut buf,
            dets.iter().flat_map(|d| [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2]),
        );
        put_f32s(&mut buf, dets.iter().map(|d| d.score));
        for d in dets {
            put_u32(&mut buf, d.label_id);
        }
        put_f32s(&mut buf, dets.iter().flat_map(|d| d.obj_feature.iter().copied()));
        put_f32s(&mut buf, dets.iter().flat_map(|d| d.label_feature.iter().copied()));
        put_f32s(&mut buf, frame.depth_map.data.iter().copied());
        put_f32s(&mut buf, frame.dyn_feature.iter().copied());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::load(
                self.context.clone(),
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::load(self.context.clone(), "length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parse one blob; `entry` supplies the labels stored in the manifest.
pub fn decode_video(bytes: &[u8], entry: &ManifestEntry, dims: &FeatureDims) -> Result<VideoSample> {
    let mut r = Reader {
        bytes,
        pos: 0,
        context: format!("video '{}'", entry.id),
    };
    if r.take(4)? != MAGIC {
        return Err(Error::load(r.context.clone(), "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::load(r.context.clone(), format!("unsupported version {version}")));
    }
    let n_frames = r.u32()? as usize;
    if n_frames != entry.frames {
        return Err(Error::load(
            r.context.clone(),
            format!("blob has {n_frames} frames, manifest says {}", entry.frames),
        ));
    }
    let mut frames = Vec::with_capacity(n_frames);
    for index in 0..n_frames {
        r.context = format!("video '{}' frame {}", entry.id, index + 1);
        let k = r.u32()? as usize;
        if k > dims.max_objects {
            return Err(Error::load(
                r.context.clone(),
                format!("{k} detections exceed capacity"),
            ));
        }
        let boxes = r.f32s(4 * k)?;
        let scores = r.f32s(k)?;
        let mut labels = Vec::with_capacity(k);
        for _ in 0..k {
            labels.push(r.u32()?);
        }
        let obj = r.f32s(k * dims.obj_dim)?;
        let lab = r.f32s(k * dims.label_dim)?;
        let depth = r.f32s(dims.depth_height * dims.depth_width)?;
        let dyn_feature = r.f32s(dims.dyn_dim)?;
        let detections = (0..k)
            .map(|j| Detection {
                bbox: BBox::new(boxes[4 * j], boxes[4 * j + 1], boxes[4 * j + 2], boxes[4 * j + 3]),
                label_id: labels[j],
                score: scores[j],
                obj_feature: obj[j * dims.obj_dim..(j + 1) * dims.obj_dim].to_vec(),
                label_feature: lab[j * dims.label_dim..(j + 1) * dims.label_dim].to_vec(),
            })
            .collect();
        frames.push(FrameObservation {
            index,
            detections,
            depth_map: DepthMap::new(dims.depth_height, dims.depth_width, depth)?,
            dyn_feature,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::load(
            format!("video '{}'", entry.id),
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    let video = VideoSample {
        id: entry.id.clone(),
        frames,
        positive: entry.positive,
        accident_frame: entry.accident_frame,
        fps: entry.fps,
        frame_size: [dims.image_width, dims.image_height],
    };
    video.validate(dims)?;
    Ok(video)
}

pub fn manifest_for(archive: &Archive) -> Manifest {
    Manifest {
        format: "PDAF".into(),
        version: VERSION,
        dims: archive.dims,
        videos: archive
            .videos
            .iter()
            .map(|v| ManifestEntry {
                id: v.id.clone(),
                file: format!("{}.pdaf", v.id),
                frames: v.frames.len(),
                fps: v.fps,
                positive: v.positive,
                accident_frame: v.accident_frame,
            })
            .collect(),
    }
}

/// Write `archive` into directory `path` (created if missing).
pub fn save_archive(archive: &Archive, path: &Path) -> Result<()> {
    archive.validate()?;
    fs::create_dir_all(path)?;
    let manifest = manifest_for(archive);
    for (entry, video) in manifest.videos.iter().zip(&archive.videos) {
        fs::write(path.join(&entry.file), encode_video(video))?;
    }
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(path.join(MANIFEST), text)?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<Archive> {
    let manifest_path = path.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::load(manifest_path.display().to_string(), e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::load(manifest_path.display().to_string(), e.to_string()))?;
    if manifest.format != "PDAF" || manifest.version != VERSION {
        return Err(Error::load(
            manifest_path.display().to_string(),
            format!("unsupported format {} v{}", manifest.format, manifest.version),
        ));
    }
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        if entry.file.contains('/') || entry.file.contains('\\') || entry.file.starts_with("..") {
            return Err(Error::load(
                format!("video '{}'", entry.id),
                "blob path escapes archive",
            ));
        }
        let bytes = fs::read(path.join(&entry.file))
            .map_err(|e| Error::load(format!("video '{}'", entry.id), e.to_string()))?;
        videos.push(decode_video(&bytes, entry, &manifest.dims)?);
    }
    let archive = Archive::new(manifest.dims, videos);
    archive.validate()?;
    Ok(archive)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> FeatureDims {
        FeatureDims {
            obj_dim: 2,
            label_dim: 1,
            depth_height: 1,
            depth_width: 2,
            dyn_dim: 1,
            image_width: 8,
            image_height: 4,
            max_objects: 19,
        }
    }

    fn tiny_video() -> VideoSample {
        let det = Detection {
            bbox: BBox::new(1.0, 0.5, 3.0, 2.0),
            label_id: 7,
            score: 0.75,
            obj_feature: vec![0.25, -1.5],
            label_feature: vec![1.0],
        };
        VideoSample {
            id: "v0".into(),
            frames: vec![
                FrameObservation {
                    index: 0,
                    detections: vec![det],
                    depth_map: DepthMap::new(1, 2, vec![0.5, 2.0]).unwrap(),
                    dyn_feature: vec![3.0],
                },
                FrameObservation {
                    index: 1,
                    detections: vec![],
                    depth_map: DepthMap::new(1, 2, vec![0.0, 1.0]).unwrap(),
                    dyn_feature: vec![-0.5],
                },
            ],
            positive: true,
            accident_frame: Some(2),
            fps: 10.0,
            frame_size: [8, 4],
        }
    }

    #[test]
    fn blob_matches_hand_assembled_bytes() {
        let mut expected: Vec<u8> = Vec::new();
        expected.extend_from_slice(b"PDAF");
        expected.extend_from_slice(&[1, 0, 0, 0]); // version
        expected.extend_from_slice(&[2, 0, 0, 0]); // frames
                                                   // frame 1
        expected.extend_from_slice(&[1, 0, 0, 0]); // one detection
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]); // 1.0
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0x3f]); // 0.5
        expected.extend_from_slice(&[0x00, 0x00, 0x40, 0x40]); // 3.0
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0x40]); // 2.0
        expected.extend_from_slice(&[0x00, 0x00, 0x40, 0x3f]); // score 0.75
        expected.extend_from_slice(&[7, 0, 0, 0]); // label id
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3e]); // 0.25
        expected.extend_from_slice(&[0x00, 0x00, 0xc0, 0xbf]); // -1.5
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]); // label feature 1.0
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0x3f]); // depth 0.5
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0x40]); // depth 2.0
        expected.extend_from_slice(&[0x00, 0x00, 0x40, 0x40]); // dyn 3.0
                                                               // frame 2
        expected.extend_from_slice(&[0, 0, 0, 0]);
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0x00]); // depth 0.0
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]); // depth 1.0
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0xbf]); // dyn -0.5
        assert_eq!(encode_video(&tiny_video()), expected);
    }

    #[test]
    fn truncated_blob_names_frame() {
        let v = tiny_video();
        let archive = Archive::new(dims(), vec![v.clone()]);
        let manifest = manifest_for(&archive);
        let bytes = encode_video(&v);
        let err = decode_video(&bytes[..bytes.len() - 3], &manifest.videos[0], &dims()).unwrap_err();
        assert!(err.to_string().contains("frame 2"), "{err}");
    }

    #[test]
    fn bad_magic_rejected() {
        let v = tiny_video();
        let archive = Archive::new(dims(), vec![v.clone()]);
        let manifest = manifest_for(&archive);
        let mut bytes = encode_video(&v);
        bytes[0] = b'X';
        let err = decode_video(&bytes, &manifest.videos[0], &dims()).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn accident_after_last_frame_rejected() {
        let mut v = tiny_video();
        v.accident_frame = Some(3);
        let err = v.validate(&dims()).unwrap_err();
        assert!(err.to_string().contains("video 'v0'"));
    }
}
