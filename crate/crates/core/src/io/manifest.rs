//! Scene manifest: a versioned TOML file naming every input of one scene.
//!
//! ```toml
//! schema_version = 1
//! scene_id = "scene0000_00"
//! points = "points.dbgt"              # f32 [N, 6]: x y z r g b
//! classes = ["chair", "table"]
//! label_embeddings = "labels.dbgt"    # f32 [K, C]
//! superpoints = "superpoints.dbgt"    # optional, i32 [N]
//!
//! [ground_truth]                      # optional
//! instances = "gt_instances.dbgt"     # i32 [N], -1 untracked
//! classes = "gt_classes.dbgt"         # i32 [N], -1 ignored
//!
//! [[frames]]
//! id = 0
//! rgb_size = [240, 320]               # rows, cols
//! intrinsic = "frame_000.intrinsic.txt"
//! extrinsic = "frame_000.extrinsic.txt"   # world -> camera
//! depth = "depth_000.dbgt"            # u16 [H_d, W_d], millimeters
//! features = "features_000.dbgt"      # f32 [H', W', C]
//! prompt_mask = "prompts_000.dbgt"    # optional, i32 [H_m, W_m]
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::camera::{read_extrinsic, read_intrinsic};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::metrics::GroundTruth;
use crate::mgb::{PromptMaskRaster, SuperpointPartition};
use crate::pipeline::SceneBundle;
use crate::scene::{CameraFrame, DepthRaster, FeatureMap, LabelEmbeddings, SceneCloud};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub schema_version: u32,
    pub scene_id: String,
    pub points: String,
    pub classes: Vec<String>,
    pub label_embeddings: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superpoints: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthFiles>,
    #[serde(default)]
    pub frames: Vec<FrameFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFiles {
    pub instances: String,
    pub classes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameFiles {
    pub id: u32,
    pub rgb_size: [usize; 2],
    pub intrinsic: String,
    pub extrinsic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_mask: Option<String>,
}

impl SceneManifest {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let m: SceneManifest = toml::from_str(text).map_err(|e| {
            let offset = e.span().map(|s| s.start as u64).unwrap_or(0);
            Error::parse(origin, offset, e.message().to_string())
        })?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::parse(
                origin,
                0,
                format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", m.schema_version),
            ));
        }
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Splits recoverable invariant findings from hard parse failures.
struct Violations(Vec<String>);

impl Violations {
    fn absorb<T>(&mut self, r: Result<T>) -> Result<Option<T>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::Invariant(v)) => {
                self.0.extend(v);
                Ok(None)
            }
            Err(Error::DimensionMismatch(m)) => {
                self.0.push(m);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

fn origin(p: &Path) -> String {
    p.display().to_string()
}

fn load_points(path: &Path, scene_id: &str) -> Result<SceneCloud> {
    let o = origin(path);
    let (dims, data) = Tensor::read(path)?.expect_f32(&o, 2)?;
    if dims[1] != 6 && dims[1] != 3 {
        return Err(Error::parse(&o, 8, format!("points tensor must be [N, 3] or [N, 6], got {dims:?}")));
    }
    let stride = dims[1];
    let mut positions = Vec::with_capacity(dims[0]);
    let mut colors = Vec::with_capacity(dims[0]);
    for row in data.chunks_exact(stride) {
        positions.push(Point3::new(f64::from(row[0]), f64::from(row[1]), f64::from(row[2])));
        colors.push(if stride == 6 {
            [row[3].clamp(0.0, 255.0) as u8, row[4].clamp(0.0, 255.0) as u8, row[5].clamp(0.0, 255.0) as u8]
        } else {
            [128, 128, 128]
        });
    }
    SceneCloud::new(scene_id, positions, colors)
}

fn load_i32_vector(path: &Path) -> Result<Vec<i32>> {
    Ok(Tensor::read(path)?.expect_i32(&origin(path), 1)?.1)
}

/// Loads and validates every file referenced by the manifest at `path`.
///
/// Parse failures abort immediately; invariant violations are collected
/// across all files and reported together.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneBundle> {
    let path = path.as_ref();
    let manifest = SceneManifest::read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    load_manifest(&manifest, base)
}

pub fn load_manifest(manifest: &SceneManifest, base: &Path) -> Result<SceneBundle> {
    let mut v = Violations(Vec::new());

    let cloud = v.absorb(load_points(&resolve(base, &manifest.points), &manifest.scene_id))?;
    let n = cloud.as_ref().map(SceneCloud::len);

    let label_path = resolve(base, &manifest.label_embeddings);
    let (ldims, ldata) = Tensor::read(&label_path)?.expect_f32(&origin(&label_path), 2)?;
    if ldims[0] != manifest.classes.len() {
        v.0.push(format!(
            "{}: {} embedding rows for {} classes",
            origin(&label_path),
            ldims[0],
            manifest.classes.len()
        ));
    }
    let labels = if ldims[0] == manifest.classes.len() {
        v.absorb(LabelEmbeddings::new(manifest.classes.clone(), ldims[1], ldata))?
    } else {
        None
    };

    let mut seen_ids = HashSet::new();
    let mut frames = Vec::new();
    let mut features = Vec::new();
    let mut prompt_masks = Vec::new();
    let (mut with_depth, mut with_features, mut with_masks) = (0, 0, 0);
    for f in &manifest.frames {
        if !seen_ids.insert(f.id) {
            v.0.push(format!("frame id {} listed twice", f.id));
        }
        let intrinsic = read_intrinsic(resolve(base, &f.intrinsic))?;
        let extrinsic = read_extrinsic(resolve(base, &f.extrinsic))?;

        let depth = match &f.depth {
            Some(d) => {
                with_depth += 1;
                let p = resolve(base, d);
                let (dims, data) = Tensor::read(&p)?.expect_u16(&origin(&p), 2)?;
                v.absorb(DepthRaster::new(dims[0], dims[1], data))?
            }
            None => None,
        };
        if let Some(feat) = &f.features {
            with_features += 1;
            let p = resolve(base, feat);
            let (dims, data) = Tensor::read(&p)?.expect_f32(&origin(&p), 3)?;
            if let Some(map) = v.absorb(FeatureMap::new(f.id, dims[0], dims[1], dims[2], data))? {
                if let Some(l) = &labels {
                    if map.channels() != l.channels() {
                        v.0.push(format!(
                            "frame {}: feature channels {} differ from label embedding channels {}",
                            f.id,
                            map.channels(),
                            l.channels()
                        ));
                    }
                }
                features.push(map);
            }
        }
        if let Some(mask) = &f.prompt_mask {
            with_masks += 1;
            let p = resolve(base, mask);
            let (dims, data) = Tensor::read(&p)?.expect_i32(&origin(&p), 2)?;
            if let Some(r) = v.absorb(PromptMaskRaster::new(f.id, dims[0], dims[1], data))? {
                prompt_masks.push(r);
            }
        }
        if let Some(depth) = depth {
            if let Some(frame) = v.absorb(CameraFrame::new(f.id, intrinsic, extrinsic, depth, (f.rgb_size[0], f.rgb_size[1])))? {
                frames.push(frame);
            }
        }
    }
    let frame_count = manifest.frames.len();
    if with_depth != frame_count || with_features != frame_count {
        v.0.push(format!(
            "frame count mismatch: {frame_count} frames, {with_depth} depth rasters, {with_features} feature maps"
        ));
    }
    if with_masks != 0 && with_masks != frame_count {
        v.0.push(format!(
            "prompt masks given for {with_masks} of {frame_count} frames (need all or none)"
        ));
    }

    let superpoints = match &manifest.superpoints {
        Some(s) => {
            let p = resolve(base, s);
            let ids = load_i32_vector(&p)?;
            if let Some(n) = n {
                if ids.len() != n {
                    v.0.push(format!("{}: {} superpoint ids for {n} points", origin(&p), ids.len()));
                }
            }
            if ids.iter().any(|&i| i < 0) {
                v.0.push(format!("{}: negative superpoint id", origin(&p)));
                None
            } else {
                v.absorb(SuperpointPartition::new(ids.into_iter().map(|i| i as u32).collect()))?
            }
        }
        None => None,
    };
    if let Some(sp) = &superpoints {
        for r in &prompt_masks {
            if r.max_id() >= sp.count() as i32 {
                v.0.push(format!(
                    "frame {}: prompt id {} exceeds superpoint count {}",
                    r.frame_id,
                    r.max_id(),
                    sp.count()
                ));
            }
        }
    }

    let ground_truth = match &manifest.ground_truth {
        Some(g) => {
            let ip = resolve(base, &g.instances);
            let cp = resolve(base, &g.classes);
            let inst = load_i32_vector(&ip)?;
            let cls = load_i32_vector(&cp)?;
            if let Some(n) = n {
                if inst.len() != n || cls.len() != n {
                    v.0.push(format!("ground truth covers {} / {} points of {n}", inst.len(), cls.len()));
                }
            }
            if cls.iter().any(|&c| c >= manifest.classes.len() as i32) {
                v.0.push(format!("{}: class id beyond the {} listed classes", origin(&cp), manifest.classes.len()));
            }
            v.absorb(GroundTruth::new(inst, cls))?
        }
        None => None,
    };

    if !v.0.is_empty() {
        return Err(Error::Invariant(v.0));
    }
    Ok(SceneBundle {
        cloud: cloud.expect("checked"),
        frames,
        features,
        labels: labels.expect("checked"),
        prompt_masks: (!prompt_masks.is_empty()).then_some(prompt_masks),
        superpoints,
        ground_truth,
    })
}

/// Reads only the class list and ground truth named by a manifest.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<(Vec<String>, GroundTruth)> {
    let path = path.as_ref();
    let manifest = SceneManifest::read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let files = manifest
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::invariant(format!("{}: manifest names no ground truth", origin(path))))?;
    let inst = load_i32_vector(&resolve(base, &files.instances))?;
    let cls = load_i32_vector(&resolve(base, &files.classes))?;
    if cls.iter().any(|&c| c >= manifest.classes.len() as i32) {
        return Err(Error::invariant(format!(
            "ground-truth class id beyond the {} listed classes",
            manifest.classes.len()
        )));
    }
    Ok((manifest.classes, GroundTruth::new(inst, cls)?))
}
