//! Synthetic scenes with exact ground truth.
//!
//! Instances are axis-aligned open-bottom boxes standing on the floor of a
//! square room. Their five faces are lattice-sampled, so every instance is
//! connected at the default grouping radius. Cameras sit on a circle around
//! the room looking at its center. Depth, per-pixel instance ids and feature
//! maps are ray-cast from the true geometry at RGB resolution.
//!
//! Feature maps carry a one-hot class part plus one extra "texture" channel
//! holding a smooth pseudo-random field of the surface position in
//! `[0, 0.5]`. Label embeddings are one-hot with a zero texture entry, so the
//! texture leaves the argmax alone but spreads scores within a class.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::camera::{format_extrinsic, format_intrinsic};
use crate::io::manifest::{FrameFiles, GroundTruthFiles, SceneManifest, SCHEMA_VERSION};
use crate::io::Tensor;
use crate::metrics::GroundTruth;
use crate::mgb::{PromptMaskRaster, SuperpointPartition};
use crate::pipeline::SceneBundle;
use crate::scene::projection::visible_in_frame;
use crate::scene::{CameraFrame, DepthRaster, FeatureMap, LabelEmbeddings, SceneCloud, SemanticLabeling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub instances: usize,
    /// Inclusive range of the target point count per instance. Counts are
    /// approximate: lattice rounding and hidden-surface removal change them.
    pub points_per_instance: [usize; 2],
    pub classes: usize,
    /// Side length of the square room, meters.
    pub room_extent: f64,
    pub frames: usize,
    /// Probability that a foreground feature pixel reports a wrong class.
    pub feature_flip_rate: f64,
    /// Prompt-mask silhouettes are grown by this many pixels.
    pub mask_dilation: usize,
    /// Standard deviation of additive depth noise, meters.
    pub depth_noise: f64,
    /// `[rows, cols]` of every raster.
    pub image_size: [usize; 2],
    /// Lattice spacing of surface samples, meters.
    pub spacing: f64,
    /// Minimum floor clearance between boxes, meters.
    pub min_gap: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 1,
            instances: 6,
            points_per_instance: [400, 800],
            classes: 3,
            room_extent: 3.0,
            frames: 4,
            feature_flip_rate: 0.0,
            mask_dilation: 0,
            depth_noise: 0.0,
            image_size: [240, 320],
            spacing: 0.025,
            min_gap: 0.15,
        }
    }
}

/// Faces with fewer surviving points are folded into their box's largest face.
const MIN_SUPERPOINT: usize = 24;
/// Instances that lose more than this share of their points are rejected.
const MIN_KEPT_SHARE: f64 = 0.5;
const PLACEMENT_ATTEMPTS: usize = 2000;
const TEXTURE_WAVELENGTH: f64 = 0.12;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.instances == 0 || self.classes == 0 || self.frames == 0 {
            p.push("instances, classes and frames must all be at least 1".to_string());
        }
        let [lo, hi] = self.points_per_instance;
        if lo == 0 || lo > hi {
            p.push(format!("points_per_instance [{lo}, {hi}] must be a non-empty positive range"));
        }
        if !(0.0..=1.0).contains(&self.feature_flip_rate) {
            p.push(format!("feature_flip_rate {} outside [0, 1]", self.feature_flip_rate));
        }
        if !(self.depth_noise >= 0.0 && self.depth_noise.is_finite()) {
            p.push(format!("depth_noise {} must be finite and non-negative", self.depth_noise));
        }
        if !(self.room_extent > 0.0 && self.room_extent.is_finite()) {
            p.push(format!("room_extent {} must be positive", self.room_extent));
        }
        if !(self.spacing > 0.0) || !(self.min_gap >= 0.0) {
            p.push("spacing must be positive and min_gap non-negative".to_string());
        }
        if self.image_size[0] < 2 || self.image_size[1] < 2 {
            p.push(format!("image_size {:?} too small", self.image_size));
        }
        if self.feature_flip_rate > 0.0 && self.classes < 2 {
            p.push("feature flips need at least 2 classes".to_string());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| {
            let offset = e.span().map(|s| s.start as u64).unwrap_or(0);
            Error::parse(origin, offset, e.message().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy)]
struct Box3 {
    min: [f64; 3],
    max: [f64; 3],
}

impl Box3 {
    fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    fn corners(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        (0..8).map(move |i| {
            Vector3::new(
                if i & 1 == 0 { self.min[0] } else { self.max[0] },
                if i & 2 == 0 { self.min[1] } else { self.max[1] },
                if i & 4 == 0 { self.min[2] } else { self.max[2] },
            )
        })
    }

    /// Entry distance of the ray `o + t d`, if it hits with `t > 0`.
    fn ray_entry(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut near, mut far) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

/// Lattice samples of the five faces (no bottom); `face` in `0..5`.
fn sample_box(b: &Box3, spacing: f64) -> Vec<(Point3<f64>, u8)> {
    let size = [b.max[0] - b.min[0], b.max[1] - b.min[1], b.max[2] - b.min[2]];
    let steps = size.map(|s| ((s / spacing).ceil() as usize).max(1));
    let at = |axis: usize, i: usize| b.min[axis] + size[axis] * i as f64 / steps[axis] as f64;
    let mut out = Vec::new();
    for i in 0..=steps[0] {
        for j in 0..=steps[1] {
            out.push((Point3::new(at(0, i), at(1, j), b.max[2]), 0));
        }
    }
    for (face, x) in [(1u8, b.min[0]), (2, b.max[0])] {
        for j in 0..=steps[1] {
            for k in 0..steps[2] {
                out.push((Point3::new(x, at(1, j), at(2, k)), face));
            }
        }
    }
    for (face, y) in [(3u8, b.min[1]), (4, b.max[1])] {
        for i in 1..steps[0] {
            for k in 0..steps[2] {
                out.push((Point3::new(at(0, i), y, at(2, k)), face));
            }
        }
    }
    out
}

fn place_boxes(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Box3>> {
    let mut boxes: Vec<Box3> = Vec::with_capacity(spec.instances);
    let [lo, hi] = spec.points_per_instance;
    for i in 0..spec.instances {
        let target = rng.random_range(lo..=hi) as f64;
        let u: [f64; 3] = [rng.random_range(0.6..1.4), rng.random_range(0.6..1.4), rng.random_range(0.6..1.4)];
        let coef = u[0] * u[1] + 2.0 * u[2] * (u[0] + u[1]);
        let scale = spec.spacing * (target / coef).sqrt();
        let size = u.map(|v| v * scale);
        if size[0] + 2.0 * spec.min_gap > spec.room_extent || size[1] + 2.0 * spec.min_gap > spec.room_extent {
            return Err(Error::Infeasible(format!(
                "instance {i} ({:.2} x {:.2} m) does not fit in a {} m room",
                size[0], size[1], spec.room_extent
            )));
        }
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x = rng.random_range(spec.min_gap..=spec.room_extent - spec.min_gap - size[0]);
            let y = rng.random_range(spec.min_gap..=spec.room_extent - spec.min_gap - size[1]);
            let cand = Box3 {
                min: [x, y, 0.0],
                max: [x + size[0], y + size[1], size[2]],
            };
            let clear = boxes.iter().all(|o| {
                cand.min[0] >= o.max[0] + spec.min_gap
                    || o.min[0] >= cand.max[0] + spec.min_gap
                    || cand.min[1] >= o.max[1] + spec.min_gap
                    || o.min[1] >= cand.max[1] + spec.min_gap
            });
            if clear {
                placed = Some(cand);
                break;
            }
        }
        boxes.push(placed.ok_or_else(|| {
            Error::Infeasible(format!(
                "could not place instance {i} with {} m clearance in a {} m room",
                spec.min_gap, spec.room_extent
            ))
        })?);
    }
    Ok(boxes)
}

struct Camera {
    intrinsic: Matrix3<f64>,
    extrinsic: Matrix4<f64>,
    center: Vector3<f64>,
    /// camera-to-world rotation
    rot_c2w: Matrix3<f64>,
}

fn make_cameras(spec: &SynthSpec) -> Vec<Camera> {
    let [rows, cols] = spec.image_size;
    let e = spec.room_extent;
    let target = Vector3::new(0.5 * e, 0.5 * e, 0.0);
    let radius = 0.6 * e + 0.5;
    let height = 1.5 + 0.25 * e;
    // 90 degree horizontal field of view
    let f = 0.5 * cols as f64;
    let intrinsic = Matrix3::new(
        f, 0.0, 0.5 * (cols as f64 - 1.0), //
        0.0, f, 0.5 * (rows as f64 - 1.0), //
        0.0, 0.0, 1.0,
    );
    (0..spec.frames)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / spec.frames as f64 + 0.3;
            let center = Vector3::new(target.x + radius * a.cos(), target.y + radius * a.sin(), height);
            let fwd = (target - center).normalize();
            let right = fwd.cross(&Vector3::z()).normalize();
            let down = fwd.cross(&right);
            let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
            let t = -(r * center);
            let mut extrinsic = Matrix4::identity();
            extrinsic.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            extrinsic.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
            Camera {
                intrinsic,
                extrinsic,
                center,
                rot_c2w: r.transpose(),
            }
        })
        .collect()
}

struct Render {
    /// meters, infinite where nothing was hit
    depth: Vec<f64>,
    /// box index per pixel, -1 where nothing was hit
    ids: Vec<i32>,
    /// texture value per pixel
    texture: Vec<f32>,
}

struct Texture {
    dirs: [Vector3<f64>; 3],
    phases: [f64; 3],
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut dir = || {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            Vector3::new(s * phi.cos(), s * phi.sin(), z)
        };
        let dirs = [dir(), dir(), dir()];
        let phases = [
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(0.0..2.0 * PI),
        ];
        Texture { dirs, phases }
    }

    fn at(&self, p: &Vector3<f64>) -> f64 {
        (0..3)
            .map(|i| 1.0 + (2.0 * PI * self.dirs[i].dot(p) / TEXTURE_WAVELENGTH + self.phases[i]).sin())
            .sum::<f64>()
            / 12.0
    }
}

fn render(cam: &Camera, boxes: &[Box3], spec: &SynthSpec, texture: &Texture) -> Render {
    let [rows, cols] = spec.image_size;
    let mut out = Render {
        depth: vec![f64::INFINITY; rows * cols],
        ids: vec![-1; rows * cols],
        texture: vec![0.0; rows * cols],
    };
    let k = &cam.intrinsic;
    let (fx, fy, cx, cy) = (k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)]);
    for (bi, b) in boxes.iter().enumerate() {
        // screen-space bounds from the corners; fall back to the full image
        // when a corner is behind or very near the camera
        let mut bounds = (rows as f64, cols as f64, -1.0f64, -1.0f64);
        let mut full = false;
        for c in b.corners() {
            let cam_pt = cam.extrinsic.fixed_view::<3, 3>(0, 0) * c + cam.extrinsic.fixed_view::<3, 1>(0, 3);
            if cam_pt.z < 1e-3 {
                full = true;
                break;
            }
            let (u, v) = (fx * cam_pt.x / cam_pt.z + cx, fy * cam_pt.y / cam_pt.z + cy);
            bounds = (bounds.0.min(v), bounds.1.min(u), bounds.2.max(v), bounds.3.max(u));
        }
        let (r0, c0, r1, c1) = if full {
            (0, 0, rows - 1, cols - 1)
        } else {
            if bounds.2 < 0.0 || bounds.3 < 0.0 || bounds.0 > rows as f64 || bounds.1 > cols as f64 {
                continue;
            }
            (
                (bounds.0.floor() - 1.0).max(0.0) as usize,
                (bounds.1.floor() - 1.0).max(0.0) as usize,
                ((bounds.2.ceil() + 1.0) as usize).min(rows - 1),
                ((bounds.3.ceil() + 1.0) as usize).min(cols - 1),
            )
        };
        for r in r0..=r1 {
            for c in c0..=c1 {
                let ray_cam = Vector3::new((c as f64 - cx) / fx, (r as f64 - cy) / fy, 1.0);
                let dir = cam.rot_c2w * ray_cam;
                // with a unit z component in camera space, t is the depth
                if let Some(t) = b.ray_entry(&cam.center, &dir) {
                    let i = r * cols + c;
                    if t < out.depth[i] {
                        out.depth[i] = t;
                        out.ids[i] = bi as i32;
                        out.texture[i] = texture.at(&(cam.center + dir * t)) as f32;
                    }
                }
            }
        }
    }
    out
}

fn through_f32(p: Point3<f64>) -> Point3<f64> {
    p.map(|v| f64::from(v as f32))
}

/// A generated scene: the in-memory bundle plus what is needed to write it.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SynthSpec,
    pub bundle: SceneBundle,
    /// Class of every ground-truth instance.
    pub instance_classes: Vec<i32>,
}

/// Builds a scene from `spec`. The same spec always yields the same scene.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let boxes = place_boxes(spec, &mut rng)?;
    let texture = Texture::new(&mut rng);
    let instance_classes: Vec<i32> = (0..spec.instances).map(|i| (i % spec.classes) as i32).collect();
    let cameras = make_cameras(spec);
    let [rows, cols] = spec.image_size;

    let noise = (spec.depth_noise > 0.0).then(|| Normal::new(0.0, spec.depth_noise).expect("checked sigma"));
    let mut renders = Vec::with_capacity(cameras.len());
    let mut frames = Vec::with_capacity(cameras.len());
    for (fi, cam) in cameras.iter().enumerate() {
        let r = render(cam, &boxes, spec, &texture);
        let depth_mm: Vec<u16> = r
            .depth
            .iter()
            .map(|&d| {
                if d.is_finite() {
                    let noisy = d + noise.map_or(0.0, |n| n.sample(&mut rng));
                    (noisy * 1000.0).round().clamp(1.0, f64::from(u16::MAX)) as u16
                } else {
                    0
                }
            })
            .collect();
        let depth = DepthRaster::new(rows, cols, depth_mm)?;
        frames.push(CameraFrame::new(fi as u32, cam.intrinsic, cam.extrinsic, depth, (rows, cols))?);
        renders.push(r);
    }

    // surface samples, keeping only what some frame sees
    let mut samples: Vec<(Point3<f64>, u32, u8)> = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        let raw = sample_box(b, spec.spacing);
        let requested = raw.len();
        let seen: Vec<(Point3<f64>, u32, u8)> = raw
            .into_iter()
            .map(|(p, face)| (through_f32(p), bi as u32, face))
            .filter(|(p, _, _)| frames.iter().any(|f| visible_in_frame(p, f, 0.05).is_some()))
            .collect();
        let kept = largest_component(&seen, spec.spacing * 1.6);
        if (kept.len() as f64) < MIN_KEPT_SHARE * requested as f64 {
            return Err(Error::Infeasible(format!(
                "instance {bi}: only {} of {requested} surface points are visible and connected",
                kept.len()
            )));
        }
        samples.extend(kept);
    }
    samples.shuffle(&mut rng);

    let n = samples.len();
    let positions: Vec<Point3<f64>> = samples.iter().map(|s| s.0).collect();
    let colors: Vec<[u8; 3]> = samples
        .iter()
        .map(|s| crate::io::ply::id_color(instance_classes[s.1 as usize]))
        .collect();
    let cloud = SceneCloud::new(format!("synth_{}", spec.seed), positions, colors)?;

    // superpoints: box faces, tiny faces folded into the box's largest face
    let mut face_counts = vec![[0usize; 5]; boxes.len()];
    for s in &samples {
        face_counts[s.1 as usize][s.2 as usize] += 1;
    }
    let face_label = |bi: usize, face: usize| -> u32 {
        let counts = &face_counts[bi];
        let f = if counts[face] < MIN_SUPERPOINT {
            (0..5).max_by_key(|&f| (counts[f], std::cmp::Reverse(f))).unwrap()
        } else {
            face
        };
        (bi * 5 + f) as u32
    };
    let raw_labels: Vec<u32> = samples.iter().map(|s| face_label(s.1 as usize, s.2 as usize)).collect();
    let superpoints = SuperpointPartition::from_labels(&raw_labels);
    let mut prompt_of_box = vec![u32::MAX; boxes.len()];
    for (s, &sp) in samples.iter().zip(superpoints.ids()) {
        let slot = &mut prompt_of_box[s.1 as usize];
        *slot = (*slot).min(sp);
    }

    // feature maps, label embeddings and prompt rasters
    let k = spec.classes;
    let channels = k + 1;
    let mut features = Vec::with_capacity(frames.len());
    let mut prompt_masks = Vec::with_capacity(frames.len());
    for (fi, (r, cam)) in renders.iter().zip(&cameras).enumerate() {
        let mut data = vec![0f32; rows * cols * channels];
        for (i, &id) in r.ids.iter().enumerate() {
            if id < 0 {
                continue;
            }
            let mut class = instance_classes[id as usize] as usize;
            if spec.feature_flip_rate > 0.0 && rng.random_bool(spec.feature_flip_rate) {
                class = (class + rng.random_range(1..k)) % k;
            }
            data[i * channels + class] = 1.0;
            data[i * channels + k] = r.texture[i];
        }
        features.push(FeatureMap::new(fi as u32, rows, cols, channels, data)?);
        prompt_masks.push(PromptMaskRaster::new(
            fi as u32,
            rows,
            cols,
            paint_prompts(r, cam, &boxes, &prompt_of_box, spec),
        )?);
    }
    let class_names: Vec<String> = (0..k).map(|c| format!("class{c}")).collect();
    let mut emb = vec![0f32; k * channels];
    for c in 0..k {
        emb[c * channels + c] = 1.0;
    }
    let labels = LabelEmbeddings::new(class_names, channels, emb)?;

    let gt_instances: Vec<i32> = samples.iter().map(|s| s.1 as i32).collect();
    let gt_classes: Vec<i32> = samples.iter().map(|s| instance_classes[s.1 as usize]).collect();
    let ground_truth = GroundTruth::new(gt_instances, gt_classes)?;
    debug_assert_eq!(ground_truth.len(), n);

    Ok(SyntheticScene {
        spec: spec.clone(),
        bundle: SceneBundle {
            cloud,
            frames,
            features,
            labels,
            prompt_masks: Some(prompt_masks),
            superpoints: Some(superpoints),
            ground_truth: Some(ground_truth),
        },
        instance_classes,
    })
}

/// Largest connected component of one instance's samples at `radius`.
fn largest_component(samples: &[(Point3<f64>, u32, u8)], radius: f64) -> Vec<(Point3<f64>, u32, u8)> {
    if samples.is_empty() {
        return Vec::new();
    }
    let positions: Vec<Point3<f64>> = samples.iter().map(|s| s.0).collect();
    let cloud = SceneCloud::from_positions("component", positions).expect("finite samples");
    let one_class = SemanticLabeling::from_vec_unchecked(vec![0; samples.len()]);
    let groups = crate::sgb::bfs_group(&cloud, &one_class, radius, 1, &[]);
    let best = groups
        .iter()
        .max_by_key(|g| (g.len(), std::cmp::Reverse(g.first())))
        .expect("non-empty");
    best.indices().iter().map(|&i| samples[i as usize]).collect()
}

/// Ideal prompt-mask raster: each box's visible silhouette, optionally
/// dilated, painted far to near.
fn paint_prompts(r: &Render, cam: &Camera, boxes: &[Box3], prompt_of_box: &[u32], spec: &SynthSpec) -> Vec<i32> {
    let [rows, cols] = spec.image_size;
    if spec.mask_dilation == 0 {
        return r.ids.iter().map(|&id| if id < 0 { -1 } else { prompt_of_box[id as usize] as i32 }).collect();
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    let dist: Vec<f64> = boxes.iter().map(|b| (b.center() - cam.center).norm()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let d = spec.mask_dilation;
    let mut out = vec![-1i32; rows * cols];
    let mut silhouettes: Vec<Vec<usize>> = vec![Vec::new(); boxes.len()];
    for (i, &id) in r.ids.iter().enumerate() {
        if id >= 0 {
            silhouettes[id as usize].push(i);
        }
    }
    for bi in order {
        let value = prompt_of_box[bi] as i32;
        for &i in &silhouettes[bi] {
            let (pr, pc) = (i / cols, i % cols);
            for rr in pr.saturating_sub(d)..=(pr + d).min(rows - 1) {
                for cc in pc.saturating_sub(d)..=(pc + d).min(cols - 1) {
                    out[rr * cols + cc] = value;
                }
            }
        }
    }
    out
}

/// Writes the scene as DBGT/text files plus `manifest.toml` into `dir`;
/// returns the manifest path.
pub fn write_synthetic(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let b = &scene.bundle;
    let n = b.cloud.len();

    let mut points = Vec::with_capacity(n * 6);
    for (p, c) in b.cloud.positions().iter().zip(b.cloud.colors()) {
        points.extend([p.x as f32, p.y as f32, p.z as f32, f32::from(c[0]), f32::from(c[1]), f32::from(c[2])]);
    }
    Tensor::f32(&[n, 6], points)?.write(dir.join("points.dbgt"))?;

    let k = b.labels.num_classes();
    let c = b.labels.channels();
    let emb: Vec<f32> = (0..k).flat_map(|i| b.labels.row(i).to_vec()).collect();
    Tensor::f32(&[k, c], emb)?.write(dir.join("labels.dbgt"))?;

    let write_text = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };

    let masks = b.prompt_masks.as_deref().unwrap_or(&[]);
    let mut frames = Vec::with_capacity(b.frames.len());
    for (i, (frame, feat)) in b.frames.iter().zip(&b.features).enumerate() {
        let id = frame.frame_id;
        let intrinsic = format!("frame_{id:04}.intrinsic.txt");
        let extrinsic = format!("frame_{id:04}.extrinsic.txt");
        let depth = format!("depth_{id:04}.dbgt");
        let features = format!("features_{id:04}.dbgt");
        write_text(&intrinsic, format_intrinsic(frame.intrinsic()))?;
        write_text(&extrinsic, format_extrinsic(frame.extrinsic()))?;
        let d = frame.depth();
        Tensor::u16(&[d.height(), d.width()], d.data().to_vec())?.write(dir.join(&depth))?;
        Tensor::f32(&[feat.height(), feat.width(), feat.channels()], feat.data().to_vec())?
            .write(dir.join(&features))?;
        let prompt_mask = match masks.get(i) {
            Some(m) => {
                let name = format!("prompts_{id:04}.dbgt");
                Tensor::i32(&[m.height(), m.width()], m.data().to_vec())?.write(dir.join(&name))?;
                Some(name)
            }
            None => None,
        };
        let (h, w) = frame.rgb_size();
        frames.push(FrameFiles {
            id,
            rgb_size: [h, w],
            intrinsic,
            extrinsic,
            depth: Some(depth),
            features: Some(features),
            prompt_mask,
        });
    }

    let superpoints = match &b.superpoints {
        Some(sp) => {
            Tensor::i32(&[n], sp.ids().iter().map(|&v| v as i32).collect())?.write(dir.join("superpoints.dbgt"))?;
            Some("superpoints.dbgt".to_string())
        }
        None => None,
    };
    let ground_truth = match &b.ground_truth {
        Some(gt) => {
            Tensor::i32(&[n], gt.instance_ids().to_vec())?.write(dir.join("gt_instances.dbgt"))?;
            Tensor::i32(&[n], gt.classes().to_vec())?.write(dir.join("gt_classes.dbgt"))?;
            Some(GroundTruthFiles {
                instances: "gt_instances.dbgt".into(),
                classes: "gt_classes.dbgt".into(),
            })
        }
        None => None,
    };

    let manifest = SceneManifest {
        schema_version: SCHEMA_VERSION,
        scene_id: b.cloud.scene_id().to_string(),
        points: "points.dbgt".into(),
        classes: b.labels.classes().to_vec(),
        label_embeddings: "labels.dbgt".into(),
        superpoints,
        ground_truth,
        frames,
    };
    let path = dir.join("manifest.toml");
    write_text("manifest.toml", manifest.to_toml_string())?;
    Ok(path)
}
