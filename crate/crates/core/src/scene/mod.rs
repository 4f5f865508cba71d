//! Scene containers and label types shared by every stage.
//!
//! Point index `n` in `[0, N)` of a [`SceneCloud`] is the identity used by
//! all masks and labelings downstream.

pub mod projection;

use std::collections::HashSet;

use nalgebra::{Matrix3, Matrix4, Point3};

use crate::error::{Error, Result};

/// A scanned scene: positions in meters and 8-bit colors.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCloud {
    scene_id: String,
    positions: Vec<Point3<f64>>,
    colors: Vec<[u8; 3]>,
}

impl SceneCloud {
    pub fn new(
        scene_id: impl Into<String>,
        positions: Vec<Point3<f64>>,
        colors: Vec<[u8; 3]>,
    ) -> Result<Self> {
        let mut violations = Vec::new();
        if positions.is_empty() {
            violations.push("scene cloud has no points".to_string());
        }
        if colors.len() != positions.len() {
            violations.push(format!(
                "{} colors for {} points",
                colors.len(),
                positions.len()
            ));
        }
        if let Some(n) = positions
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            violations.push(format!("point {n} has a non-finite coordinate"));
        }
        if !violations.is_empty() {
            return Err(Error::Invariant(violations));
        }
        Ok(SceneCloud {
            scene_id: scene_id.into(),
            positions,
            colors,
        })
    }

    /// Builds a cloud with uniform gray color.
    pub fn from_positions(scene_id: impl Into<String>, positions: Vec<Point3<f64>>) -> Result<Self> {
        let colors = vec![[128, 128, 128]; positions.len()];
        Self::new(scene_id, positions, colors)
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3<f64>] {
        &self.positions
    }

    pub fn position(&self, n: usize) -> &Point3<f64> {
        &self.positions[n]
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }
}

/// A 16-bit depth image in millimeters; zero marks an invalid reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthRaster {
    height: usize,
    width: usize,
    data: Vec<u16>,
}

impl DepthRaster {
    pub fn new(height: usize, width: usize, data: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "depth raster {height}x{width} with {} samples",
                data.len()
            )));
        }
        Ok(DepthRaster {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }

    /// Depth at `(row, col)` in meters, `None` where the sensor had no reading.
    #[inline]
    pub fn meters(&self, row: usize, col: usize) -> Option<f64> {
        match self.get(row, col) {
            0 => None,
            mm => Some(f64::from(mm) / 1000.0),
        }
    }
}

/// Pose and calibration of one RGB-D frame.
///
/// `extrinsic` maps world coordinates to camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub frame_id: u32,
    intrinsic: Matrix3<f64>,
    extrinsic: Matrix4<f64>,
    depth: DepthRaster,
    rgb_size: (usize, usize),
}

const ROTATION_TOLERANCE: f64 = 1e-6;

impl CameraFrame {
    pub fn new(
        frame_id: u32,
        intrinsic: Matrix3<f64>,
        extrinsic: Matrix4<f64>,
        depth: DepthRaster,
        rgb_size: (usize, usize),
    ) -> Result<Self> {
        let mut violations = Vec::new();
        let k = &intrinsic;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            violations.push(format!("frame {frame_id}: intrinsic focal entries must be positive"));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            violations.push(format!("frame {frame_id}: intrinsic is not upper-triangular"));
        }
        if !intrinsic.iter().chain(extrinsic.iter()).all(|v| v.is_finite()) {
            violations.push(format!("frame {frame_id}: non-finite camera matrix entry"));
        }
        let rot = extrinsic.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if ortho > ROTATION_TOLERANCE || (rot.determinant() - 1.0).abs() > ROTATION_TOLERANCE {
            violations.push(format!(
                "frame {frame_id}: extrinsic rotation block is not a proper rotation"
            ));
        }
        if rgb_size.0 == 0 || rgb_size.1 == 0 {
            violations.push(format!("frame {frame_id}: empty rgb size"));
        }
        if !violations.is_empty() {
            return Err(Error::Invariant(violations));
        }
        Ok(CameraFrame {
            frame_id,
            intrinsic,
            extrinsic,
            depth,
            rgb_size,
        })
    }

    pub fn intrinsic(&self) -> &Matrix3<f64> {
        &self.intrinsic
    }

    pub fn extrinsic(&self) -> &Matrix4<f64> {
        &self.extrinsic
    }

    pub fn depth(&self) -> &DepthRaster {
        &self.depth
    }

    /// `(rows, cols)` of the color image the intrinsic refers to.
    pub fn rgb_size(&self) -> (usize, usize) {
        self.rgb_size
    }
}

/// Maps an integer pixel coordinate between two resolutions of the same image.
#[inline]
pub(crate) fn rescale_index(px: usize, from: usize, to: usize) -> usize {
    if from == to {
        px
    } else {
        (px * to / from).min(to - 1)
    }
}

/// A dense per-pixel embedding image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub frame_id: u32,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        frame_id: u32,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "feature map {height}x{width}x{channels} with {} values",
                data.len()
            )));
        }
        Ok(FeatureMap {
            frame_id,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Embedding under an RGB pixel of a `rgb_size` image.
    #[inline]
    pub fn at_rgb(&self, pixel: projection::Pixel, rgb_size: (usize, usize)) -> &[f32] {
        self.at(
            rescale_index(pixel.row as usize, rgb_size.0, self.height),
            rescale_index(pixel.col as usize, rgb_size.1, self.width),
        )
    }
}

/// Text embeddings of the scene-level class list.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbeddings {
    classes: Vec<String>,
    channels: usize,
    data: Vec<f32>,
}

impl LabelEmbeddings {
    pub fn new(classes: Vec<String>, channels: usize, data: Vec<f32>) -> Result<Self> {
        let mut violations = Vec::new();
        if classes.is_empty() {
            violations.push("label set is empty".to_string());
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(c.as_str()) {
                violations.push(format!("duplicate class name `{c}`"));
            }
        }
        if channels == 0 || data.len() != classes.len() * channels {
            violations.push(format!(
                "label embeddings hold {} values for {} classes x {channels} channels",
                data.len(),
                classes.len()
            ));
        }
        if !violations.is_empty() {
            return Err(Error::Invariant(violations));
        }
        Ok(LabelEmbeddings {
            classes,
            channels,
            data,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.data[k * self.channels..(k + 1) * self.channels]
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }
}

/// Per-point, per-class similarity scores. Rows flagged featureless carry no
/// meaningful values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    num_classes: usize,
    data: Vec<f32>,
    featureless: Vec<bool>,
}

impl ScoreMatrix {
    pub fn new(num_classes: usize, data: Vec<f32>, featureless: Vec<bool>) -> Result<Self> {
        if num_classes == 0 || data.len() != featureless.len() * num_classes {
            return Err(Error::DimensionMismatch(format!(
                "score matrix with {} values for {} points x {num_classes} classes",
                data.len(),
                featureless.len()
            )));
        }
        for (n, flag) in featureless.iter().enumerate() {
            let row = &data[n * num_classes..(n + 1) * num_classes];
            if !flag && !row.iter().all(|v| v.is_finite()) {
                return Err(Error::invariant(format!("score row {n} is not finite")));
            }
        }
        Ok(ScoreMatrix {
            num_classes,
            data,
            featureless,
        })
    }

    pub fn num_points(&self) -> usize {
        self.featureless.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, n: usize) -> &[f32] {
        &self.data[n * self.num_classes..(n + 1) * self.num_classes]
    }

    pub fn get(&self, n: usize, k: usize) -> f32 {
        self.data[n * self.num_classes + k]
    }

    pub fn is_featureless(&self, n: usize) -> bool {
        self.featureless[n]
    }

    pub fn featureless(&self) -> &[bool] {
        &self.featureless
    }
}

/// A non-empty, strictly increasing set of point indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointMask(Vec<u32>);

impl PointMask {
    /// Wraps indices that are already strictly increasing.
    pub fn from_sorted(indices: Vec<u32>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invariant("point mask is empty"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invariant("point mask indices are not strictly increasing"));
        }
        Ok(PointMask(indices))
    }

    /// Sorts and deduplicates; `None` if nothing remains.
    pub fn from_unsorted(mut indices: Vec<u32>) -> Option<Self> {
        indices.sort_unstable();
        indices.dedup();
        (!indices.is_empty()).then_some(PointMask(indices))
    }

    pub(crate) fn from_sorted_unchecked(indices: Vec<u32>) -> Self {
        debug_assert!(!indices.is_empty() && indices.windows(2).all(|w| w[0] < w[1]));
        PointMask(indices)
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> u32 {
        self.0[0]
    }

    pub fn last(&self) -> u32 {
        self.0[self.0.len() - 1]
    }

    pub fn contains(&self, n: u32) -> bool {
        self.0.binary_search(&n).is_ok()
    }

    pub fn intersection_len(&self, other: &PointMask) -> usize {
        let (mut i, mut j, mut count) = (0, 0, 0);
        let (a, b) = (&self.0, &other.0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        count
    }

    pub fn intersection(&self, other: &PointMask) -> Option<PointMask> {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.0, &other.0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        (!out.is_empty()).then_some(PointMask(out))
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

/// Per-point instance ids; [`InstanceLabeling::UNASSIGNED`] marks unlabeled points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabeling {
    ids: Vec<i32>,
}

impl InstanceLabeling {
    pub const UNASSIGNED: i32 = -1;

    pub fn new(ids: Vec<i32>) -> Result<Self> {
        if let Some(n) = ids.iter().position(|&id| id < Self::UNASSIGNED) {
            return Err(Error::invariant(format!(
                "instance id {} at point {n} is below the unassigned sentinel",
                ids[n]
            )));
        }
        Ok(InstanceLabeling { ids })
    }

    pub fn unassigned(num_points: usize) -> Self {
        InstanceLabeling {
            ids: vec![Self::UNASSIGNED; num_points],
        }
    }

    /// Labels the points of `masks[i]` with id `i`. Later masks win on overlap.
    pub fn from_masks(num_points: usize, masks: &[PointMask]) -> Self {
        let mut ids = vec![Self::UNASSIGNED; num_points];
        for (i, mask) in masks.iter().enumerate() {
            for &n in mask.indices() {
                ids[n as usize] = i as i32;
            }
        }
        InstanceLabeling { ids }
    }

    pub fn ids(&self) -> &[i32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_assigned(&self) -> usize {
        self.ids.iter().filter(|&&id| id >= 0).count()
    }

    /// One mask per distinct non-negative id, in ascending id order.
    pub fn masks(&self) -> Vec<(i32, PointMask)> {
        let mut pairs: Vec<(i32, u32)> = self
            .ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id >= 0)
            .map(|(n, &id)| (id, n as u32))
            .collect();
        pairs.sort_unstable();
        let mut out: Vec<(i32, PointMask)> = Vec::new();
        let mut current: Option<(i32, Vec<u32>)> = None;
        for (id, n) in pairs {
            match &mut current {
                Some((cid, members)) if *cid == id => members.push(n),
                _ => {
                    if let Some((cid, members)) = current.take() {
                        out.push((cid, PointMask::from_sorted_unchecked(members)));
                    }
                    current = Some((id, vec![n]));
                }
            }
        }
        if let Some((cid, members)) = current {
            out.push((cid, PointMask::from_sorted_unchecked(members)));
        }
        out
    }

    /// Relabels instances `0..R` in order of their smallest member index.
    pub fn canonicalize(&self) -> InstanceLabeling {
        let mut remap = std::collections::HashMap::new();
        let ids = self
            .ids
            .iter()
            .map(|&id| {
                if id < 0 {
                    Self::UNASSIGNED
                } else {
                    let next = remap.len() as i32;
                    *remap.entry(id).or_insert(next)
                }
            })
            .collect();
        InstanceLabeling { ids }
    }

    pub fn into_inner(self) -> Vec<i32> {
        self.ids
    }
}

/// Per-point class ids in `[-1, K)`; [`SemanticLabeling::IGNORE`] marks unlabeled points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticLabeling {
    classes: Vec<i32>,
}

impl SemanticLabeling {
    pub const IGNORE: i32 = -1;

    pub fn new(classes: Vec<i32>, num_classes: usize) -> Result<Self> {
        if let Some(n) = classes
            .iter()
            .position(|&c| c < Self::IGNORE || c >= num_classes as i32)
        {
            return Err(Error::invariant(format!(
                "class id {} at point {n} outside [-1, {num_classes})",
                classes[n]
            )));
        }
        Ok(SemanticLabeling { classes })
    }

    pub(crate) fn from_vec_unchecked(classes: Vec<i32>) -> Self {
        SemanticLabeling { classes }
    }

    pub fn ignored(num_points: usize) -> Self {
        SemanticLabeling {
            classes: vec![Self::IGNORE; num_points],
        }
    }

    pub fn classes(&self) -> &[i32] {
        &self.classes
    }

    pub fn get(&self, n: usize) -> i32 {
        self.classes[n]
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn num_labeled(&self) -> usize {
        self.classes.iter().filter(|&&c| c >= 0).count()
    }

    pub fn into_inner(self) -> Vec<i32> {
        self.classes
    }
}
