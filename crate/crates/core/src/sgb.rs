//! Semantic guidance: lift per-frame embeddings onto points, score them
//! against class embeddings and group same-class neighbors into coarse
//! instance masks.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scene::projection::project_cloud;
use crate::scene::{
    CameraFrame, FeatureMap, LabelEmbeddings, PointMask, SceneCloud, ScoreMatrix, SemanticLabeling,
};
use crate::spatial::{arr, KdTree};

/// Mean multi-view embedding of each point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    channels: usize,
    data: Vec<f32>,
    featureless: Vec<bool>,
}

impl PointFeatures {
    pub fn new(channels: usize, data: Vec<f32>, featureless: Vec<bool>) -> Result<Self> {
        if data.len() != featureless.len() * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} points x {channels} channels",
                data.len(),
                featureless.len()
            )));
        }
        Ok(PointFeatures {
            channels,
            data,
            featureless,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_points(&self) -> usize {
        self.featureless.len()
    }

    pub fn row(&self, n: usize) -> &[f32] {
        &self.data[n * self.channels..(n + 1) * self.channels]
    }

    pub fn is_featureless(&self, n: usize) -> bool {
        self.featureless[n]
    }

    pub fn num_featureless(&self) -> usize {
        self.featureless.iter().filter(|&&f| f).count()
    }
}

/// Frame visiting order: ascending `frame_id`, stable for duplicates.
pub(crate) fn frame_order(frames: &[CameraFrame]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by_key(|&i| frames[i].frame_id);
    order
}

/// Averages, per point, the feature vectors under its visible pixels.
///
/// `maps[i]` belongs to `frames[i]`. Sums run in ascending `frame_id` order
/// in `f64`, so the result is reproducible bit for bit. When `frames` is
/// empty the channel count is taken from `channels_hint`.
pub fn accumulate_features(
    cloud: &SceneCloud,
    frames: &[CameraFrame],
    maps: &[FeatureMap],
    depth_tolerance: f64,
    channels_hint: usize,
) -> Result<PointFeatures> {
    if frames.len() != maps.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames but {} feature maps",
            frames.len(),
            maps.len()
        )));
    }
    let channels = maps.first().map_or(channels_hint, FeatureMap::channels);
    if let Some(bad) = maps.iter().find(|m| m.channels() != channels) {
        return Err(Error::DimensionMismatch(format!(
            "feature map of frame {} has {} channels, expected {channels}",
            bad.frame_id,
            bad.channels()
        )));
    }

    let n = cloud.len();
    let mut sums = vec![0f64; n * channels];
    let mut counts = vec![0u32; n];
    for i in frame_order(frames) {
        let (frame, map) = (&frames[i], &maps[i]);
        for (point, px) in project_cloud(cloud, frame, depth_tolerance) {
            let feat = map.at_rgb(px, frame.rgb_size());
            let acc = &mut sums[point as usize * channels..(point as usize + 1) * channels];
            for (a, &f) in acc.iter_mut().zip(feat) {
                *a += f64::from(f);
            }
            counts[point as usize] += 1;
        }
    }

    let mut data = vec![0f32; n * channels];
    let mut featureless = vec![false; n];
    for p in 0..n {
        if counts[p] == 0 {
            featureless[p] = true;
            continue;
        }
        let c = f64::from(counts[p]);
        for ch in 0..channels {
            data[p * channels + ch] = (sums[p * channels + ch] / c) as f32;
        }
        if !data[p * channels..(p + 1) * channels].iter().all(|v| v.is_finite()) {
            featureless[p] = true;
        }
    }
    PointFeatures::new(channels, data, featureless)
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Point-to-class similarity `F̂_3D · F̂_1Dᵀ`.
///
/// With `normalize`, both sides are L2-normalized row-wise first; a point
/// row with zero norm is flagged featureless, a zero class row scores 0.
pub fn compute_scores(features: &PointFeatures, labels: &LabelEmbeddings, normalize: bool) -> Result<ScoreMatrix> {
    let channels = features.channels();
    if channels != labels.channels() {
        return Err(Error::DimensionMismatch(format!(
            "point features have {channels} channels, label embeddings {}",
            labels.channels()
        )));
    }
    let k = labels.num_classes();
    let label_rows: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let row = labels.row(c);
            let scale = if normalize {
                let norm = l2_norm(row);
                if norm > 0.0 {
                    1.0 / norm
                } else {
                    0.0
                }
            } else {
                1.0
            };
            row.iter().map(|&v| f64::from(v) * scale).collect()
        })
        .collect();

    let n = features.num_points();
    let mut data = vec![0f32; n * k];
    let mut featureless = vec![false; n];
    for p in 0..n {
        if features.is_featureless(p) {
            featureless[p] = true;
            continue;
        }
        let row = features.row(p);
        let scale = if normalize {
            let norm = l2_norm(row);
            if norm == 0.0 {
                featureless[p] = true;
                continue;
            }
            1.0 / norm
        } else {
            1.0
        };
        for (c, lrow) in label_rows.iter().enumerate() {
            let dot: f64 = row.iter().zip(lrow).map(|(&f, &l)| f64::from(f) * scale * l).sum();
            data[p * k + c] = dot as f32;
        }
    }
    ScoreMatrix::new(k, data, featureless)
}

/// Row-wise argmax; ties go to the lower class index, featureless rows to IGNORE.
pub fn classify_points(scores: &ScoreMatrix) -> SemanticLabeling {
    let classes = (0..scores.num_points())
        .map(|p| {
            if scores.is_featureless(p) {
                return SemanticLabeling::IGNORE;
            }
            let row = scores.row(p);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best as i32
        })
        .collect();
    SemanticLabeling::from_vec_unchecked(classes)
}

/// Breadth-first grouping of foreground points.
///
/// Two points are linked when they share a class and lie within `radius` of
/// each other. Components smaller than `min_cluster_size` are dropped.
/// Masks come out disjoint and ordered by their smallest member.
pub fn bfs_group(
    cloud: &SceneCloud,
    semantics: &SemanticLabeling,
    radius: f64,
    min_cluster_size: usize,
    background_classes: &[i32],
) -> Vec<PointMask> {
    let labels = semantics.classes();
    let is_foreground =
        |n: usize| labels[n] != SemanticLabeling::IGNORE && !background_classes.contains(&labels[n]);
    let foreground: Vec<u32> = (0..cloud.len()).filter(|&n| is_foreground(n)).map(|n| n as u32).collect();
    let tree = KdTree::build(cloud.positions(), foreground.iter().copied());

    let mut visited = vec![false; cloud.len()];
    let mut queue = VecDeque::new();
    let mut masks = Vec::new();
    for &seed in &foreground {
        if visited[seed as usize] {
            continue;
        }
        let class = labels[seed as usize];
        visited[seed as usize] = true;
        queue.push_back(seed);
        let mut members = vec![seed];
        while let Some(anchor) = queue.pop_front() {
            tree.for_each_within(&arr(cloud.position(anchor as usize)), radius, |id, _| {
                let i = id as usize;
                if !visited[i] && labels[i] == class {
                    visited[i] = true;
                    members.push(id);
                    queue.push_back(id);
                }
            });
        }
        if members.len() >= min_cluster_size.max(1) {
            members.sort_unstable();
            masks.push(PointMask::from_sorted_unchecked(members));
        }
    }
    masks
}
