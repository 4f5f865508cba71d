//! Mask guidance: superpoint prompts and multi-view voting of external
//! prompt-mask rasters into fine instance masks.
//!
//! Prompt masks are produced outside this crate. The exchange contract is:
//! prompts go out as `frame_id prompt_id row col` text lines, and for every
//! frame one int32 raster comes back holding, per pixel, the prompt id whose
//! mask covers it or -1. Overlapping masks must be resolved by the producer.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::scene::projection::{project_cloud, visible_in_frame, Pixel};
use crate::scene::{rescale_index, CameraFrame, InstanceLabeling, PointMask, SceneCloud};
use crate::spatial::{arr, KdTree};

/// Assignment of every point to one of `count` superpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpointPartition {
    ids: Vec<u32>,
    count: usize,
}

impl SuperpointPartition {
    /// Validates that ids cover `0..count` with no gaps.
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        let count = ids.iter().max().map_or(0, |&m| m as usize + 1);
        let mut used = vec![false; count];
        for &id in &ids {
            used[id as usize] = true;
        }
        if let Some(gap) = used.iter().position(|u| !u) {
            return Err(Error::invariant(format!("superpoint id {gap} is unused")));
        }
        Ok(SuperpointPartition { ids, count })
    }

    /// Renumbers arbitrary labels to `0..M` by first appearance.
    pub fn from_labels(labels: &[u32]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let ids = labels
            .iter()
            .map(|l| {
                let next = remap.len() as u32;
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        SuperpointPartition {
            ids,
            count: remap.len(),
        }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Member lists per superpoint, each ascending.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.count];
        for (n, &id) in self.ids.iter().enumerate() {
            out[id as usize].push(n as u32);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OversegmentParams {
    pub angle_threshold_deg: f64,
    pub knn_normals: usize,
    pub radius: f64,
    /// Points whose surface variation `λ0 / (λ0+λ1+λ2)` exceeds this do not
    /// seed or expand regions; they attach to the nearest grown region.
    pub max_surface_variation: f64,
}

impl Default for OversegmentParams {
    fn default() -> Self {
        OversegmentParams {
            angle_threshold_deg: 30.0,
            knn_normals: 16,
            radius: 0.04,
            max_surface_variation: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oversegmentation {
    pub partition: SuperpointPartition,
    pub normals: Vec<Vector3<f64>>,
    /// Points whose neighborhood had rank < 2.
    pub degenerate: usize,
}

struct NormalEstimate {
    normal: Vector3<f64>,
    variation: f64,
    degenerate: bool,
}

fn estimate_normal(cloud: &SceneCloud, tree: &KdTree, n: usize, k: usize) -> NormalEstimate {
    let neighbors = tree.nearest(&arr(cloud.position(n)), k);
    let count = neighbors.len() as f64;
    let mean = neighbors
        .iter()
        .fold(Vector3::zeros(), |acc, &(i, _)| acc + cloud.position(i as usize).coords)
        / count;
    let mut cov = Matrix3::zeros();
    for &(i, _) in &neighbors {
        let d = cloud.position(i as usize).coords - mean;
        cov += d * d.transpose();
    }
    cov /= count;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    );
    let total = l0 + l1 + l2;
    if total <= 0.0 || l1 <= 1e-12 * total {
        return NormalEstimate {
            normal: Vector3::z(),
            variation: 1.0,
            degenerate: true,
        };
    }
    NormalEstimate {
        normal: eig.eigenvectors.column(order[0]).normalize(),
        variation: l0 / total,
        degenerate: false,
    }
}

/// Normal-based region growing.
///
/// Normals come from PCA over the `knn_normals` nearest points. Regions are
/// seeded from planar points in ascending index order and grow across
/// `radius` neighborhoods while a neighbor's (unoriented) normal stays within
/// `angle_threshold_deg` of the seed's. Non-planar points join a region during
/// growth but never extend it; any point left over afterwards attaches to the
/// nearest point grown in that first pass, and whatever remains is grown the
/// same way without the planarity requirement.
pub fn oversegment(cloud: &SceneCloud, params: &OversegmentParams) -> Result<Oversegmentation> {
    let n = cloud.len();
    if n < params.knn_normals {
        return Err(Error::invariant(format!(
            "oversegmentation needs at least {} points, scene has {n}",
            params.knn_normals
        )));
    }
    let tree = KdTree::build_all(cloud.positions());
    let estimates: Vec<NormalEstimate> = (0..n)
        .map(|i| estimate_normal(cloud, &tree, i, params.knn_normals))
        .collect();
    let degenerate = estimates.iter().filter(|e| e.degenerate).count();
    if degenerate > 0 {
        log::warn!("{degenerate} point(s) had degenerate normal neighborhoods");
    }
    let cos_limit = params.angle_threshold_deg.to_radians().cos();
    let planar: Vec<bool> = estimates
        .iter()
        .map(|e| !e.degenerate && e.variation <= params.max_surface_variation)
        .collect();

    const NONE: u32 = u32::MAX;
    let mut labels = vec![NONE; n];
    let mut next = 0u32;
    let mut grow = |labels: &mut Vec<u32>, seed: usize, require_planar: bool| {
        let seed_normal = estimates[seed].normal;
        labels[seed] = next;
        let mut stack = vec![seed];
        while let Some(cur) = stack.pop() {
            if require_planar && !planar[cur] {
                continue;
            }
            for nb in tree.within(&arr(cloud.position(cur)), params.radius) {
                let nb = nb as usize;
                if labels[nb] == NONE && estimates[nb].normal.dot(&seed_normal).abs() >= cos_limit {
                    labels[nb] = next;
                    stack.push(nb);
                }
            }
        }
        next += 1;
    };

    for seed in 0..n {
        if labels[seed] == NONE && planar[seed] {
            grow(&mut labels, seed, true);
        }
    }

    let first_pass = labels.clone();
    let grown = KdTree::build(cloud.positions(), (0..n as u32).filter(|&i| first_pass[i as usize] != NONE));
    for i in 0..n {
        if labels[i] == NONE {
            if let Some(&(nearest, _)) = grown
                .nearest(&arr(cloud.position(i)), 1)
                .first()
                .filter(|&&(_, d2)| d2 <= params.radius * params.radius)
            {
                labels[i] = first_pass[nearest as usize];
            }
        }
    }

    for seed in 0..n {
        if labels[seed] == NONE {
            grow(&mut labels, seed, false);
        }
    }

    Ok(Oversegmentation {
        partition: SuperpointPartition::from_labels(&labels),
        normals: estimates.into_iter().map(|e| e.normal).collect(),
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Centroid {
    pub prompt_id: u32,
    pub point: u32,
}

/// For each superpoint, the member closest to the member mean (lowest index
/// on ties).
pub fn superpoint_centroids(cloud: &SceneCloud, partition: &SuperpointPartition) -> Vec<Centroid> {
    partition
        .members()
        .iter()
        .enumerate()
        .map(|(m, members)| {
            let sum = members
                .iter()
                .fold(Vector3::zeros(), |acc, &i| acc + cloud.position(i as usize).coords);
            let mean = Point3::from(sum / members.len() as f64);
            let mut best = (f64::INFINITY, u32::MAX);
            for &i in members {
                let d2 = crate::spatial::dist2(&arr(&mean), &arr(cloud.position(i as usize)));
                if d2 < best.0 {
                    best = (d2, i);
                }
            }
            Centroid {
                prompt_id: m as u32,
                point: best.1,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PromptEntry {
    pub frame_id: u32,
    pub prompt_id: u32,
    pub pixel: Pixel,
}

/// Prompt pixels per frame, sorted by `(frame_id, prompt_id)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptSet {
    pub entries: Vec<PromptEntry>,
}

impl PromptSet {
    /// One `frame_id prompt_id row col` line per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 16);
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {} {}", e.frame_id, e.prompt_id, e.pixel.row, e.pixel.col);
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for line in text.lines() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !fields.is_empty() {
                let parse = |s: &str| {
                    s.parse::<u32>()
                        .map_err(|e| Error::parse(origin, offset, format!("bad prompt field `{s}`: {e}")))
                };
                if fields.len() != 4 {
                    return Err(Error::parse(origin, offset, "expected `frame_id prompt_id row col`"));
                }
                entries.push(PromptEntry {
                    frame_id: parse(fields[0])?,
                    prompt_id: parse(fields[1])?,
                    pixel: Pixel {
                        row: parse(fields[2])?,
                        col: parse(fields[3])?,
                    },
                });
            }
            offset += line.len() as u64 + 1;
        }
        Ok(PromptSet { entries })
    }

    pub fn count_for_frame(&self, frame_id: u32) -> usize {
        self.entries.iter().filter(|e| e.frame_id == frame_id).count()
    }
}

/// Projects each centroid into every frame where it passes the visibility test.
pub fn project_prompts(
    cloud: &SceneCloud,
    centroids: &[Centroid],
    frames: &[CameraFrame],
    depth_tolerance: f64,
) -> PromptSet {
    let mut entries = Vec::new();
    for frame in frames {
        for c in centroids {
            if let Some(pixel) = visible_in_frame(cloud.position(c.point as usize), frame, depth_tolerance) {
                entries.push(PromptEntry {
                    frame_id: frame.frame_id,
                    prompt_id: c.prompt_id,
                    pixel,
                });
            }
        }
    }
    entries.sort_unstable();
    PromptSet { entries }
}

/// Per-pixel prompt ids of one frame; -1 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptMaskRaster {
    pub frame_id: u32,
    height: usize,
    width: usize,
    data: Vec<i32>,
}

impl PromptMaskRaster {
    pub fn new(frame_id: u32, height: usize, width: usize, data: Vec<i32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "prompt mask {height}x{width} with {} pixels",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v < -1) {
            return Err(Error::invariant(format!(
                "frame {frame_id}: prompt mask holds invalid id {bad}"
            )));
        }
        Ok(PromptMaskRaster {
            frame_id,
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

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn max_id(&self) -> i32 {
        self.data.iter().copied().max().unwrap_or(-1)
    }

    #[inline]
    pub fn at_rgb(&self, pixel: Pixel, rgb_size: (usize, usize)) -> i32 {
        let r = rescale_index(pixel.row as usize, rgb_size.0, self.height);
        let c = rescale_index(pixel.col as usize, rgb_size.1, self.width);
        self.data[r * self.width + c]
    }
}

/// Assigns each point the prompt id it was covered by most often across
/// frames (lowest id on ties). Points never covered stay unassigned.
///
/// `rasters[i]` belongs to `frames[i]`. Returns the fine masks in ascending
/// prompt id order together with the labeling they induce, whose ids are the
/// prompt ids.
pub fn vote_fine_masks(
    cloud: &SceneCloud,
    frames: &[CameraFrame],
    rasters: &[PromptMaskRaster],
    depth_tolerance: f64,
) -> Result<(Vec<PointMask>, InstanceLabeling)> {
    if frames.len() != rasters.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames but {} prompt-mask rasters",
            frames.len(),
            rasters.len()
        )));
    }
    let mut votes: Vec<(u32, i32)> = Vec::new();
    for (frame, raster) in frames.iter().zip(rasters) {
        if frame.frame_id != raster.frame_id {
            return Err(Error::invariant(format!(
                "prompt mask for frame {} paired with frame {}",
                raster.frame_id, frame.frame_id
            )));
        }
        for (point, px) in project_cloud(cloud, frame, depth_tolerance) {
            let id = raster.at_rgb(px, frame.rgb_size());
            if id >= 0 {
                votes.push((point, id));
            }
        }
    }
    votes.sort_unstable();

    let mut ids = vec![InstanceLabeling::UNASSIGNED; cloud.len()];
    let mut i = 0;
    while i < votes.len() {
        let point = votes[i].0;
        let mut best = (0usize, InstanceLabeling::UNASSIGNED);
        while i < votes.len() && votes[i].0 == point {
            let id = votes[i].1;
            let mut run = 0;
            while i < votes.len() && votes[i] == (point, id) {
                run += 1;
                i += 1;
            }
            // ids arrive ascending, so strict > keeps the lowest on ties
            if run > best.0 {
                best = (run, id);
            }
        }
        ids[point as usize] = best.1;
    }
    let labeling = InstanceLabeling::new(ids)?;
    let masks = labeling.masks().into_iter().map(|(_, m)| m).collect();
    Ok((masks, labeling))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::DepthRaster;
    use nalgebra::Matrix4;
    use std::collections::HashMap;

    fn plane_grid(nx: usize, ny: usize, s: f64, f: impl Fn(f64, f64) -> Point3<f64>) -> Vec<Point3<f64>> {
        let mut pts = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                pts.push(f(i as f64 * s, j as f64 * s));
            }
        }
        pts
    }

    #[test]
    fn flat_plane_is_one_superpoint() {
        let pts = plane_grid(40, 25, 0.02, |x, y| Point3::new(x, y, 0.0));
        let cloud = SceneCloud::from_positions("p", pts).unwrap();
        let seg = oversegment(&cloud, &OversegmentParams::default()).unwrap();
        assert_eq!(seg.partition.count(), 1);
        assert_eq!(seg.degenerate, 0);
    }

    #[test]
    fn separated_parallel_planes() {
        let mut pts = plane_grid(20, 20, 0.02, |x, y| Point3::new(x, y, 0.0));
        pts.extend(plane_grid(20, 20, 0.02, |x, y| Point3::new(x, y, 0.2)));
        let cloud = SceneCloud::from_positions("p", pts).unwrap();
        let seg = oversegment(&cloud, &OversegmentParams::default()).unwrap();
        assert_eq!(seg.partition.count(), 2);
        assert!(seg.partition.ids()[..400].iter().all(|&i| i == seg.partition.ids()[0]));
    }

    #[test]
    fn orthogonal_planes_sharing_an_edge() {
        let mut pts = plane_grid(25, 25, 0.02, |x, y| Point3::new(x, y, 0.0));
        pts.extend(plane_grid(25, 25, 0.02, |y, z| Point3::new(0.0, y, z + 0.02)));
        let cloud = SceneCloud::from_positions("p", pts).unwrap();
        let seg = oversegment(&cloud, &OversegmentParams::default()).unwrap();
        assert_eq!(seg.partition.count(), 2);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<_> = (0..20).map(|i| Point3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let cloud = SceneCloud::from_positions("l", pts).unwrap();
        let seg = oversegment(&cloud, &OversegmentParams::default()).unwrap();
        assert_eq!(seg.degenerate, 20);
        assert_eq!(seg.normals[0], Vector3::z());
        assert_eq!(seg.partition.len(), 20);
        let tiny = SceneCloud::from_positions("t", vec![Point3::origin(); 3]).unwrap();
        assert!(oversegment(&tiny, &OversegmentParams::default()).is_err());
    }

    #[test]
    fn partition_validation() {
        assert!(SuperpointPartition::new(vec![0, 2]).is_err());
        let p = SuperpointPartition::new(vec![1, 0, 1]).unwrap();
        assert_eq!(p.count(), 2);
        assert_eq!(p.members(), vec![vec![1], vec![0, 2]]);
        assert_eq!(SuperpointPartition::from_labels(&[7, 7, 3]).ids(), &[0, 0, 1]);
    }

    #[test]
    fn centroid_rules() {
        let square = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(5.0, 0.0, 0.0),
            Point3::new(7.0, 0.0, 0.0),
            Point3::new(6.0, 0.0, 0.0),
        ];
        let cloud = SceneCloud::from_positions("c", square).unwrap();
        let sp = SuperpointPartition::new(vec![0, 0, 0, 0, 1, 1, 1]).unwrap();
        let c = superpoint_centroids(&cloud, &sp);
        assert_eq!(c, vec![Centroid { prompt_id: 0, point: 0 }, Centroid { prompt_id: 1, point: 6 }]);
    }

    fn frame(id: u32, depth_mm: u16) -> CameraFrame {
        let k = Matrix3::new(10.0, 0.0, 5.0, 0.0, 10.0, 5.0, 0.0, 0.0, 1.0);
        let depth = DepthRaster::new(10, 10, vec![depth_mm; 100]).unwrap();
        CameraFrame::new(id, k, Matrix4::identity(), depth, (10, 10)).unwrap()
    }

    #[test]
    fn prompts_skip_hidden_centroids() {
        let cloud = SceneCloud::from_positions("c", vec![Point3::new(0.0, 0.0, 1.0), Point3::new(0.0, 0.0, -1.0)]).unwrap();
        let centroids = vec![Centroid { prompt_id: 0, point: 0 }, Centroid { prompt_id: 1, point: 1 }];
        let frames = vec![frame(3, 1000), frame(1, 1000)];
        let set = project_prompts(&cloud, &centroids, &frames, 0.05);
        assert_eq!(set.entries.len(), 2);
        assert_eq!(set.entries[0].frame_id, 1);
        assert!(set.entries.iter().all(|e| e.prompt_id == 0 && e.pixel == Pixel { row: 5, col: 5 }));
        let text = set.to_text();
        assert_eq!(text, "1 0 5 5\n3 0 5 5\n");
        assert_eq!(PromptSet::from_text(&text, "t").unwrap(), set);
        assert!(PromptSet::from_text("1 2 3\n", "t").is_err());
    }

    fn raster(id: u32, value: i32) -> PromptMaskRaster {
        PromptMaskRaster::new(id, 10, 10, vec![value; 100]).unwrap()
    }

    #[test]
    fn voting_majority_and_ties() {
        let cloud = SceneCloud::from_positions("v", vec![Point3::new(0.0, 0.0, 1.0)]).unwrap();
        let frames: Vec<_> = (0..3).map(|i| frame(i, 1000)).collect();
        let (masks, lab) = vote_fine_masks(&cloud, &frames[..1], &[raster(0, 7)], 0.05).unwrap();
        assert_eq!(lab.ids(), &[7]);
        assert_eq!(masks.len(), 1);
        let (_, lab) = vote_fine_masks(&cloud, &frames, &[raster(0, 2), raster(1, 5), raster(2, 2)], 0.05).unwrap();
        assert_eq!(lab.ids(), &[2]);
        let (_, lab) = vote_fine_masks(&cloud, &frames[..2], &[raster(0, 9), raster(1, 3)], 0.05).unwrap();
        assert_eq!(lab.ids(), &[3]);
        let (masks, lab) = vote_fine_masks(&cloud, &frames[..1], &[raster(0, -1)], 0.05).unwrap();
        assert_eq!(lab.ids(), &[-1]);
        assert!(masks.is_empty());
        assert!(vote_fine_masks(&cloud, &frames, &[raster(0, 1)], 0.05).is_err());
    }

    #[test]
    fn voting_matches_counting_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..300)
            .map(|_| Point3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), 1.0))
            .collect();
        let cloud = SceneCloud::from_positions("v", pts).unwrap();
        let frames: Vec<_> = (0..6).map(|i| frame(i, 1000)).collect();
        let rasters: Vec<_> = (0..6)
            .map(|i| PromptMaskRaster::new(i, 10, 10, (0..100).map(|_| rng.random_range(-1..4)).collect()).unwrap())
            .collect();
        let (_, lab) = vote_fine_masks(&cloud, &frames, &rasters, 0.05).unwrap();
        let mut rev_frames = frames.clone();
        let mut rev_rasters = rasters.clone();
        rev_frames.reverse();
        rev_rasters.reverse();
        let (_, lab_rev) = vote_fine_masks(&cloud, &rev_frames, &rev_rasters, 0.05).unwrap();
        assert_eq!(lab, lab_rev);
        for n in 0..cloud.len() {
            let mut counts: HashMap<i32, usize> = HashMap::new();
            for (f, r) in frames.iter().zip(&rasters) {
                if let Some(px) = visible_in_frame(cloud.position(n), f, 0.05) {
                    let id = r.data()[px.row as usize * 10 + px.col as usize];
                    if id >= 0 {
                        *counts.entry(id).or_default() += 1;
                    }
                }
            }
            let expected = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map_or(-1, |(&id, _)| id);
            assert_eq!(lab.ids()[n], expected);
        }
    }
}
