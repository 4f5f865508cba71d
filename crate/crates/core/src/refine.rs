//! Pseudo-label refinement.
//!
//! Instance side: coarse masks are kept or split by their overlap with fine
//! masks, then undersized instances are folded into a large neighbor.
//! Semantic side: per-class confidence selection followed by superpoint
//! majority propagation.

use std::collections::{BTreeMap, HashMap};

use crate::mgb::SuperpointPartition;
use crate::scene::{InstanceLabeling, PointMask, SceneCloud, ScoreMatrix, SemanticLabeling};
use crate::spatial::{arr, KdTree};

/// `|coarse_q ∩ fine_w|` for every pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u32>,
}

impl OverlapMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, q: usize, w: usize) -> u32 {
        self.data[q * self.cols + w]
    }

    pub fn row(&self, q: usize) -> &[u32] {
        &self.data[q * self.cols..(q + 1) * self.cols]
    }
}

/// Point-to-mask lookup, available only when the masks are pairwise disjoint.
fn disjoint_lookup(masks: &[PointMask]) -> Option<HashMap<u32, u32>> {
    let mut owner = HashMap::with_capacity(masks.iter().map(PointMask::len).sum());
    for (w, mask) in masks.iter().enumerate() {
        for &n in mask.indices() {
            if owner.insert(n, w as u32).is_some() {
                return None;
            }
        }
    }
    Some(owner)
}

pub fn overlap_matrix(coarse: &[PointMask], fine: &[PointMask]) -> OverlapMatrix {
    let (rows, cols) = (coarse.len(), fine.len());
    let mut data = vec![0u32; rows * cols];
    match disjoint_lookup(fine) {
        Some(owner) => {
            for (q, mask) in coarse.iter().enumerate() {
                for n in mask.indices() {
                    if let Some(&w) = owner.get(n) {
                        data[q * cols + w as usize] += 1;
                    }
                }
            }
        }
        None => {
            for (q, m) in coarse.iter().enumerate() {
                for (w, o) in fine.iter().enumerate() {
                    data[q * cols + w] = m.intersection_len(o) as u32;
                }
            }
        }
    }
    OverlapMatrix { rows, cols, data }
}

/// Keeps a coarse mask whole when its best fine-mask share exceeds
/// `threshold`, otherwise replaces it by its non-empty intersections with
/// the fine masks.
///
/// The share is `max_w A[q,w] / Σ_w A[q,w]`. A coarse mask touching no fine
/// mask is kept whole. Output order: coarse index, then fine index.
pub fn granularity_aware_assign(coarse: &[PointMask], fine: &[PointMask], threshold: f64) -> Vec<PointMask> {
    let overlap = overlap_matrix(coarse, fine);
    let mut ensemble = Vec::with_capacity(coarse.len());
    for (q, mask) in coarse.iter().enumerate() {
        let row = overlap.row(q);
        let total: u64 = row.iter().map(|&v| u64::from(v)).sum();
        let best = row.iter().copied().max().unwrap_or(0);
        if total == 0 || best as f64 / total as f64 > threshold {
            ensemble.push(mask.clone());
            continue;
        }
        for (w, fine_mask) in fine.iter().enumerate() {
            if row[w] > 0 {
                ensemble.extend(mask.intersection(fine_mask));
            }
        }
    }
    ensemble
}

/// Merges every instance with fewer than `min_size` points into its nearest
/// large neighbor.
///
/// Each point of a small instance links to its `knn_k` nearest points that
/// are assigned to a different instance. The small instance goes to the
/// instance with `min_size` or more points receiving the most links (lowest
/// mask index on ties); with no such instance it is left alone. All decisions
/// are taken against the entry labeling, so merges do not cascade. The result
/// is canonicalized (ids ordered by smallest member).
pub fn merge_small_instances(cloud: &SceneCloud, masks: &[PointMask], min_size: usize, knn_k: usize) -> InstanceLabeling {
    let labeling = InstanceLabeling::from_masks(cloud.len(), masks);
    let ids = labeling.ids();
    let sizes: Vec<usize> = masks.iter().map(PointMask::len).collect();
    let is_large = |m: usize| sizes[m] >= min_size;
    if sizes.iter().all(|&s| s >= min_size) || !sizes.iter().any(|&s| s >= min_size) || knn_k == 0 {
        return labeling.canonicalize();
    }

    let mut small: Vec<usize> = (0..masks.len()).filter(|&m| !is_large(m)).collect();
    small.sort_by_key(|&m| (sizes[m], masks[m].first()));

    let assigned = (0..cloud.len() as u32).filter(|&n| ids[n as usize] >= 0);
    let tree = KdTree::build(cloud.positions(), assigned);

    let mut target = vec![None; masks.len()];
    for &m in &small {
        let mut links: BTreeMap<usize, usize> = BTreeMap::new();
        for &n in masks[m].indices() {
            let neighbors = tree.nearest_filtered(&arr(cloud.position(n as usize)), knn_k, |j| {
                ids[j as usize] != m as i32
            });
            for (j, _) in neighbors {
                let owner = ids[j as usize] as usize;
                if is_large(owner) {
                    *links.entry(owner).or_default() += 1;
                }
            }
        }
        let mut best: Option<(usize, usize)> = None;
        for (&owner, &count) in &links {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((owner, count));
            }
        }
        target[m] = best.map(|(owner, _)| owner);
    }

    let mut merged = ids.to_vec();
    for (m, t) in target.iter().enumerate() {
        if let Some(t) = t {
            for &n in masks[m].indices() {
                merged[n as usize] = *t as i32;
            }
        }
    }
    InstanceLabeling::new(merged)
        .expect("ids come from mask indices")
        .canonicalize()
}

/// `ceil(alpha% · count)`, capped at `count`.
pub fn selection_quota(alpha_percent: f64, count: usize) -> usize {
    ((alpha_percent * count as f64 / 100.0).ceil() as usize).min(count)
}

/// Keeps, for every class, the `ceil(alpha%)` share of its points with the
/// highest score for that class (lower index wins ties). Everything else
/// becomes IGNORE.
pub fn semantic_select(scores: &ScoreMatrix, semantics: &SemanticLabeling, alpha_percent: f64) -> SemanticLabeling {
    let mut by_class: BTreeMap<i32, Vec<u32>> = BTreeMap::new();
    for (n, &c) in semantics.classes().iter().enumerate() {
        if c >= 0 && !scores.is_featureless(n) {
            by_class.entry(c).or_default().push(n as u32);
        }
    }
    let mut out = vec![SemanticLabeling::IGNORE; semantics.len()];
    for (class, mut members) in by_class {
        let k = class as usize;
        members.sort_by(|&a, &b| {
            scores
                .get(b as usize, k)
                .total_cmp(&scores.get(a as usize, k))
                .then(a.cmp(&b))
        });
        let keep = selection_quota(alpha_percent, members.len());
        for &n in &members[..keep] {
            out[n as usize] = class;
        }
    }
    SemanticLabeling::from_vec_unchecked(out)
}

/// Modal class of the selected labels (lowest class on ties), per superpoint,
/// spread to every member.
pub fn superpoint_propagate(selected: &SemanticLabeling, partition: &SuperpointPartition) -> SemanticLabeling {
    let num_classes = selected.classes().iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let m = partition.count();
    let mut counts = vec![0u32; m * num_classes];
    for (n, &c) in selected.classes().iter().enumerate() {
        if c >= 0 {
            counts[partition.ids()[n] as usize * num_classes + c as usize] += 1;
        }
    }
    let modal: Vec<i32> = (0..m)
        .map(|sp| {
            let row = &counts[sp * num_classes..(sp + 1) * num_classes];
            let mut best = (0u32, SemanticLabeling::IGNORE);
            for (c, &count) in row.iter().enumerate() {
                if count > best.0 {
                    best = (count, c as i32);
                }
            }
            best.1
        })
        .collect();
    SemanticLabeling::from_vec_unchecked(partition.ids().iter().map(|&sp| modal[sp as usize]).collect())
}

/// Modal non-IGNORE class of each instance's points; IGNORE if none.
pub fn assign_instance_classes(instances: &InstanceLabeling, semantics: &SemanticLabeling) -> BTreeMap<i32, i32> {
    let mut hist: BTreeMap<i32, BTreeMap<i32, usize>> = BTreeMap::new();
    for (&inst, &class) in instances.ids().iter().zip(semantics.classes()) {
        if inst < 0 {
            continue;
        }
        let h = hist.entry(inst).or_default();
        if class >= 0 {
            *h.entry(class).or_default() += 1;
        }
    }
    hist.into_iter()
        .map(|(inst, h)| {
            let mut best = (0usize, SemanticLabeling::IGNORE);
            for (class, count) in h {
                if count > best.0 {
                    best = (count, class);
                }
            }
            (inst, best.1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn mask(v: &[u32]) -> PointMask {
        PointMask::from_sorted(v.to_vec()).unwrap()
    }

    #[test]
    fn overlap_basics() {
        let m = mask(&[1, 2, 3]);
        let a = overlap_matrix(std::slice::from_ref(&m), std::slice::from_ref(&m));
        assert_eq!((a.rows(), a.cols(), a.get(0, 0)), (1, 1, 3));
        let z = overlap_matrix(&[mask(&[0, 1])], &[mask(&[2]), mask(&[3, 4])]);
        assert_eq!(z.row(0), &[0, 0]);
        // overlapping fine masks take the general path
        let o = overlap_matrix(&[mask(&[0, 1, 2])], &[mask(&[0, 1]), mask(&[1, 2, 5])]);
        assert_eq!(o.row(0), &[2, 2]);
    }

    #[test]
    fn keep_or_split() {
        let coarse = vec![mask(&(0..9).collect::<Vec<_>>())];
        let inside = vec![mask(&(0..20).collect::<Vec<_>>())];
        assert_eq!(granularity_aware_assign(&coarse, &inside, 0.4), coarse);
        let thirds = vec![mask(&[0, 1, 2]), mask(&[3, 4, 5]), mask(&[6, 7, 8])];
        assert_eq!(granularity_aware_assign(&coarse, &thirds, 0.4), thirds);
        // no fine evidence: kept
        assert_eq!(granularity_aware_assign(&coarse, &[mask(&[50])], 0.4), coarse);
        // ρ == θ splits (strict >), uncovered points dropped
        let halves = vec![mask(&[0, 1]), mask(&[2, 3]), mask(&[20])];
        let c4 = vec![mask(&[0, 1, 2, 3, 4])];
        assert_eq!(granularity_aware_assign(&c4, &halves, 0.5), vec![mask(&[0, 1]), mask(&[2, 3])]);
        assert_eq!(granularity_aware_assign(&c4, &halves, 0.49), c4);
    }

    fn row_cloud(n: usize) -> SceneCloud {
        SceneCloud::from_positions("r", (0..n).map(|i| Point3::new(i as f64 * 0.01, 0.0, 0.0)).collect()).unwrap()
    }

    #[test]
    fn small_merges_into_adjacent_large() {
        let cloud = row_cloud(505);
        let masks = vec![mask(&(0..500).collect::<Vec<_>>()), mask(&(500..505).collect::<Vec<_>>())];
        let lab = merge_small_instances(&cloud, &masks, 200, 1);
        assert_eq!(lab.masks().len(), 1);
        assert_eq!(lab.num_assigned(), 505);
    }

    #[test]
    fn large_or_isolated_small_unchanged() {
        let cloud = row_cloud(300);
        let single = vec![mask(&(0..300).collect::<Vec<_>>())];
        assert_eq!(merge_small_instances(&cloud, &single, 200, 1).masks().len(), 1);
        let cloud = row_cloud(55);
        let smalls = vec![mask(&(0..5).collect::<Vec<_>>()), mask(&(5..55).collect::<Vec<_>>())];
        let lab = merge_small_instances(&cloud, &smalls, 200, 1);
        assert_eq!(lab.masks().len(), 2);
    }

    #[test]
    fn unassigned_points_stay_unassigned() {
        let cloud = row_cloud(20);
        let masks = vec![mask(&[0, 1, 2, 3, 4, 5, 6, 7]), mask(&[9, 10])];
        let lab = merge_small_instances(&cloud, &masks, 5, 2);
        assert_eq!(lab.ids()[8], -1);
        assert!(lab.ids()[11..].iter().all(|&v| v == -1));
        assert_eq!(lab.ids()[9], lab.ids()[0]);
    }

    fn scores(rows: &[&[f32]]) -> ScoreMatrix {
        let k = rows[0].len();
        ScoreMatrix::new(k, rows.iter().flat_map(|r| r.iter().copied()).collect(), vec![false; rows.len()]).unwrap()
    }

    #[test]
    fn select_top_share() {
        let rows: Vec<[f32; 1]> = (0..10).map(|i| [i as f32 / 10.0]).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| &r[..]).collect();
        let s = scores(&refs);
        let sem = SemanticLabeling::new(vec![0; 10], 1).unwrap();
        let sel = semantic_select(&s, &sem, 30.0);
        assert_eq!(sel.classes(), &[-1, -1, -1, -1, -1, -1, -1, 0, 0, 0]);
        assert_eq!(semantic_select(&s, &sem, 100.0), sem);
    }

    #[test]
    fn select_ties_prefer_lower_index() {
        let s = scores(&[&[0.5], &[0.5], &[0.5]]);
        let sem = SemanticLabeling::new(vec![0, 0, 0], 1).unwrap();
        assert_eq!(semantic_select(&s, &sem, 50.0).classes(), &[0, 0, -1]);
    }

    #[test]
    fn quota() {
        assert_eq!(selection_quota(30.0, 10), 3);
        assert_eq!(selection_quota(30.0, 11), 4);
        assert_eq!(selection_quota(10.0, 1), 1);
        assert_eq!(selection_quota(100.0, 7), 7);
    }

    #[test]
    fn propagation() {
        let sp = SuperpointPartition::new(vec![0, 0, 0, 1, 1, 2, 2]).unwrap();
        let sel = SemanticLabeling::new(vec![0, 0, 1, -1, -1, 2, 1], 3).unwrap();
        assert_eq!(superpoint_propagate(&sel, &sp).classes(), &[0, 0, 0, -1, -1, 1, 1]);
    }

    #[test]
    fn instance_classes() {
        let inst = InstanceLabeling::new(vec![0, 0, 0, 1, 1, 2, -1]).unwrap();
        let sem = SemanticLabeling::new(vec![3, 3, 7, 3, 3, -1, 5], 8).unwrap();
        let map = assign_instance_classes(&inst, &sem);
        assert_eq!(map, BTreeMap::from([(0, 3), (1, 3), (2, -1)]));
    }
}
