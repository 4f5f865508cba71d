//! Reference supervision targets and losses for a downstream instance
//! segmentation network trained on the pseudo labels.
//!
//! Everything here is a plain function over slices; no training loop.

use nalgebra::Vector3;

use crate::scene::{InstanceLabeling, SceneCloud, SemanticLabeling};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Lower and upper IoU bounds of the proposal score ramp.
pub const SCORE_IOU_LOW: f64 = 0.25;
pub const SCORE_IOU_HIGH: f64 = 0.75;

/// Per-point vector to its instance center (mean of member coordinates).
/// Unassigned points get zero.
pub fn offset_targets(cloud: &SceneCloud, instances: &InstanceLabeling) -> Vec<Vector3<f64>> {
    let mut out = vec![Vector3::zeros(); cloud.len()];
    for (_, mask) in instances.masks() {
        let center = mask
            .indices()
            .iter()
            .fold(Vector3::zeros(), |acc, &n| acc + cloud.position(n as usize).coords)
            / mask.len() as f64;
        for &n in mask.indices() {
            out[n as usize] = center - cloud.position(n as usize).coords;
        }
    }
    out
}

/// Mean negative log-probability of the target class over non-IGNORE points.
///
/// `probs` is row-major `N×K`. Returns 0 when nothing is supervised.
pub fn loss_sem(probs: &[f64], num_classes: usize, targets: &SemanticLabeling) -> f64 {
    assert_eq!(probs.len(), targets.len() * num_classes, "probability matrix shape");
    let mut total = 0.0;
    let mut count = 0usize;
    let mut clamped = 0usize;
    for (n, &t) in targets.classes().iter().enumerate() {
        if t < 0 {
            continue;
        }
        let p = probs[n * num_classes + t as usize];
        if p < PROB_FLOOR {
            clamped += 1;
        }
        total -= p.max(PROB_FLOOR).ln();
        count += 1;
    }
    if clamped > 0 {
        log::warn!("loss_sem: clamped {clamped} target probabilities to {PROB_FLOOR}");
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn masked<'a>(
    pred: &'a [Vector3<f64>],
    target: &'a [Vector3<f64>],
    mask: &'a [bool],
) -> impl Iterator<Item = (&'a Vector3<f64>, &'a Vector3<f64>)> {
    assert!(pred.len() == target.len() && pred.len() == mask.len(), "offset field lengths");
    pred.iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(pair, _)| pair)
}

/// Mean L1 norm of the offset error over masked points.
pub fn loss_off(pred: &[Vector3<f64>], target: &[Vector3<f64>], mask: &[bool]) -> f64 {
    let (sum, count) = masked(pred, target, mask).fold((0.0, 0usize), |(s, c), (p, t)| {
        (s + (p - t).abs().sum(), c + 1)
    });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Negative mean cosine between predicted and target offsets over masked
/// points. Rows where either vector is zero contribute 0.
pub fn loss_dir(pred: &[Vector3<f64>], target: &[Vector3<f64>], mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut zero_rows = 0usize;
    for (p, t) in masked(pred, target, mask) {
        count += 1;
        let (np, nt) = (p.norm(), t.norm());
        if np == 0.0 || nt == 0.0 {
            zero_rows += 1;
            continue;
        }
        sum += p.dot(t) / (np * nt);
    }
    if zero_rows > 0 {
        log::warn!("loss_dir: {zero_rows} zero-length offset row(s)");
    }
    if count == 0 {
        0.0
    } else {
        -sum / count as f64
    }
}

/// Proposal quality target: 0 below [`SCORE_IOU_LOW`], 1 above
/// [`SCORE_IOU_HIGH`], linear in between.
pub fn score_target(iou: f64) -> f64 {
    score_target_with(iou, SCORE_IOU_LOW, SCORE_IOU_HIGH)
}

pub fn score_target_with(iou: f64, low: f64, high: f64) -> f64 {
    if iou < low {
        0.0
    } else if iou > high {
        1.0
    } else {
        (iou - low) / (high - low)
    }
}

fn bce_term(pred: f64, target: f64) -> f64 {
    let p = pred.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let mut loss = 0.0;
    if target != 0.0 {
        loss -= target * p.ln();
    }
    if target != 1.0 {
        loss -= (1.0 - target) * (1.0 - p).ln();
    }
    loss
}

/// Mean binary cross-entropy between predicted and target scores.
pub fn binary_cross_entropy(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "score lengths");
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(&p, &t)| bce_term(p, t)).sum::<f64>() / pred.len() as f64
}

/// Proposal scoring loss.
pub fn loss_sc(pred: &[f64], target: &[f64]) -> f64 {
    binary_cross_entropy(pred, target)
}

/// Soft Dice loss `1 - (2 Σ p·y + ε) / (Σ p + Σ y + ε)` with ε = 1e-6.
pub fn dice_loss(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "mask lengths");
    const SMOOTH: f64 = 1e-6;
    let inter: f64 = pred.iter().zip(target).map(|(p, t)| p * t).sum();
    let total: f64 = pred.iter().sum::<f64>() + target.iter().sum::<f64>();
    1.0 - (2.0 * inter + SMOOTH) / (total + SMOOTH)
}

/// Binarizes per-point proposal probabilities at 0.5 (inclusive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFilter {
    pub keep: Vec<bool>,
    pub kept: Vec<u32>,
}

pub fn instance_mask_filter(probs: &[f64]) -> MaskFilter {
    let keep: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
    let kept = keep
        .iter()
        .enumerate()
        .filter(|(_, &k)| k)
        .map(|(i, _)| i as u32)
        .collect();
    MaskFilter { keep, kept }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn offsets_point_to_center() {
        let cloud = SceneCloud::from_positions(
            "o",
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0), Point3::new(5.0, 5.0, 5.0), Point3::new(1.0, 1.0, 1.0)],
        )
        .unwrap();
        let inst = InstanceLabeling::new(vec![0, 0, 1, -1]).unwrap();
        let off = offset_targets(&cloud, &inst);
        assert_eq!(off[0], Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(off[1], Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(off[2], Vector3::zeros());
        assert_eq!(off[3], Vector3::zeros());
    }

    #[test]
    fn semantic_loss_closed_forms() {
        let targets = SemanticLabeling::new(vec![0, 2, -1], 4).unwrap();
        let onehot = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(loss_sem(&onehot, 4, &targets), 0.0);
        let uniform = [0.25; 12];
        assert!((loss_sem(&uniform, 4, &targets) - 4f64.ln()).abs() < 1e-12);
        let zero = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert!((loss_sem(&zero, 4, &targets) - (-PROB_FLOOR.ln() / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn offset_losses() {
        let t = vec![Vector3::new(1.0, -2.0, 0.5), Vector3::new(0.0, 3.0, 0.0)];
        let mask = vec![true, true];
        assert_eq!(loss_off(&t, &t, &mask), 0.0);
        assert!((loss_dir(&t, &t, &mask) + 1.0).abs() < 1e-12);
        let neg: Vec<_> = t.iter().map(|v| -v).collect();
        assert!((loss_dir(&neg, &t, &mask) - 1.0).abs() < 1e-12);
        let expected = (2.0 * 3.5 + 2.0 * 3.0) / 2.0;
        assert!((loss_off(&neg, &t, &mask) - expected).abs() < 1e-12);
        let ortho = vec![Vector3::new(2.0, 1.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        assert!(loss_dir(&ortho, &t, &mask).abs() < 1e-12);
        let zero = vec![Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)];
        assert!((loss_dir(&zero, &t, &mask) + 0.5).abs() < 1e-12);
        assert_eq!(loss_off(&neg, &t, &[false, false]), 0.0);
    }

    #[test]
    fn score_ramp() {
        assert_eq!(score_target(0.2), 0.0);
        assert_eq!(score_target(0.8), 1.0);
        assert_eq!(score_target(0.5), 0.5);
        assert_eq!(score_target(0.25), 0.0);
        assert_eq!(score_target(0.75), 1.0);
    }

    #[test]
    fn bce_at_exact_targets() {
        assert!(loss_sc(&[1.0, 0.0], &[1.0, 0.0]) < 1e-9);
        let p = 0.7f64;
        assert!((loss_sc(&[p], &[1.0]) + p.ln()).abs() < 1e-12);
    }

    #[test]
    fn dice() {
        assert!(dice_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).abs() < 1e-9);
        assert!((dice_loss(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mask_filter_threshold() {
        let f = instance_mask_filter(&[1.0, 0.5, 0.49, 0.0, 0.9]);
        assert_eq!(f.keep, vec![true, true, false, false, true]);
        assert_eq!(f.kept, vec![0, 1, 4]);
        assert_eq!(instance_mask_filter(&[1.0; 4]).kept.len(), 4);
    }
}
