//! Semantic and instance segmentation metrics.
//!
//! Instance matching is greedy per class: predictions are visited by
//! descending confidence (then larger mask, then smaller first index) and
//! each claims the unmatched ground-truth instance of its class with the
//! highest IoU, provided that IoU reaches the threshold. AP integrates the
//! precision envelope over every recall step.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::scene::{InstanceLabeling, PointMask, SemanticLabeling};

/// IoU thresholds averaged by [`ApReport::ap`]: 0.50, 0.55, …, 0.95.
pub fn ap_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    instance_ids: Vec<i32>,
    classes: Vec<i32>,
}

impl GroundTruth {
    pub fn new(instance_ids: Vec<i32>, classes: Vec<i32>) -> Result<Self> {
        let mut violations = Vec::new();
        if instance_ids.len() != classes.len() {
            violations.push(format!(
                "ground truth has {} instance ids but {} classes",
                instance_ids.len(),
                classes.len()
            ));
        }
        let mut class_of: HashMap<i32, i32> = HashMap::new();
        for (n, (&inst, &class)) in instance_ids.iter().zip(&classes).enumerate() {
            if inst < -1 || class < -1 {
                violations.push(format!("point {n}: id below -1"));
                continue;
            }
            if inst >= 0 {
                let seen = *class_of.entry(inst).or_insert(class);
                if seen != class {
                    violations.push(format!("instance {inst} spans classes {seen} and {class}"));
                }
            }
        }
        violations.truncate(20);
        if !violations.is_empty() {
            return Err(Error::Invariant(violations));
        }
        Ok(GroundTruth { instance_ids, classes })
    }

    pub fn instance_ids(&self) -> &[i32] {
        &self.instance_ids
    }

    pub fn classes(&self) -> &[i32] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Ground-truth instances with a valid class: `(instance id, class, size)`.
    fn instances(&self) -> BTreeMap<i32, (i32, usize)> {
        let mut out: BTreeMap<i32, (i32, usize)> = BTreeMap::new();
        for (&inst, &class) in self.instance_ids.iter().zip(&self.classes) {
            if inst >= 0 && class >= 0 {
                out.entry(inst).or_insert((class, 0)).1 += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub mask: PointMask,
    pub class: i32,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// Per-class IoU over points with a non-ignored ground-truth class. A
/// prediction of IGNORE (or an out-of-range class) counts as a miss.
pub fn miou(pred: &SemanticLabeling, gt_classes: &[i32], num_classes: usize) -> Result<MiouReport> {
    if pred.len() != gt_classes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted labels vs {} ground-truth labels",
            pred.len(),
            gt_classes.len()
        )));
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fn_ = vec![0u64; num_classes];
    for (&p, &g) in pred.classes().iter().zip(gt_classes) {
        if g < 0 || g as usize >= num_classes {
            continue;
        }
        if p == g {
            tp[g as usize] += 1;
        } else {
            fn_[g as usize] += 1;
            if p >= 0 && (p as usize) < num_classes {
                fp[p as usize] += 1;
            }
        }
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|k| {
            let denom = tp[k] + fp[k] + fn_[k];
            (denom > 0).then(|| tp[k] as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(MiouReport { per_class, mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    /// Mean over the requested thresholds.
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    /// Per-class AP averaged over the requested thresholds.
    pub per_class: BTreeMap<i32, f64>,
}

/// Precomputed IoUs between predictions and same-class ground truth.
struct MatchContext {
    /// gt instance id -> (class, size)
    gt: BTreeMap<i32, (i32, usize)>,
    /// classes with at least one gt instance
    classes: Vec<i32>,
    /// prediction visiting order
    order: Vec<usize>,
    /// per prediction: (gt id, IoU) for same-class gt with non-zero overlap
    ious: Vec<Vec<(i32, f64)>>,
}

impl MatchContext {
    fn new(preds: &[InstancePrediction], gt: &GroundTruth) -> Result<Self> {
        let gt_instances = gt.instances();
        let mut classes: Vec<i32> = gt_instances.values().map(|&(c, _)| c).collect();
        classes.sort_unstable();
        classes.dedup();

        let mut ious = Vec::with_capacity(preds.len());
        for p in preds {
            if p.mask.last() as usize >= gt.len() {
                return Err(Error::DimensionMismatch(format!(
                    "prediction references point {} but ground truth has {}",
                    p.mask.last(),
                    gt.len()
                )));
            }
            let mut inter: BTreeMap<i32, usize> = BTreeMap::new();
            for &n in p.mask.indices() {
                let g = gt.instance_ids()[n as usize];
                if g >= 0 {
                    *inter.entry(g).or_default() += 1;
                }
            }
            let row = inter
                .into_iter()
                .filter_map(|(g, i)| {
                    let &(class, size) = gt_instances.get(&g)?;
                    (class == p.class).then(|| (g, i as f64 / (p.mask.len() + size - i) as f64))
                })
                .collect();
            ious.push(row);
        }

        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (&preds[a], &preds[b]);
            pb.confidence
                .total_cmp(&pa.confidence)
                .then(pb.mask.len().cmp(&pa.mask.len()))
                .then(pa.mask.first().cmp(&pb.mask.first()))
                .then(a.cmp(&b))
        });
        Ok(MatchContext {
            gt: gt_instances,
            classes,
            order,
            ious,
        })
    }

    /// Match flags (in visiting order) of the predictions of `class`, and the
    /// number of gt instances of that class.
    fn match_class(&self, preds: &[InstancePrediction], class: i32, threshold: f64) -> (Vec<bool>, usize) {
        let num_gt = self.gt.values().filter(|&&(c, _)| c == class).count();
        let mut taken: Vec<i32> = Vec::new();
        let mut flags = Vec::new();
        for &p in &self.order {
            if preds[p].class != class {
                continue;
            }
            let mut best: Option<(i32, f64)> = None;
            for &(g, iou) in &self.ious[p] {
                if iou >= threshold && !taken.contains(&g) && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken.push(g);
            }
            flags.push(best.is_some());
        }
        (flags, num_gt)
    }
}

/// All-point interpolated AP of a ranked list of match flags.
pub fn average_precision(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 || flags.is_empty() {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &hit) in flags.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..flags.len() {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    ap
}

fn per_class_ap(ctx: &MatchContext, preds: &[InstancePrediction], threshold: f64) -> BTreeMap<i32, f64> {
    ctx.classes
        .iter()
        .map(|&c| {
            let (flags, num_gt) = ctx.match_class(preds, c, threshold);
            (c, average_precision(&flags, num_gt))
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// AP averaged over `thresholds` and classes present in the ground truth,
/// plus AP at 0.5 and 0.25.
pub fn instance_ap(preds: &[InstancePrediction], gt: &GroundTruth, thresholds: &[f64]) -> Result<ApReport> {
    let ctx = MatchContext::new(preds, gt)?;
    let mut per_class: BTreeMap<i32, f64> = ctx.classes.iter().map(|&c| (c, 0.0)).collect();
    for &t in thresholds {
        for (c, ap) in per_class_ap(&ctx, preds, t) {
            *per_class.get_mut(&c).unwrap() += ap;
        }
    }
    if !thresholds.is_empty() {
        per_class.values_mut().for_each(|v| *v /= thresholds.len() as f64);
    }
    Ok(ApReport {
        ap: mean(per_class.values().copied()),
        ap50: mean(per_class_ap(&ctx, preds, 0.5).into_values()),
        ap25: mean(per_class_ap(&ctx, preds, 0.25).into_values()),
        per_class,
    })
}

/// Mean precision and recall over ground-truth classes at one IoU threshold.
pub fn mprec_mrec(preds: &[InstancePrediction], gt: &GroundTruth, threshold: f64) -> Result<(f64, f64)> {
    let ctx = MatchContext::new(preds, gt)?;
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    for &c in &ctx.classes {
        let (flags, num_gt) = ctx.match_class(preds, c, threshold);
        let matched = flags.iter().filter(|&&f| f).count();
        precisions.push(if flags.is_empty() {
            0.0
        } else {
            matched as f64 / flags.len() as f64
        });
        recalls.push(matched as f64 / num_gt as f64);
    }
    Ok((mean(precisions.into_iter()), mean(recalls.into_iter())))
}

/// Turns a pseudo instance labeling into scored predictions: each instance
/// takes the modal semantic class of its points and confidence 1. Instances
/// whose points are all IGNORE are dropped.
pub fn instance_predictions(instances: &InstanceLabeling, semantics: &SemanticLabeling) -> Vec<InstancePrediction> {
    let classes = crate::refine::assign_instance_classes(instances, semantics);
    instances
        .masks()
        .into_iter()
        .filter_map(|(id, mask)| {
            let class = *classes.get(&id)?;
            (class >= 0).then_some(InstancePrediction {
                mask,
                class,
                confidence: 1.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ap: ApReport,
    pub miou: MiouReport,
    pub mprec50: f64,
    pub mrec50: f64,
    pub num_predictions: usize,
}

impl EvalReport {
    /// `key = value` lines; per-class rows use the given names.
    pub fn to_text(&self, class_names: &[String]) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "ap = {:.6}", self.ap.ap);
        let _ = writeln!(s, "ap50 = {:.6}", self.ap.ap50);
        let _ = writeln!(s, "ap25 = {:.6}", self.ap.ap25);
        let _ = writeln!(s, "miou = {:.6}", self.miou.mean);
        let _ = writeln!(s, "mprec50 = {:.6}", self.mprec50);
        let _ = writeln!(s, "mrec50 = {:.6}", self.mrec50);
        let _ = writeln!(s, "predictions = {}", self.num_predictions);
        let name = |k: usize| class_names.get(k).cloned().unwrap_or_else(|| format!("class{k}"));
        for (k, iou) in self.miou.per_class.iter().enumerate() {
            if let Some(v) = iou {
                let _ = writeln!(s, "iou.{} = {v:.6}", name(k));
            }
        }
        for (&c, ap) in &self.ap.per_class {
            let _ = writeln!(s, "ap.{} = {ap:.6}", name(c as usize));
        }
        s
    }

    /// `class,iou,ap` rows followed by a `mean` row.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("class,iou,ap\n");
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for (k, iou) in self.miou.per_class.iter().enumerate() {
            let ap = self.ap.per_class.get(&(k as i32)).copied();
            if iou.is_none() && ap.is_none() {
                continue;
            }
            let name = class_names.get(k).cloned().unwrap_or_else(|| format!("class{k}"));
            let _ = writeln!(s, "{name},{},{}", cell(*iou), cell(ap));
        }
        let _ = writeln!(s, "mean,{:.6},{:.6}", self.miou.mean, self.ap.ap);
        s
    }
}

/// Scores pseudo labels against ground truth.
pub fn evaluate(
    instances: &InstanceLabeling,
    semantics: &SemanticLabeling,
    gt: &GroundTruth,
    num_classes: usize,
) -> Result<EvalReport> {
    if instances.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} instance labels vs {} ground-truth points",
            instances.len(),
            gt.len()
        )));
    }
    let preds = instance_predictions(instances, semantics);
    let ap = instance_ap(&preds, gt, &ap_thresholds())?;
    let (mprec50, mrec50) = mprec_mrec(&preds, gt, 0.5)?;
    Ok(EvalReport {
        ap,
        miou: miou(semantics, gt.classes(), num_classes)?,
        mprec50,
        mrec50,
        num_predictions: preds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(v: &[u32]) -> PointMask {
        PointMask::from_sorted(v.to_vec()).unwrap()
    }

    fn pred(v: &[u32], class: i32, confidence: f64) -> InstancePrediction {
        InstancePrediction {
            mask: mask(v),
            class,
            confidence,
        }
    }

    fn gt() -> GroundTruth {
        // instance 0 (class 0): 0..4, instance 1 (class 0): 4..8, instance 2 (class 1): 8..10
        GroundTruth::new(vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, -1], vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1, -1]).unwrap()
    }

    #[test]
    fn miou_perfect_and_disjoint() {
        let g = vec![0, 0, 1, 1, -1];
        let p = SemanticLabeling::new(vec![0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(miou(&p, &g, 2).unwrap().mean, 1.0);
        let q = SemanticLabeling::new(vec![1, 1, 0, 0, 0], 2).unwrap();
        assert_eq!(miou(&q, &g, 2).unwrap().mean, 0.0);
    }

    #[test]
    fn miou_half_flipped() {
        // class 0: 4 points, two predicted as 1 -> IoU_0 = 2/4, IoU_1 = 4/(4+2) ... equal sizes:
        // gt 0: {0,1,2,3}, gt 1: {4,5,6,7}; flip 0,1 -> 1 and 4,5 -> 0
        let g = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let p = SemanticLabeling::new(vec![1, 1, 0, 0, 0, 0, 1, 1], 2).unwrap();
        let r = miou(&p, &g, 2).unwrap();
        // TP_0 = 2, FN_0 = 2, FP_0 = 2 -> 2/6
        assert!((r.per_class[0].unwrap() - 2.0 / 6.0).abs() < 1e-12);
        // one-sided flip: half of class 0 -> 1, class 1 untouched
        let p = SemanticLabeling::new(vec![1, 1, 0, 0, 1, 1, 1, 1], 2).unwrap();
        let r = miou(&p, &g, 2).unwrap();
        assert_eq!(r.per_class[0], Some(0.5));
        assert!((r.per_class[1].unwrap() - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn miou_ignore_counts_as_miss_and_absent_excluded() {
        let g = vec![0, 0, 0, 0];
        let p = SemanticLabeling::new(vec![0, 0, -1, -1], 3).unwrap();
        let r = miou(&p, &g, 3).unwrap();
        assert_eq!(r.per_class, vec![Some(0.5), None, None]);
        assert_eq!(r.mean, 0.5);
    }

    #[test]
    fn perfect_predictions() {
        let preds = vec![pred(&[0, 1, 2, 3], 0, 1.0), pred(&[4, 5, 6, 7], 0, 1.0), pred(&[8, 9], 1, 1.0)];
        let r = instance_ap(&preds, &gt(), &ap_thresholds()).unwrap();
        assert_eq!((r.ap, r.ap50, r.ap25), (1.0, 1.0, 1.0));
        assert_eq!(mprec_mrec(&preds, &gt(), 0.5).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn empty_predictions() {
        let r = instance_ap(&[], &gt(), &ap_thresholds()).unwrap();
        assert_eq!((r.ap, r.ap50, r.ap25), (0.0, 0.0, 0.0));
    }

    #[test]
    fn spurious_prediction_lowers_precision_only() {
        let preds = vec![
            pred(&[0, 1, 2, 3], 0, 0.9),
            pred(&[4, 5, 6, 7], 0, 0.9),
            pred(&[8, 9], 1, 0.9),
            pred(&[0, 10], 0, 0.1),
            pred(&[10], 1, 0.1),
        ];
        let (p, r) = mprec_mrec(&preds, &gt(), 0.5).unwrap();
        assert!(p < 1.0);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn five_prediction_pr_fixture() {
        // One class, 3 gt instances of 4 points each.
        let g = GroundTruth::new(
            (0..12).map(|n| n / 4).collect(),
            vec![0; 12],
        )
        .unwrap();
        // ranked: TP(g0), FP, TP(g1), FP, TP(g2 at IoU 3/5)
        let preds = vec![
            pred(&[0, 1, 2, 3], 0, 0.9),
            pred(&[0, 1, 2, 3], 0, 0.8), // duplicate of g0 -> FP
            pred(&[4, 5, 6, 7], 0, 0.7),
            pred(&[11], 0, 0.6), // IoU 1/4 -> FP at 0.5
            pred(&[8, 9, 10], 0, 0.5), // IoU 3/4
        ];
        // precision: 1, 1/2, 2/3, 2/4, 3/5; recall: 1/3, 1/3, 2/3, 2/3, 1
        // envelope: 1, 2/3, 2/3, 3/5, 3/5
        // AP50 = 1/3*1 + 1/3*2/3 + 1/3*3/5
        let expected = (1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0;
        let r = instance_ap(&preds, &g, &[0.5]).unwrap();
        assert!((r.ap - expected).abs() < 1e-9);
        assert!((r.ap50 - expected).abs() < 1e-9);
        // at 0.25 the [11] prediction matches nothing new (g2 unmatched yet, IoU 1/4 >= 0.25)
        // ranked: TP, FP, TP, TP(g2 via [11]), FP([8,9,10] finds g2 taken)
        // precision: 1, 1/2, 2/3, 3/4, 3/5; recall 1/3,1/3,2/3,1,1 -> envelope 1, 3/4, 3/4, 3/4, 3/5
        let expected25 = 1.0 / 3.0 + (1.0 / 3.0) * 0.75 + (1.0 / 3.0) * 0.75;
        assert!((r.ap25 - expected25).abs() < 1e-9);
    }

    #[test]
    fn ground_truth_validation() {
        assert!(GroundTruth::new(vec![0, 0], vec![1, 2]).is_err());
        assert!(GroundTruth::new(vec![0], vec![1, 2]).is_err());
    }

    #[test]
    fn textbook_average_precision() {
        assert_eq!(average_precision(&[true, true], 2), 1.0);
        assert_eq!(average_precision(&[false, true], 1), 0.5);
        assert_eq!(average_precision(&[], 3), 0.0);
    }
}
