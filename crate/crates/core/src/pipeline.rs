//! End-to-end orchestration of both grouping branches and refinement.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::Tensor;
use crate::metrics::GroundTruth;
use crate::mgb::{self, OversegmentParams, PromptMaskRaster, PromptSet, SuperpointPartition};
use crate::refine;
use crate::scene::{CameraFrame, FeatureMap, InstanceLabeling, LabelEmbeddings, PointMask, SceneCloud, SemanticLabeling};
use crate::sgb;

/// Everything one scene provides. `features[i]`, and `prompt_masks[i]` when
/// present, belong to `frames[i]`.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub cloud: SceneCloud,
    pub frames: Vec<CameraFrame>,
    pub features: Vec<FeatureMap>,
    pub labels: LabelEmbeddings,
    pub prompt_masks: Option<Vec<PromptMaskRaster>>,
    pub superpoints: Option<SuperpointPartition>,
    pub ground_truth: Option<GroundTruth>,
}

impl SceneBundle {
    /// One-line `N F K M` style summary.
    pub fn summary(&self) -> String {
        format!(
            "scene {}: {} points, {} frames, {} classes, {} feature channels, prompt masks {}, superpoints {}, ground truth {}",
            self.cloud.scene_id(),
            self.cloud.len(),
            self.frames.len(),
            self.labels.num_classes(),
            self.labels.channels(),
            if self.prompt_masks.is_some() { "yes" } else { "no" },
            self.superpoints.as_ref().map_or("none".to_string(), |s| s.count().to_string()),
            if self.ground_truth.is_some() { "yes" } else { "no" },
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub num_points: usize,
    pub num_frames: usize,
    pub featureless_points: usize,
    /// Coarse masks from semantic grouping.
    pub coarse_masks: usize,
    /// Fine masks from prompt voting.
    pub fine_masks: usize,
    pub superpoints: usize,
    pub prompts: usize,
    /// Masks after granularity-aware assignment.
    pub ensemble_masks: usize,
    pub instances: usize,
    pub instance_labeled_fraction: f64,
    pub semantic_labeled_fraction: f64,
    pub timings: Vec<(&'static str, Duration)>,
}

impl Diagnostics {
    /// Counts only; timings are left out so the text is reproducible.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "points = {}", self.num_points);
        let _ = writeln!(s, "frames = {}", self.num_frames);
        let _ = writeln!(s, "featureless_points = {}", self.featureless_points);
        let _ = writeln!(s, "coarse_masks = {}", self.coarse_masks);
        let _ = writeln!(s, "fine_masks = {}", self.fine_masks);
        let _ = writeln!(s, "superpoints = {}", self.superpoints);
        let _ = writeln!(s, "prompts = {}", self.prompts);
        let _ = writeln!(s, "ensemble_masks = {}", self.ensemble_masks);
        let _ = writeln!(s, "instances = {}", self.instances);
        let _ = writeln!(s, "instance_labeled_fraction = {:.6}", self.instance_labeled_fraction);
        let _ = writeln!(s, "semantic_labeled_fraction = {:.6}", self.semantic_labeled_fraction);
        s
    }

    pub fn timings_text(&self) -> String {
        let mut s = String::new();
        for (stage, d) in &self.timings {
            let _ = writeln!(s, "{stage:>12}: {:9.3} ms", d.as_secs_f64() * 1e3);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Final pseudo instance labels, ids ordered by smallest member.
    pub instances: InstanceLabeling,
    /// Final pseudo semantic labels.
    pub semantics: SemanticLabeling,
    /// Output of granularity-aware assignment, before small-instance merging.
    pub ensemble: Vec<PointMask>,
    pub prompts: PromptSet,
    pub diagnostics: Diagnostics,
}

pub const INSTANCE_FILE: &str = "instance_labels.dbgt";
pub const SEMANTIC_FILE: &str = "semantic_labels.dbgt";
pub const ENSEMBLE_FILE: &str = "ensemble.txt";
pub const PROMPTS_FILE: &str = "prompts.txt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

impl PipelineOutput {
    /// Writes labels, ensemble masks, prompts and diagnostics into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n = self.instances.len();
        Tensor::i32(&[n], self.instances.ids().to_vec())?.write(dir.join(INSTANCE_FILE))?;
        Tensor::i32(&[n], self.semantics.classes().to_vec())?.write(dir.join(SEMANTIC_FILE))?;
        let write_text = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write_text(ENSEMBLE_FILE, masks_to_text(&self.ensemble))?;
        write_text(PROMPTS_FILE, self.prompts.to_text())?;
        write_text(DIAGNOSTICS_FILE, self.diagnostics.to_text())
    }
}

/// One mask per line, space-separated point indices.
pub fn masks_to_text(masks: &[PointMask]) -> String {
    let mut s = String::new();
    for m in masks {
        for (i, n) in m.indices().iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{n}");
        }
        s.push('\n');
    }
    s
}

struct Stopwatch {
    timings: Vec<(&'static str, Duration)>,
    last: Instant,
}

impl Stopwatch {
    fn new() -> Self {
        Stopwatch {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push((stage, now - self.last));
        self.last = now;
    }
}

fn background_ids(names: &[String], labels: &LabelEmbeddings) -> Result<Vec<i32>> {
    names
        .iter()
        .map(|name| {
            labels
                .class_index(name)
                .map(|k| k as i32)
                .ok_or_else(|| Error::Config(format!("background class `{name}` is not in the class list")))
        })
        .collect()
}

/// Runs both branches and refinement on one scene.
///
/// Without prompt masks there are no fine masks and every coarse mask is
/// kept whole. Without a superpoint file the cloud is oversegmented.
pub fn run_pipeline(scene: &SceneBundle, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let cloud = &scene.cloud;
    let n = cloud.len();
    let mut clock = Stopwatch::new();
    if scene.frames.is_empty() {
        log::warn!("scene {} has no frames: every point is featureless", cloud.scene_id());
    }

    let features = sgb::accumulate_features(
        cloud,
        &scene.frames,
        &scene.features,
        config.depth_tolerance,
        scene.labels.channels(),
    )
    .map_err(|e| e.in_stage("accumulate"))?;
    clock.lap("accumulate");

    let scores = sgb::compute_scores(&features, &scene.labels, config.normalize_embeddings)
        .map_err(|e| e.in_stage("score"))?;
    clock.lap("score");

    let semantics = sgb::classify_points(&scores);
    clock.lap("classify");

    let background = background_ids(&config.background_classes, &scene.labels).map_err(|e| e.in_stage("group"))?;
    let coarse = sgb::bfs_group(cloud, &semantics, config.bfs_radius, config.min_cluster_size, &background);
    clock.lap("group");

    let partition = match &scene.superpoints {
        Some(p) if p.len() != n => {
            return Err(Error::DimensionMismatch(format!("{} superpoint ids for {n} points", p.len()))
                .in_stage("superpoints"))
        }
        Some(p) => p.clone(),
        None => {
            let params = OversegmentParams {
                angle_threshold_deg: config.angle_threshold,
                knn_normals: config.knn_normals,
                radius: config.bfs_radius,
                ..OversegmentParams::default()
            };
            mgb::oversegment(cloud, &params).map_err(|e| e.in_stage("superpoints"))?.partition
        }
    };
    clock.lap("superpoints");

    let centroids = mgb::superpoint_centroids(cloud, &partition);
    let prompts = mgb::project_prompts(cloud, &centroids, &scene.frames, config.depth_tolerance);
    clock.lap("prompts");

    let fine = match &scene.prompt_masks {
        Some(rasters) => {
            mgb::vote_fine_masks(cloud, &scene.frames, rasters, config.depth_tolerance)
                .map_err(|e| e.in_stage("vote"))?
                .0
        }
        None => Vec::new(),
    };
    clock.lap("vote");

    let ensemble = refine::granularity_aware_assign(&coarse, &fine, config.overlap_threshold);
    clock.lap("assign");

    let instances = refine::merge_small_instances(cloud, &ensemble, config.small_instance_threshold, config.knn_k);
    clock.lap("merge");

    let selected = refine::semantic_select(&scores, &semantics, config.select_top_alpha);
    clock.lap("select");

    let final_semantics = refine::superpoint_propagate(&selected, &partition);
    clock.lap("propagate");

    let fraction = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    let instance_count = instances.masks().len();
    let diagnostics = Diagnostics {
        num_points: n,
        num_frames: scene.frames.len(),
        featureless_points: features.num_featureless(),
        coarse_masks: coarse.len(),
        fine_masks: fine.len(),
        superpoints: partition.count(),
        prompts: prompts.entries.len(),
        ensemble_masks: ensemble.len(),
        instances: instance_count,
        instance_labeled_fraction: fraction(instances.num_assigned()),
        semantic_labeled_fraction: fraction(final_semantics.num_labeled()),
        timings: clock.timings,
    };
    log::info!(
        "coarse {} fine {} ensemble {} instances {}",
        diagnostics.coarse_masks,
        diagnostics.fine_masks,
        diagnostics.ensemble_masks,
        diagnostics.instances
    );
    Ok(PipelineOutput {
        instances,
        semantics: final_semantics,
        ensemble,
        prompts,
        diagnostics,
    })
}
