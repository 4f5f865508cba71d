//! Pipeline parameters, loadable from a `key = value` text file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Neighborhood radius for same-class grouping, meters.
    pub bfs_radius: f64,
    /// A coarse mask is kept whole when its best fine-mask share exceeds this.
    pub overlap_threshold: f64,
    /// Instances with fewer points are merged into a large neighbor.
    pub small_instance_threshold: usize,
    /// Percentage of each class's points kept by confidence selection.
    pub select_top_alpha: f64,
    /// Allowed disagreement between projected and sensed depth, meters.
    pub depth_tolerance: f64,
    /// Grouped clusters smaller than this are discarded.
    pub min_cluster_size: usize,
    /// Neighbors per point when linking instances for merging.
    pub knn_k: usize,
    /// Class names excluded from instance grouping.
    pub background_classes: Vec<String>,
    /// L2-normalize point and label embeddings before scoring.
    pub normalize_embeddings: bool,
    /// Oversegmentation: maximum normal deviation inside a superpoint, degrees.
    pub angle_threshold: f64,
    /// Oversegmentation: neighbors used for normal estimation.
    pub knn_normals: usize,
    /// Self-training rounds of the downstream network. Carried for
    /// completeness; nothing in this crate reads it.
    pub self_train_iterations: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bfs_radius: 0.04,
            overlap_threshold: 0.4,
            small_instance_threshold: 200,
            select_top_alpha: 30.0,
            depth_tolerance: 0.05,
            min_cluster_size: 50,
            knn_k: 1,
            background_classes: Vec::new(),
            normalize_embeddings: true,
            angle_threshold: 30.0,
            knn_normals: 16,
            self_train_iterations: 3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.bfs_radius > 0.0 && self.bfs_radius.is_finite()) {
            problems.push(format!("bfs_radius must be > 0 (got {})", self.bfs_radius));
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            problems.push(format!(
                "overlap_threshold must lie in [0, 1] (got {})",
                self.overlap_threshold
            ));
        }
        if !(self.select_top_alpha > 0.0 && self.select_top_alpha <= 100.0) {
            problems.push(format!(
                "select_top_alpha must lie in (0, 100] (got {})",
                self.select_top_alpha
            ));
        }
        if !(self.depth_tolerance > 0.0 && self.depth_tolerance.is_finite()) {
            problems.push(format!("depth_tolerance must be > 0 (got {})", self.depth_tolerance));
        }
        if !(self.angle_threshold >= 0.0 && self.angle_threshold <= 180.0) {
            problems.push(format!(
                "angle_threshold must lie in [0, 180] (got {})",
                self.angle_threshold
            ));
        }
        if self.knn_normals < 3 {
            problems.push(format!("knn_normals must be >= 3 (got {})", self.knn_normals));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let offset = e.span().map(|s| s.start as u64).unwrap_or(0);
            Error::parse(origin, offset, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Applies a single `key=value` override using the file syntax.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let mut table = toml::Table::try_from(&*self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
        let parsed: toml::Table = toml::from_str(&format!("v = {}", value.trim()))
            .or_else(|_| toml::from_str(&format!("v = {:?}", value.trim())))
            .map_err(|e| Error::Config(format!("bad value in `{assignment}`: {e}")))?;
        let key = key.trim();
        if !table.contains_key(key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        table.insert(key.to_string(), parsed["v"].clone());
        let updated: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("bad value for `{key}`: {}", e.message())))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
