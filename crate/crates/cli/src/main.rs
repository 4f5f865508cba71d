//! `pl3d`: pseudo-label generation and evaluation from the command line.
//!
//! Exit codes: 0 success, 2 input or parse error, 3 invariant violation,
//! 4 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use pseudolabel3d::io::ply::{export_ply, Colormap};
use pseudolabel3d::io::{load_ground_truth, load_scene, Tensor};
use pseudolabel3d::metrics::evaluate;
use pseudolabel3d::pipeline::{INSTANCE_FILE, SEMANTIC_FILE};
use pseudolabel3d::synth::{generate_synthetic, write_synthetic, SynthSpec};
use pseudolabel3d::{
    run_pipeline, Error, ErrorKind, InstanceLabeling, PipelineConfig, Result, SemanticLabeling,
};

#[derive(Parser)]
#[command(name = "pl3d", version, about = "Pseudo instance and semantic labels for 3D scenes")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// `key = value` config file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set bfs_radius=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate pseudo labels for one scene.
    Pseudolabel {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the superpoint prompt pixels of a scene for an external mask generator.
    Prompts {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output text file, one `frame_id prompt_id row col` line per prompt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score labels written by `pseudolabel` against the manifest's ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding the label files.
        #[arg(long)]
        labels: PathBuf,
        /// Also write a per-class CSV report.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic scene with ground truth.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// TOML file with generator settings; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        points_min: Option<usize>,
        #[arg(long)]
        points_max: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        room_extent: Option<f64>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        feature_flip_rate: Option<f64>,
        #[arg(long)]
        mask_dilation: Option<usize>,
        #[arg(long)]
        depth_noise: Option<f64>,
    },
    /// Write an ASCII PLY colored by a label file.
    ExportPly {
        #[arg(long)]
        manifest: PathBuf,
        /// Per-point i32 label tensor; without it the scene colors are used.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PlyColors::Labels)]
        colors: PlyColors,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load and check a manifest without running anything.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlyColors {
    Labels,
    Original,
}

fn read_labels(path: &Path) -> Result<Vec<i32>> {
    Ok(Tensor::read(path)?.expect_i32(&path.display().to_string(), 1)?.1)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pseudolabel { manifest, config, out } => {
            let cfg = config.load()?;
            let start = Instant::now();
            let scene = load_scene(&manifest)?;
            let loaded = start.elapsed();
            let output = run_pipeline(&scene, &cfg)?;
            output.write(&out)?;
            eprint!("{}", output.diagnostics.to_text());
            eprintln!("load: {:.3} ms", loaded.as_secs_f64() * 1e3);
            eprint!("{}", output.diagnostics.timings_text());
            eprintln!("total: {:.3} ms", start.elapsed().as_secs_f64() * 1e3);
        }
        Command::Prompts { manifest, config, out } => {
            let cfg = config.load()?;
            let scene = load_scene(&manifest)?;
            let partition = match scene.superpoints {
                Some(p) => p,
                None => {
                    let params = pseudolabel3d::mgb::OversegmentParams {
                        angle_threshold_deg: cfg.angle_threshold,
                        knn_normals: cfg.knn_normals,
                        radius: cfg.bfs_radius,
                        ..Default::default()
                    };
                    pseudolabel3d::mgb::oversegment(&scene.cloud, &params)?.partition
                }
            };
            let centroids = pseudolabel3d::mgb::superpoint_centroids(&scene.cloud, &partition);
            let prompts =
                pseudolabel3d::mgb::project_prompts(&scene.cloud, &centroids, &scene.frames, cfg.depth_tolerance);
            write_file(&out, &prompts.to_text())?;
            eprintln!("{} prompts for {} superpoints", prompts.entries.len(), partition.count());
        }
        Command::Eval { manifest, labels, csv } => {
            let (classes, gt) = load_ground_truth(&manifest)?;
            let instances = InstanceLabeling::new(read_labels(&labels.join(INSTANCE_FILE))?)?;
            let semantics = SemanticLabeling::new(read_labels(&labels.join(SEMANTIC_FILE))?, classes.len())?;
            let report = evaluate(&instances, &semantics, &gt, classes.len())?;
            print!("{}", report.to_text(&classes));
            if let Some(path) = csv {
                write_file(&path, &report.to_csv(&classes))?;
            }
        }
        Command::Synth {
            out,
            spec,
            seed,
            instances,
            points_min,
            points_max,
            classes,
            room_extent,
            frames,
            feature_flip_rate,
            mask_dilation,
            depth_noise,
        } => {
            let mut s = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    SynthSpec::from_toml_str(&text, &p.display().to_string())?
                }
                None => SynthSpec::default(),
            };
            s.seed = seed.unwrap_or(s.seed);
            s.instances = instances.unwrap_or(s.instances);
            s.points_per_instance[0] = points_min.unwrap_or(s.points_per_instance[0]);
            s.points_per_instance[1] = points_max.unwrap_or(s.points_per_instance[1]);
            s.classes = classes.unwrap_or(s.classes);
            s.room_extent = room_extent.unwrap_or(s.room_extent);
            s.frames = frames.unwrap_or(s.frames);
            s.feature_flip_rate = feature_flip_rate.unwrap_or(s.feature_flip_rate);
            s.mask_dilation = mask_dilation.unwrap_or(s.mask_dilation);
            s.depth_noise = depth_noise.unwrap_or(s.depth_noise);
            let scene = generate_synthetic(&s)?;
            let path = write_synthetic(&scene, &out)?;
            eprintln!("{}", scene.bundle.summary());
            println!("{}", path.display());
        }
        Command::ExportPly {
            manifest,
            labels,
            colors,
            out,
        } => {
            let scene = load_scene(&manifest)?;
            let (ids, map) = match (labels, colors) {
                (Some(p), PlyColors::Labels) => (read_labels(&p)?, Colormap::HashedId),
                _ => (vec![-1; scene.cloud.len()], Colormap::Original),
            };
            export_ply(&out, &scene.cloud, &ids, map)?;
        }
        Command::Validate { manifest } => {
            let scene = load_scene(&manifest)?;
            println!("{}", scene.summary());
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Invariant => 3,
        ErrorKind::Internal => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    // a panic is a bug in this program, reported as an internal error
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(4),
    }
}
