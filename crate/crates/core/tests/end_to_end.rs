use std::time::Instant;

use pseudolabel3d::metrics::evaluate;
use pseudolabel3d::synth::{generate_synthetic, write_synthetic, SynthSpec};
use pseudolabel3d::{io::load_scene, run_pipeline, PipelineConfig};


fn clean_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        instances: 6,
        classes: 3,
        frames: 4,
        ..SynthSpec::default()
    }
}

#[test]
fn zero_noise_scenes_are_recovered_exactly() {
    for seed in 1..=5 {
        let scene = generate_synthetic(&clean_spec(seed)).unwrap();
        let start = Instant::now();
        let out = run_pipeline(&scene.bundle, &PipelineConfig::default()).unwrap();
        let elapsed = start.elapsed();
        let gt = scene.bundle.ground_truth.as_ref().unwrap();
        let report = evaluate(&out.instances, &out.semantics, gt, 3).unwrap();
        eprintln!("seed {seed}: {} points, ap {} miou {} in {elapsed:?}\n{}", gt.len(), report.ap.ap, report.miou.mean, out.diagnostics.to_text());
        assert_eq!(report.ap.ap, 1.0, "seed {seed}");
        assert_eq!(report.miou.mean, 1.0, "seed {seed}");
    }
}

#[test]
fn written_scene_loads_back_identically() {
    let scene = generate_synthetic(&clean_spec(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic(&scene, dir.path()).unwrap();
    let loaded = load_scene(&manifest).unwrap();
    let a = &scene.bundle;
    assert_eq!(loaded.cloud.positions(), a.cloud.positions());
    assert_eq!(loaded.cloud.colors(), a.cloud.colors());
    assert_eq!(loaded.frames.len(), a.frames.len());
    for (x, y) in loaded.frames.iter().zip(&a.frames) {
        assert_eq!(x.intrinsic(), y.intrinsic());
        assert_eq!(x.extrinsic(), y.extrinsic());
        assert_eq!(x.depth(), y.depth());
    }
    assert_eq!(loaded.features, a.features);
    assert_eq!(loaded.prompt_masks, a.prompt_masks);
    assert_eq!(loaded.superpoints, a.superpoints);
    assert_eq!(loaded.ground_truth, a.ground_truth);
    let cfg = PipelineConfig::default();
    let x = run_pipeline(&loaded, &cfg).unwrap();
    let y = run_pipeline(a, &cfg).unwrap();
    assert_eq!(x.instances, y.instances);
    assert_eq!(x.semantics, y.semantics);
}

#[test]
fn zero_frames_give_featureless_points_and_empty_outputs() {
    let mut scene = generate_synthetic(&clean_spec(2)).unwrap().bundle;
    scene.frames.clear();
    scene.features.clear();
    scene.prompt_masks = Some(Vec::new());
    let out = run_pipeline(&scene, &PipelineConfig::default()).unwrap();
    assert_eq!(out.diagnostics.featureless_points, scene.cloud.len());
    assert_eq!(out.instances.num_assigned(), 0);
    assert_eq!(out.semantics.num_labeled(), 0);
    assert!(out.ensemble.is_empty());
    assert!(out.prompts.entries.is_empty());
}

#[test]
fn stage_errors_carry_the_stage_name() {
    let mut scene = generate_synthetic(&clean_spec(3)).unwrap().bundle;
    scene.features.pop();
    let err = run_pipeline(&scene, &PipelineConfig::default()).unwrap_err();
    assert!(err.to_string().contains("stage `accumulate`"), "{err}");

    let scene = generate_synthetic(&clean_spec(3)).unwrap().bundle;
    let cfg = PipelineConfig {
        background_classes: vec!["sofa".into()],
        ..PipelineConfig::default()
    };
    let err = run_pipeline(&scene, &cfg).unwrap_err();
    assert!(err.to_string().contains("stage `group`"), "{err}");
}

#[test]
fn generator_is_reproducible() {
    let spec = SynthSpec {
        seed: 1,
        instances: 3,
        ..SynthSpec::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_synthetic(&generate_synthetic(&spec).unwrap(), a.path()).unwrap();
    write_synthetic(&generate_synthetic(&spec).unwrap(), b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 10);
    for name in names {
        assert_eq!(
            std::fs::read(a.path().join(&name)).unwrap(),
            std::fs::read(b.path().join(&name)).unwrap(),
            "{name:?}"
        );
    }
    let other = generate_synthetic(&SynthSpec { seed: 2, ..spec }).unwrap();
    assert_ne!(other.bundle.cloud.positions(), generate_synthetic(&clean_spec(1)).unwrap().bundle.cloud.positions());
}

#[test]
fn dilated_masks_still_vote_into_disjoint_instances() {
    let spec = SynthSpec {
        mask_dilation: 2,
        instances: 8,
        room_extent: 2.5,
        ..clean_spec(4)
    };
    let scene = generate_synthetic(&spec).unwrap();
    let b = &scene.bundle;
    let (fine, labeling) =
        pseudolabel3d::mgb::vote_fine_masks(&b.cloud, &b.frames, b.prompt_masks.as_ref().unwrap(), 0.05).unwrap();
    let total: usize = fine.iter().map(|m| m.len()).sum();
    assert_eq!(total, labeling.num_assigned());
    let mut seen = vec![false; b.cloud.len()];
    for m in &fine {
        for &n in m.indices() {
            assert!(!seen[n as usize]);
            seen[n as usize] = true;
        }
    }
    let out = run_pipeline(b, &PipelineConfig::default()).unwrap();
    let report = evaluate(&out.instances, &out.semantics, b.ground_truth.as_ref().unwrap(), 3).unwrap();
    assert!(report.ap.ap50 > 0.9, "AP50 {}", report.ap.ap50);
}

#[test]
fn noisy_features_degrade_gracefully() {
    let spec = SynthSpec {
        feature_flip_rate: 0.2,
        depth_noise: 0.005,
        ..clean_spec(6)
    };
    let scene = generate_synthetic(&spec).unwrap();
    let b = &scene.bundle;
    let out = run_pipeline(b, &PipelineConfig::default()).unwrap();
    let report = evaluate(&out.instances, &out.semantics, b.ground_truth.as_ref().unwrap(), 3).unwrap();
    assert!(report.miou.mean > 0.5, "mIoU {}", report.miou.mean);
}

#[test]
fn oversegmentation_path_without_superpoint_file() {
    let mut scene = generate_synthetic(&clean_spec(8)).unwrap().bundle;
    scene.superpoints = None;
    let out = run_pipeline(&scene, &PipelineConfig::default()).unwrap();
    assert!(out.diagnostics.superpoints >= 6);
    let report = evaluate(&out.instances, &out.semantics, scene.ground_truth.as_ref().unwrap(), 3).unwrap();
    assert_eq!(report.ap.ap, 1.0);
    assert!(report.miou.mean > 0.9, "mIoU {}", report.miou.mean);
}
