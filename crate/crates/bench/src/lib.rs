//! Shared fixtures for the benchmarks.

use pseudolabel3d::synth::{generate_synthetic, SynthSpec};
use pseudolabel3d::SceneBundle;

/// Spec of a synthetic scene with roughly `instances * 1000` points.
pub fn spec(instances: usize, frames: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        instances,
        points_per_instance: [900, 1100],
        classes: 5,
        room_extent: (instances as f64 * 0.64).sqrt().max(3.0),
        frames,
        ..SynthSpec::default()
    }
}

pub fn scene(instances: usize, frames: usize, seed: u64) -> SceneBundle {
    generate_synthetic(&spec(instances, frames, seed))
        .expect("benchmark scene spec is feasible")
        .bundle
}
