//! Shared fixtures for the benchmark targets.

use canids_core::features::{build_dataset, normalize};
use canids_core::ingest::{generate_synthetic, TrafficProfile};
use canids_core::seeding::derive_seed;
use canids_core::{FeatureParams, LabeledDataset, TrafficClass};

/// A normalized four-class dataset synthesized from `frames_per_class`
/// frames per class.
pub fn fixture_dataset(frames_per_class: usize, seed: u64) -> LabeledDataset {
    let logs: Vec<_> = TrafficClass::TRAFFIC
        .iter()
        .map(|&class| {
            let profile = TrafficProfile::for_class(class).unwrap();
            generate_synthetic(&profile, frames_per_class, derive_seed(seed, class.name()))
                .unwrap()
        })
        .collect();
    let raw = build_dataset(&logs, 200, 200, &FeatureParams::default()).unwrap();
    normalize(&raw).unwrap()
}

/// One synthetic benign log.
pub fn fixture_log(frames: usize, seed: u64) -> canids_core::CanLog {
    generate_synthetic(&TrafficProfile::attack_free(), frames, seed).unwrap()
}
