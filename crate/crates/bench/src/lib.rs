//! Shared fixtures for the benchmarks.

use orbitcal_core::{trial_inputs, Scenario, ScenarioDistribution, TrackSamples};

/// Noisy tracks of one default scenario with `markers` markers.
pub fn fixture(markers: usize, seed: u64) -> (Scenario, Vec<TrackSamples>) {
    trial_inputs(&ScenarioDistribution::with_markers(markers), seed, 0).expect("default scenario")
}
