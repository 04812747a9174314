//! Geometry self-calibration of circular cone-beam CT scans from the
//! projected trajectories of unknown fiducial markers.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod extraction;
pub mod geometry;
pub mod homography;
pub mod io;
pub mod simulation;
pub mod solver;
pub mod trajectory;

pub use error::{CalibError, Result};
pub use extraction::{extract_all, extract_sinusoid, fuse_w, moment_sums, solve_component, MomentSums};
pub use geometry::{
    geometry_to_matrix, matrix_to_geometry, normalize_gauge, project_point, report_angles, ProjectionMatrix,
    RealSpaceGeometry, ReportAngles, Vec3,
};
pub use homography::{
    delta_for_aspect, fit_gamma_delta, fix_ambiguities, homography_matrix, transform_solution, AmbiguityMode,
    HomographyParams,
};
pub use io::{MarkerParams, ResultFile, TrackRow, TruthFile};
pub use simulation::{
    run_montecarlo, run_pipeline, trial_inputs, ErrorRecord, MonteCarloConfig, MonteCarloReport, PipelineOptions,
    Scenario, ScenarioDistribution,
};
pub use solver::{calibrate, CalibrationResult, SolverConfig, SolverState};
pub use trajectory::{
    params_from_matrix_and_orbit, project_orbit, sinusoid_forward, HomogeneousOrbit, SinusoidParams, TrackSamples,
};
