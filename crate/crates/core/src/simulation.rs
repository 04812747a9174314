//! Random scan scenarios, noisy track simulation, error evaluation against
//! ground truth and Monte-Carlo campaigns.

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::geometry::{normalize_gauge, report_angles, RealSpaceGeometry, ReportAngles, Vec3};
use crate::homography::{fix_ambiguities, AmbiguityMode, FitOptions};
use crate::solver::{calibrate, SolverConfig};
use crate::trajectory::{project_orbit, HomogeneousOrbit, TrackSamples};

/// Ranges of the random scan and phantom parameters. Angles in degrees,
/// lengths in detector pixels; `*_range` fields are half-widths of uniform
/// distributions centred on zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioDistribution {
    pub detector_width: (f64, f64),
    pub detector_height: (f64, f64),
    pub sdd: f64,
    pub h_offset_range: f64,
    pub v_offset_range: f64,
    pub tilt_range: f64,
    pub slant_range: f64,
    /// Slants with magnitude below this are never drawn.
    pub slant_excluded: f64,
    pub rotation_range: f64,
    pub n_markers: usize,
    /// Marker heights are centred on points spread evenly over `[-z_extent, z_extent]`.
    pub z_extent: f64,
    pub z_sigma: f64,
    pub radius_mean: f64,
    pub radius_sigma: f64,
    pub n_views: usize,
    pub noise_sigma: f64,
    /// Noiseless projections must stay within this multiple of the detector half-size.
    pub bounds_margin: f64,
}

impl Default for ScenarioDistribution {
    fn default() -> Self {
        ScenarioDistribution {
            detector_width: (1500.0, 3000.0),
            detector_height: (1000.0, 2000.0),
            sdd: 10000.0,
            h_offset_range: 250.0,
            v_offset_range: 500.0,
            tilt_range: 5.0,
            slant_range: 5.0,
            slant_excluded: 0.2,
            rotation_range: 5.0,
            n_markers: 4,
            z_extent: 650.0,
            z_sigma: 150.0,
            radius_mean: 800.0,
            radius_sigma: 250.0,
            n_views: 120,
            noise_sigma: 0.5,
            bounds_margin: 1.25,
        }
    }
}

impl ScenarioDistribution {
    pub fn with_markers(n_markers: usize) -> Self {
        ScenarioDistribution { n_markers, ..Default::default() }
    }

    /// Slants drawn only from inside the band the default excludes.
    pub fn zero_slant(self) -> Self {
        ScenarioDistribution { slant_range: self.slant_excluded, slant_excluded: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CalibError::InvalidConfig(m.into()));
        if self.n_markers < 2 {
            return bad("at least two markers are required");
        }
        if self.n_views < crate::trajectory::MIN_VIEWS {
            return bad("too few views");
        }
        if !(self.sdd > 0.0) {
            return bad("sdd must be positive");
        }
        if !(self.detector_width.0 > 0.0 && self.detector_width.0 <= self.detector_width.1) {
            return bad("invalid detector width range");
        }
        if !(self.detector_height.0 > 0.0 && self.detector_height.0 <= self.detector_height.1) {
            return bad("invalid detector height range");
        }
        if !(self.slant_excluded >= 0.0 && self.slant_excluded <= self.slant_range) {
            return bad("slant exclusion band wider than the slant range");
        }
        if !(self.radius_mean > 0.0) || self.radius_sigma < 0.0 || self.z_sigma < 0.0 {
            return bad("invalid marker distribution");
        }
        if self.noise_sigma < 0.0 {
            return bad("noise sigma must be non-negative");
        }
        if !(self.bounds_margin > 0.0) {
            return bad("bounds margin must be positive");
        }
        Ok(())
    }
}

/// The sampled scan parameters (degrees and pixels).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanParameters {
    pub detector_width: f64,
    pub detector_height: f64,
    pub h_offset: f64,
    pub v_offset: f64,
    pub tilt: f64,
    pub slant: f64,
    pub rotation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: RealSpaceGeometry,
    pub orbits: Vec<HomogeneousOrbit>,
    pub parameters: ScanParameters,
    pub seed: u64,
}

/// Detector frame for the given angles: the nominal frame `H = x`, `V = z`
/// is turned in-plane by `rotation`, tilted about `x` and slanted about `z`.
/// The detector plane contains the rotation axis before tilting and the
/// pixel origin is the detector centre.
pub fn detector_geometry(sdd: f64, p: &ScanParameters) -> Result<RealSpaceGeometry> {
    let r = Rotation3::from_axis_angle(&Vec3::z_axis(), p.slant.to_radians())
        * Rotation3::from_axis_angle(&Vec3::x_axis(), p.tilt.to_radians())
        * Rotation3::from_axis_angle(&Vec3::y_axis(), p.rotation.to_radians());
    let h = r * Vec3::x();
    let v = r * Vec3::z();
    let s = Vec3::new(0.0, sdd, 0.0);
    let d = h * p.h_offset + v * p.v_offset;
    RealSpaceGeometry::new(s, d, h, v)
}

/// Deterministic 64-bit stream separation (splitmix64 finalizer).
pub fn mix_seed(master: u64, index: u64, purpose: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform_sym(rng: &mut impl Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn normal(rng: &mut impl Rng, mean: f64, sigma: f64) -> Result<f64> {
    if sigma == 0.0 {
        return Ok(mean);
    }
    Ok(Normal::new(mean, sigma).map_err(|e| CalibError::Sampling(e.to_string()))?.sample(rng))
}

fn within_bounds(
    g: &RealSpaceGeometry,
    orbits: &[HomogeneousOrbit],
    p: &ScanParameters,
    dist: &ScenarioDistribution,
) -> bool {
    let Ok(m) = g.to_matrix() else { return false };
    let hmax = dist.bounds_margin * p.detector_width / 2.0;
    let vmax = dist.bounds_margin * p.detector_height / 2.0;
    orbits.iter().all(|o| match project_orbit(&m, o, dist.n_views, 0) {
        Ok(t) => t.h.iter().all(|h| h.abs() <= hmax) && t.v.iter().all(|v| v.abs() <= vmax),
        Err(_) => false,
    })
}

const MAX_ATTEMPTS: usize = 100;

/// Draws a scenario; identical seeds give identical scenarios.
pub fn sample_scenario(dist: &ScenarioDistribution, seed: u64) -> Result<Scenario> {
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let width = rng.random_range(dist.detector_width.0..=dist.detector_width.1);
        let height = rng.random_range(dist.detector_height.0..=dist.detector_height.1);
        let h_offset = uniform_sym(&mut rng, dist.h_offset_range);
        let v_offset = uniform_sym(&mut rng, dist.v_offset_range);
        let tilt = uniform_sym(&mut rng, dist.tilt_range);
        let slant_mag = if dist.slant_range > dist.slant_excluded {
            rng.random_range(dist.slant_excluded..=dist.slant_range)
        } else {
            dist.slant_range
        };
        let slant = if rng.random::<bool>() { slant_mag } else { -slant_mag };
        let rotation = uniform_sym(&mut rng, dist.rotation_range);
        let params = ScanParameters {
            detector_width: width,
            detector_height: height,
            h_offset,
            v_offset,
            tilt,
            slant,
            rotation,
        };
        let geometry = detector_geometry(dist.sdd, &params)?;

        let k = dist.n_markers;
        let mut orbits = Vec::with_capacity(k);
        for i in 0..k {
            let centre = -dist.z_extent + 2.0 * dist.z_extent * i as f64 / (k - 1) as f64;
            let z = normal(&mut rng, centre, dist.z_sigma)?;
            let mut r = normal(&mut rng, dist.radius_mean, dist.radius_sigma)?;
            let mut tries = 0;
            while r <= 0.0 {
                tries += 1;
                if tries > MAX_ATTEMPTS {
                    return Err(CalibError::Sampling("marker radius repeatedly non-positive".into()));
                }
                r = normal(&mut rng, dist.radius_mean, dist.radius_sigma)?;
            }
            let phi0 = rng.random_range(0.0..std::f64::consts::TAU);
            orbits.push(HomogeneousOrbit::new(r, z, 1.0, phi0)?);
        }
        if within_bounds(&geometry, &orbits, &params, dist) {
            return Ok(Scenario { geometry, orbits, parameters: params, seed });
        }
    }
    Err(CalibError::Sampling(format!("{MAX_ATTEMPTS} consecutive scenarios rejected")))
}

/// Projects every marker and adds independent Gaussian noise to each sample.
pub fn simulate_tracks(sc: &Scenario, n_views: usize, noise_sigma: f64, seed: u64) -> Result<Vec<TrackSamples>> {
    let m = sc.geometry.to_matrix()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise_sigma).map_err(|e| CalibError::Sampling(e.to_string()))?)
    } else {
        None
    };
    sc.orbits
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut t = project_orbit(&m, o, n_views, i as u32)?;
            if let Some(n) = &noise {
                for x in t.h.iter_mut().chain(t.v.iter_mut()) {
                    *x += n.sample(&mut rng);
                }
            }
            Ok(t)
        })
        .collect()
}

/// Signed errors of the reported quantities (recovered minus true). SDD in
/// percent, shifts in pixels, angles in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub sdd_percent: f64,
    pub h_shift: f64,
    pub v_shift: f64,
    pub slant: f64,
    pub rotation: f64,
    pub tilt: f64,
}

pub const QUANTITIES: [&str; 6] = ["sdd_percent", "h_shift", "v_shift", "slant", "rotation", "tilt"];

impl ErrorRecord {
    pub fn values(&self) -> [f64; 6] {
        [self.sdd_percent, self.h_shift, self.v_shift, self.slant, self.rotation, self.tilt]
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + 180.0).rem_euclid(360.0) - 180.0
}

/// Compares a recovered geometry with the truth after normalizing both to
/// the known pixel pitch and to the source-on-`y` gauge.
pub fn evaluate_errors(
    truth: &RealSpaceGeometry,
    recovered: &RealSpaceGeometry,
    pixel_pitch: f64,
) -> Result<ErrorRecord> {
    let t = report_angles(&normalize_gauge(truth, pixel_pitch)?)?;
    let r = report_angles(&normalize_gauge(recovered, pixel_pitch)?)?;
    Ok(difference(&t, &r))
}

fn difference(t: &ReportAngles, r: &ReportAngles) -> ErrorRecord {
    ErrorRecord {
        sdd_percent: 100.0 * (r.sdd - t.sdd) / t.sdd,
        h_shift: r.h_shift - t.h_shift,
        v_shift: r.v_shift - t.v_shift,
        slant: angle_diff(r.slant_phi, t.slant_phi),
        rotation: angle_diff(r.inplane_eta, t.inplane_eta),
        tilt: angle_diff(r.tilt_theta, t.tilt_theta),
    }
}

/// Options of the end-to-end pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub solver: SolverConfig,
    pub mode: AmbiguityMode,
    pub aspect_ratio: f64,
    pub fit: FitOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            solver: SolverConfig::default(),
            mode: AmbiguityMode::Full,
            aspect_ratio: 1.0,
            fit: FitOptions::default(),
        }
    }
}

/// Calibrated geometry from tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub result: crate::solver::CalibrationResult,
    pub resolution: crate::homography::AmbiguityResolution,
    pub geometry: RealSpaceGeometry,
}

/// Calibration, ambiguity resolution and conversion to real space.
pub fn run_pipeline(tracks: &[TrackSamples], opts: &PipelineOptions) -> Result<PipelineOutput> {
    let raw = calibrate(tracks, &opts.solver)?;
    let (result, resolution) = fix_ambiguities(&raw, opts.aspect_ratio, opts.mode, &opts.fit)?;
    let geometry = crate::geometry::matrix_to_geometry(&result.matrix)?;
    Ok(PipelineOutput { result, resolution, geometry })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub distribution: ScenarioDistribution,
    pub pipeline: PipelineOptions,
    /// Bins per histogram, spanning twice the reference half-width each side.
    pub histogram_bins: usize,
    pub threads: Option<usize>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            n_trials: 10_000,
            seed: 0,
            distribution: ScenarioDistribution::default(),
            pipeline: PipelineOptions::default(),
            histogram_bins: 50,
            threads: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub slant: f64,
    pub errors: Option<ErrorRecord>,
    pub degenerate: bool,
    pub converged: bool,
    pub iterations: usize,
    pub failure: Option<String>,
}

const PURPOSE_SCENARIO: u64 = 1;
const PURPOSE_NOISE: u64 = 2;

/// Scenario and noisy tracks of trial `trial` under master seed `seed`.
pub fn trial_inputs(dist: &ScenarioDistribution, seed: u64, trial: usize) -> Result<(Scenario, Vec<TrackSamples>)> {
    let sc = sample_scenario(dist, mix_seed(seed, trial as u64, PURPOSE_SCENARIO))?;
    let tracks = simulate_tracks(&sc, dist.n_views, dist.noise_sigma, mix_seed(seed, trial as u64, PURPOSE_NOISE))?;
    Ok((sc, tracks))
}

/// One end-to-end trial with its own seed streams.
pub fn run_trial(cfg: &MonteCarloConfig, trial: usize) -> TrialRecord {
    let seed = mix_seed(cfg.seed, trial as u64, 0);
    let mut rec = TrialRecord {
        trial,
        seed,
        slant: f64::NAN,
        errors: None,
        degenerate: false,
        converged: false,
        iterations: 0,
        failure: None,
    };
    let outcome = (|| -> Result<()> {
        let (sc, tracks) = trial_inputs(&cfg.distribution, cfg.seed, trial)?;
        rec.slant = sc.parameters.slant;
        let out = run_pipeline(&tracks, &cfg.pipeline)?;
        rec.degenerate = out.resolution.tilt_degenerate;
        rec.converged = out.result.converged;
        rec.iterations = out.result.iterations;
        rec.errors = Some(evaluate_errors(&sc.geometry, &out.geometry, 1.0)?);
        Ok(())
    })();
    if let Err(e) = outcome {
        rec.failure = Some(e.to_string());
    }
    rec
}

/// Central interval of one quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub quantity: String,
    pub p01: f64,
    pub p99: f64,
    /// `max(|p01|, |p99|)`.
    pub half_width: f64,
    pub median: f64,
    pub p75_abs: f64,
    pub p999_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub quantity: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub n_trials: usize,
    pub n_markers: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub n_failed: usize,
    pub n_degenerate: usize,
    pub n_unconverged: usize,
    pub intervals: Vec<IntervalStats>,
    pub histograms: Vec<Histogram>,
    pub failures: Vec<(usize, String)>,
}

/// Reference 98% half-widths for 4 and 2 markers, in the units of
/// [`ErrorRecord`].
pub const REFERENCE_4_MARKERS: [f64; 6] = [0.3, 0.13, 1.7, 0.14, 0.01, 1.6];
pub const REFERENCE_2_MARKERS: [f64; 6] = [0.5, 0.22, 3.6, 0.27, 0.02, 2.3];

pub fn reference_intervals(n_markers: usize) -> [f64; 6] {
    if n_markers <= 2 {
        REFERENCE_2_MARKERS
    } else {
        REFERENCE_4_MARKERS
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn interval_stats(quantity: &str, values: &[f64]) -> IntervalStats {
    let s = sorted(values.to_vec());
    let a = sorted(values.iter().map(|x| x.abs()).collect());
    let (p01, p99) = (percentile(&s, 0.01), percentile(&s, 0.99));
    IntervalStats {
        quantity: quantity.to_string(),
        p01,
        p99,
        half_width: p01.abs().max(p99.abs()),
        median: percentile(&s, 0.5),
        p75_abs: percentile(&a, 0.75),
        p999_abs: percentile(&a, 0.999),
    }
}

pub fn histogram(quantity: &str, values: &[f64], half_width: f64, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let step = 2.0 * half_width / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| -half_width + k as f64 * step).collect();
    let mut counts = vec![0u64; bins];
    let (mut underflow, mut overflow) = (0, 0);
    for &x in values {
        if x < -half_width {
            underflow += 1;
        } else if x >= half_width {
            overflow += 1;
        } else {
            let k = (((x + half_width) / step) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    Histogram { quantity: quantity.to_string(), edges, counts, underflow, overflow }
}

/// Aggregates trial records (in any order) into a report.
pub fn summarize(cfg: &MonteCarloConfig, mut records: Vec<TrialRecord>) -> MonteCarloReport {
    records.sort_by_key(|r| r.trial);
    let ok: Vec<ErrorRecord> = records.iter().filter_map(|r| r.errors).collect();
    let reference = reference_intervals(cfg.distribution.n_markers);
    let mut intervals = Vec::new();
    let mut histograms = Vec::new();
    for (q, name) in QUANTITIES.iter().enumerate() {
        let vals: Vec<f64> = ok.iter().map(|e| e.values()[q]).collect();
        intervals.push(interval_stats(name, &vals));
        histograms.push(histogram(name, &vals, 2.0 * reference[q], cfg.histogram_bins));
    }
    MonteCarloReport {
        n_trials: records.len(),
        n_markers: cfg.distribution.n_markers,
        noise_sigma: cfg.distribution.noise_sigma,
        seed: cfg.seed,
        n_failed: records.iter().filter(|r| r.errors.is_none()).count(),
        n_degenerate: records.iter().filter(|r| r.degenerate).count(),
        n_unconverged: records.iter().filter(|r| r.errors.is_some() && !r.converged).count(),
        intervals,
        histograms,
        failures: records.iter().filter_map(|r| r.failure.clone().map(|f| (r.trial, f))).collect(),
    }
}

/// Runs all trials (in parallel) and returns the per-trial records sorted by
/// trial index.
pub fn run_trials(cfg: &MonteCarloConfig) -> Result<Vec<TrialRecord>> {
    cfg.distribution.validate()?;
    cfg.pipeline.solver.validate()?;
    let work = || (0..cfg.n_trials).into_par_iter().map(|t| run_trial(cfg, t)).collect::<Vec<_>>();
    let mut records = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CalibError::InvalidConfig(e.to_string()))?
            .install(work),
        None => work(),
    };
    records.sort_by_key(|r| r.trial);
    Ok(records)
}

pub fn run_montecarlo(cfg: &MonteCarloConfig) -> Result<MonteCarloReport> {
    if cfg.n_trials < 100 {
        return Err(CalibError::InvalidConfig(format!("{} trials, at least 100 required", cfg.n_trials)));
    }
    Ok(summarize(cfg, run_trials(cfg)?))
}

/// Histogram CSV with header `quantity,bin_left,bin_right,count`.
pub fn write_histogram_csv<W: std::io::Write>(report: &MonteCarloReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "bin_left", "bin_right", "count"])?;
    for h in &report.histograms {
        for (k, c) in h.counts.iter().enumerate() {
            w.write_record([h.quantity.clone(), h.edges[k].to_string(), h.edges[k + 1].to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
