//! Self-consistent solution of the calibration equations
//! `r'_i P_ma = a_im` and `P_m3 z'_i + P_m4 w_i = o_im` (with `o_iw = 1`).

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::extraction::extract_all;
use crate::geometry::ProjectionMatrix;
use crate::trajectory::{params_from_matrix_and_orbit, wrap_phase, HomogeneousOrbit, SinusoidParams, TrackSamples};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub lambda_w: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Stop once the residual improves by less than this fraction over
    /// `PLATEAU_WINDOW` sweeps.
    pub plateau_tol: f64,
}

pub const PLATEAU_WINDOW: usize = 100;

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { lambda: 0.9, lambda_w: 0.9, max_iter: 20000, rel_tol: 1e-12, plateau_tol: 1e-5 }
    }
}

impl SolverConfig {
    /// Detector held parallel to the rotation axis (`w` frozen at 1).
    pub fn zero_tilt(self) -> Self {
        SolverConfig { lambda_w: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CalibError::InvalidConfig(format!("lambda = {} outside [0, 1]", self.lambda)));
        }
        if !(0.0..=self.lambda).contains(&self.lambda_w) {
            return Err(CalibError::InvalidConfig(format!(
                "lambda_w = {} outside [0, lambda = {}]",
                self.lambda_w, self.lambda
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(CalibError::InvalidConfig("rel_tol must be positive".into()));
        }
        if !(self.plateau_tol >= 0.0) {
            return Err(CalibError::InvalidConfig("plateau_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Unknowns of the calibration equations; row index `m` runs over h, v, w.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub r_prime: Vec<f64>,
    pub z_prime: Vec<f64>,
    pub w: Vec<f64>,
    pub p_a: [f64; 3],
    pub p_3: [f64; 3],
    pub p_4: [f64; 3],
}

impl SolverState {
    pub fn n_markers(&self) -> usize {
        self.r_prime.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub matrix: ProjectionMatrix,
    pub orbits: Vec<HomogeneousOrbit>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn amplitudes(sp: &SinusoidParams) -> [f64; 3] {
    [sp.a_h, sp.a_v, sp.a_w]
}

fn offsets(sp: &SinusoidParams) -> [f64; 3] {
    [sp.o_h, sp.o_v, 1.0]
}

/// Closed-form starting point: the exact solution for an aligned system.
pub fn initialize(obs: &[SinusoidParams]) -> Result<SolverState> {
    let n = obs.len();
    if n < 2 {
        return Err(CalibError::RankDeficient(format!(
            "{n} marker(s): the offset equations need at least two distinct orbits"
        )));
    }
    for sp in obs {
        sp.validate()?;
    }
    let r_prime: Vec<f64> = obs.iter().map(|sp| sp.a_h).collect();
    let z_prime: Vec<f64> = obs.iter().map(|sp| sp.o_v).collect();
    let w = vec![1.0; n];

    let rr: f64 = r_prime.iter().map(|r| r * r).sum();
    if !(rr > 0.0) {
        return Err(CalibError::RankDeficient("all horizontal amplitudes vanish".into()));
    }
    let z_mean = z_prime.iter().sum::<f64>() / n as f64;
    let zz: f64 = z_prime.iter().map(|z| (z - z_mean).powi(2)).sum();
    let z_span = z_prime.iter().fold(0.0f64, |a, z| a.max(z.abs()));
    if !(zz > 1e-24 * z_span * z_span * n as f64) || zz == 0.0 {
        return Err(CalibError::RankDeficient(
            "vertical offsets of all markers coincide; z' regression is singular".into(),
        ));
    }

    let mut p_a = [0.0; 3];
    let mut p_3 = [0.0; 3];
    let mut p_4 = [0.0; 3];
    for m in 0..3 {
        p_a[m] = obs.iter().zip(&r_prime).map(|(sp, r)| r * amplitudes(sp)[m]).sum::<f64>() / rr;
        let o_mean = obs.iter().map(|sp| offsets(sp)[m]).sum::<f64>() / n as f64;
        p_3[m] = obs.iter().zip(&z_prime).map(|(sp, z)| (z - z_mean) * (offsets(sp)[m] - o_mean)).sum::<f64>() / zz;
        p_4[m] = o_mean - p_3[m] * z_mean;
    }
    Ok(SolverState { r_prime, z_prime, w, p_a, p_3, p_4 })
}

/// Largest violation of the calibration equations, each relative to
/// `|rhs| + 1`.
pub fn residual(state: &SolverState, obs: &[SinusoidParams]) -> f64 {
    let mut r = 0.0f64;
    for (i, sp) in obs.iter().enumerate() {
        let (a, o) = (amplitudes(sp), offsets(sp));
        for m in 0..3 {
            let ea = state.r_prime[i] * state.p_a[m] - a[m];
            let eo = state.p_3[m] * state.z_prime[i] + state.p_4[m] * state.w[i] - o[m];
            r = r.max(ea.abs() / (a[m].abs() + 1.0)).max(eo.abs() / (o[m].abs() + 1.0));
        }
    }
    r
}

/// One synchronous sweep of the damped, weighted update rules. Returns the
/// new state, its residual and the largest relative parameter change.
pub fn iterate(state: &SolverState, obs: &[SinusoidParams], config: &SolverConfig) -> (SolverState, f64, f64) {
    let n = state.n_markers();
    let lam = config.lambda;
    let lam_w = config.lambda_w;
    let s = state;

    // o_im - (P_m3 z'_i + P_m4 w_i), all from iteration k
    let err: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let o = offsets(&obs[i]);
            std::array::from_fn(|m| o[m] - (s.p_3[m] * s.z_prime[i] + s.p_4[m] * s.w[i]))
        })
        .collect();

    let pa2: f64 = s.p_a.iter().map(|p| p * p).sum();
    let p34: f64 = (0..3).map(|m| s.p_3[m].powi(2) + s.p_4[m].powi(2)).sum();
    let rr: f64 = s.r_prime.iter().map(|r| r * r).sum();
    let zw: f64 = (0..n).map(|i| s.z_prime[i].powi(2) + s.w[i].powi(2)).sum();

    let mut next = s.clone();
    for i in 0..n {
        let a = amplitudes(&obs[i]);
        if pa2 > 0.0 {
            let target = (0..3).map(|m| s.p_a[m] * a[m]).sum::<f64>() / pa2;
            next.r_prime[i] = (1.0 - lam) * s.r_prime[i] + lam * target;
        }
        if p34 > 0.0 {
            let dz = (0..3).map(|m| s.p_3[m] * err[i][m]).sum::<f64>() / p34;
            let dw = (0..3).map(|m| s.p_4[m] * err[i][m]).sum::<f64>() / p34;
            next.z_prime[i] = s.z_prime[i] + lam * dz;
            next.w[i] = s.w[i] + lam_w * dw;
        }
    }
    for m in 0..3 {
        if rr > 0.0 {
            let target = (0..n).map(|i| s.r_prime[i] * amplitudes(&obs[i])[m]).sum::<f64>() / rr;
            next.p_a[m] = (1.0 - lam) * s.p_a[m] + lam * target;
        }
        if zw > 0.0 {
            let d3 = (0..n).map(|i| s.z_prime[i] * err[i][m]).sum::<f64>() / zw;
            let d4 = (0..n).map(|i| s.w[i] * err[i][m]).sum::<f64>() / zw;
            next.p_3[m] = s.p_3[m] + lam * d3;
            next.p_4[m] = s.p_4[m] + lam * d4;
        }
    }

    let res = residual(&next, obs);
    let change = max_relative_change(s, &next);
    (next, res, change)
}

fn max_relative_change(a: &SolverState, b: &SolverState) -> f64 {
    fn block(x: &[f64], y: &[f64]) -> f64 {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        x.iter().zip(y).fold(0.0f64, |m, (p, q)| m.max((p - q).abs() / scale))
    }
    // z' and w share a projective frame, as do P_m3 and P_m4
    let zw_a: Vec<f64> = a.z_prime.iter().chain(&a.w).copied().collect();
    let zw_b: Vec<f64> = b.z_prime.iter().chain(&b.w).copied().collect();
    let p34_a: Vec<f64> = a.p_3.iter().chain(&a.p_4).copied().collect();
    let p34_b: Vec<f64> = b.p_3.iter().chain(&b.p_4).copied().collect();
    block(&a.r_prime, &b.r_prime).max(block(&a.p_a, &b.p_a)).max(block(&zw_a, &zw_b)).max(block(&p34_a, &p34_b))
}

/// Row phases `(phi_h, phi_v, phi_w)` with `phi_h = 0` by gauge choice.
pub fn solve_phases(obs: &[SinusoidParams]) -> Result<((f64, f64, f64), Vec<String>)> {
    if obs.is_empty() {
        return Err(CalibError::RankDeficient("no markers".into()));
    }
    let mut warnings = Vec::new();
    let mut mean = |name: &str, f: &dyn Fn(&SinusoidParams) -> (f64, f64)| {
        let (mut re, mut im) = (0.0, 0.0);
        for sp in obs {
            let (d, wgt) = f(sp);
            re += wgt * d.cos();
            im += wgt * d.sin();
        }
        if re == 0.0 && im == 0.0 {
            warnings.push(format!("{name}: all phase weights vanish, phase set to 0"));
            0.0
        } else {
            im.atan2(re)
        }
    };
    let phi_v = mean("phi_v", &|sp| (sp.phi0_v - sp.phi0_h, sp.a_v.powi(2) * sp.a_h.powi(2)));
    let phi_w = mean("phi_w", &|sp| (sp.phi0_w - sp.phi0_h, sp.a_w.powi(2) * sp.a_h.powi(2)));
    Ok(((0.0, phi_v, phi_w), warnings))
}

/// Builds the projection matrix and orbits from a solved state.
pub fn assemble(
    state: &SolverState,
    obs: &[SinusoidParams],
    phases: (f64, f64, f64),
    iterations: usize,
    converged: bool,
) -> Result<CalibrationResult> {
    let phi = [phases.0, phases.1, phases.2];
    let rows: [[f64; 4]; 3] = std::array::from_fn(|m| {
        let (sn, cs) = phi[m].sin_cos();
        [-state.p_a[m] * sn, state.p_a[m] * cs, state.p_3[m], state.p_4[m]]
    });
    let matrix = ProjectionMatrix::from_rows(rows)?;
    let orbits = (0..state.n_markers())
        .map(|i| HomogeneousOrbit::new(state.r_prime[i], state.z_prime[i], state.w[i], wrap_phase(obs[i].phi0_h)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationResult {
        matrix,
        orbits,
        residual: residual(state, obs),
        iterations,
        converged,
        warnings: Vec::new(),
    })
}

/// Runs the sweep until the residual or the step falls below `rel_tol`.
pub fn solve(obs: &[SinusoidParams], config: &SolverConfig) -> Result<CalibrationResult> {
    config.validate()?;
    let mut state = initialize(obs)?;
    let mut res = residual(&state, obs);
    let mut iterations = 0;
    let mut converged = res < config.rel_tol;
    let mut checkpoint = res;
    while !converged && iterations < config.max_iter {
        let (next, r, change) = iterate(&state, obs, config);
        state = next;
        res = r;
        iterations += 1;
        if !state.r_prime.iter().chain(&state.z_prime).chain(&state.w).all(|x| x.is_finite()) {
            return Err(CalibError::OptimizerFailed(format!("solver diverged after {iterations} sweeps")));
        }
        converged = res < config.rel_tol || change < config.rel_tol;
        if iterations % PLATEAU_WINDOW == 0 {
            converged |= checkpoint - res <= config.plateau_tol * res;
            checkpoint = res;
        }
    }
    let (phases, warnings) = solve_phases(obs)?;
    let mut result = assemble(&state, obs, phases, iterations, converged)?;
    result.warnings = warnings;
    if !converged {
        result.warnings.push(format!("not converged after {iterations} sweeps (residual {res:e})"));
    }
    Ok(result)
}

/// Extraction followed by the self-consistent solve.
pub fn calibrate(tracks: &[TrackSamples], config: &SolverConfig) -> Result<CalibrationResult> {
    if tracks.len() < 2 {
        return Err(CalibError::RankDeficient(format!("{} track(s), at least 2 required", tracks.len())));
    }
    solve(&extract_all(tracks)?, config)
}

/// Sinusoid parameters predicted by a result, per marker.
pub fn predicted_params(result: &CalibrationResult) -> Result<Vec<SinusoidParams>> {
    result.orbits.iter().map(|o| params_from_matrix_and_orbit(&result.matrix, o)).collect()
}
