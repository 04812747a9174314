//! Projective ambiguities of the self-consistent solution and their
//! resolution from known detector pixel geometry.
//!
//! The ambiguity is `H = R_z(omega) T_z(dz) S(s_d, s_o) D(delta, gamma)`,
//! acting as `P -> P H^-1` on the matrix and `x -> H x` on world points.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::geometry::{ProjectionMatrix, Vec3};
use crate::solver::CalibrationResult;
use crate::trajectory::{wrap_phase, HomogeneousOrbit};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomographyParams {
    pub omega: f64,
    pub dz: f64,
    pub s_d: f64,
    pub s_o: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl Default for HomographyParams {
    fn default() -> Self {
        HomographyParams { omega: 0.0, dz: 0.0, s_d: 1.0, s_o: 1.0, delta: 1.0, gamma: 0.0 }
    }
}

impl HomographyParams {
    /// Only the `D(delta, gamma)` factor.
    pub fn gamma_delta(gamma: f64, delta: f64) -> Self {
        HomographyParams { gamma, delta, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.omega, self.dz, self.s_d, self.s_o, self.delta, self.gamma];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(CalibError::InvalidConfig("non-finite homography parameter".into()));
        }
        if self.s_d == 0.0 || self.s_o == 0.0 || self.delta == 0.0 {
            return Err(CalibError::InvalidConfig("s_d, s_o and delta must be nonzero".into()));
        }
        Ok(())
    }
}

pub fn rotation_z(omega: f64) -> Matrix4<f64> {
    let (s, c) = omega.sin_cos();
    Matrix4::new(c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
}

pub fn translation_z(dz: f64) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m[(2, 3)] = dz;
    m
}

pub fn scaling(s_d: f64, s_o: f64) -> Matrix4<f64> {
    Matrix4::from_diagonal(&nalgebra::Vector4::new(s_d, s_d, s_d, s_d * s_o))
}

pub fn delta_gamma(delta: f64, gamma: f64) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m[(2, 2)] = 1.0 / delta;
    m[(3, 2)] = gamma;
    m
}

pub fn delta_gamma_inverse(delta: f64, gamma: f64) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m[(2, 2)] = delta;
    m[(3, 2)] = -delta * gamma;
    m
}

/// The homography and its inverse, each assembled from its factors.
pub fn homography_matrix(hp: &HomographyParams) -> Result<(Matrix4<f64>, Matrix4<f64>)> {
    hp.validate()?;
    let h = rotation_z(hp.omega) * translation_z(hp.dz) * scaling(hp.s_d, hp.s_o) * delta_gamma(hp.delta, hp.gamma);
    let inv = delta_gamma_inverse(hp.delta, hp.gamma)
        * scaling(1.0 / hp.s_d, 1.0 / hp.s_o)
        * translation_z(-hp.dz)
        * rotation_z(-hp.omega);
    Ok((h, inv))
}

/// Transforms an orbit in cylinder form: `D` gives `z'/delta, w + gamma z'`,
/// `S` scales, `T_z` adds `dz w` to `z'` and `R_z` moves the phase by `-omega`.
pub fn transform_orbit(o: &HomogeneousOrbit, hp: &HomographyParams) -> Result<HomogeneousOrbit> {
    let z = o.z_prime / hp.delta;
    let w = o.w + hp.gamma * o.z_prime;
    let (r, z, w) = (hp.s_d * o.r_prime, hp.s_d * z, hp.s_d * hp.s_o * w);
    let z = z + hp.dz * w;
    let mut phi0 = o.phi0 - hp.omega;
    if w == 0.0 || !w.is_finite() {
        return Err(CalibError::AtInfinity { w });
    }
    let mut r = r;
    if r / w < 0.0 {
        r = -r;
        phi0 += std::f64::consts::PI;
    }
    HomogeneousOrbit::new(r, z, w, wrap_phase(phi0))
}

/// `(P H^-1, H x_i)`; every projection is left unchanged.
pub fn transform_solution(
    p: &ProjectionMatrix,
    orbits: &[HomogeneousOrbit],
    hp: &HomographyParams,
) -> Result<(ProjectionMatrix, Vec<HomogeneousOrbit>)> {
    let (_, inv) = homography_matrix(hp)?;
    let pt = ProjectionMatrix::new(p.as_matrix() * inv)?;
    let ot = orbits.iter().map(|o| transform_orbit(o, hp)).collect::<Result<Vec<_>>>()?;
    Ok((pt, ot))
}

/// Vectors proportional to `H` and `V` (common, possibly negative factor).
fn strides(rows: &[Vec3; 3]) -> (Vec3, Vec3) {
    (rows[1].cross(&rows[2]), -rows[0].cross(&rows[2]))
}

/// Left 3x3 rows after `D(delta, gamma)`: `P_m3 -> delta (P_m3 - gamma P_m4)`.
fn rows_after(p: &ProjectionMatrix, gamma: f64, delta: f64) -> [Vec3; 3] {
    std::array::from_fn(|m| Vec3::new(p.get(m, 0), p.get(m, 1), delta * (p.get(m, 2) - gamma * p.get(m, 3))))
}

/// Scale `delta` restoring the pixel aspect ratio `epsilon = |H| / |V|` with
/// `gamma = 0`.
pub fn delta_for_aspect(p: &ProjectionMatrix, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(CalibError::InvalidConfig(format!("aspect ratio {epsilon} must be positive")));
    }
    let (h, v) = strides(&rows_after(p, 0.0, 1.0));
    let e2 = epsilon * epsilon;
    let num = h.z * h.z - e2 * v.z * v.z;
    let den = e2 * (v.x * v.x + v.y * v.y) - (h.x * h.x + h.y * h.y);
    let q = num / den;
    if !(q > 0.0) || !q.is_finite() {
        return Err(CalibError::AspectNotCorrectable { radicand: q });
    }
    Ok(q.sqrt())
}

/// Aspect and shear terms of the detector-grid objective.
pub fn objective_terms(p: &ProjectionMatrix, gamma: f64, delta: f64, epsilon: f64, target_shear: f64) -> (f64, f64) {
    let (h, v) = strides(&rows_after(p, gamma, delta));
    let (nh, nv) = (h.norm(), v.norm());
    if !(nh > 0.0 && nv > 0.0) {
        return (f64::INFINITY, f64::INFINITY);
    }
    ((nh - epsilon * nv) / (nh + epsilon * nv), h.dot(&v) / (nh * nv) - target_shear.sin())
}

/// Sum of squared aspect and shear deviations.
pub fn objective(p: &ProjectionMatrix, gamma: f64, delta: f64, epsilon: f64, target_shear: f64) -> f64 {
    let (a, b) = objective_terms(p, gamma, delta, epsilon, target_shear);
    a * a + b * b
}

/// Outcome of the joint `(gamma, delta)` fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaDeltaFit {
    pub gamma: f64,
    pub delta: f64,
    pub objective: f64,
    /// Objective along the flat direction, re-minimized over `delta`.
    pub valley_objective: f64,
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub target_shear: f64,
    /// Offset in scaled `gamma` at which the valley is probed.
    pub probe_step: f64,
    /// Slant (deg) below which the minimum counts as non-unique. The probe
    /// objective grows like `(probe_step * sin(slant))^2`.
    pub degenerate_slant: f64,
    pub max_iter: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { target_shear: 0.0, probe_step: 0.1, degenerate_slant: DEGENERATE_SLANT_DEG, max_iter: 4000 }
    }
}

pub const DEGENERATE_SLANT_DEG: f64 = 0.2;

/// Conditioning factor: `gamma * kappa` is roughly the induced change of the
/// tangent of the detector tilt.
fn gamma_scale(p: &ProjectionMatrix) -> f64 {
    let k = p.get(2, 3).abs() / p.row(2).norm();
    if k.is_finite() && k > 0.0 {
        k
    } else {
        1.0
    }
}

#[derive(Clone, Copy)]
struct Objective2<'a> {
    p: &'a ProjectionMatrix,
    kappa: f64,
    epsilon: f64,
    shear: f64,
}

impl Objective2<'_> {
    fn eval(&self, g_hat: f64, ln_delta: f64) -> f64 {
        let f = objective(self.p, g_hat / self.kappa, ln_delta.exp(), self.epsilon, self.shear);
        if f.is_finite() {
            f
        } else {
            f64::MAX
        }
    }

    fn terms(&self, x: [f64; 2]) -> [f64; 2] {
        let (a, b) = objective_terms(self.p, x[0] / self.kappa, x[1].exp(), self.epsilon, self.shear);
        [a, b]
    }
}

impl CostFunction for Objective2<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(x[0], x[1]))
    }
}

struct DeltaOnly<'a> {
    inner: &'a Objective2<'a>,
    g_hat: f64,
}

impl CostFunction for DeltaOnly<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.inner.eval(self.g_hat, x[0]))
    }
}

fn nelder_mead<C>(cost: C, simplex: Vec<Vec<f64>>, max_iter: u64) -> Result<(Vec<f64>, f64)>
where
    C: CostFunction<Param = Vec<f64>, Output = f64>,
{
    let solver =
        NelderMead::new(simplex).with_sd_tolerance(1e-18).map_err(|e| CalibError::OptimizerFailed(e.to_string()))?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(max_iter))
        .run()
        .map_err(|e| CalibError::OptimizerFailed(e.to_string()))?;
    let state = res.state();
    let best = state.get_best_param().cloned().ok_or_else(|| CalibError::OptimizerFailed("no best point".into()))?;
    Ok((best, state.get_best_cost()))
}

/// Gauss-Newton refinement on the two residual terms; stops when a step no
/// longer lowers the objective.
fn polish(obj: &Objective2, mut x: [f64; 2]) -> [f64; 2] {
    let f = |x: [f64; 2]| {
        let t = obj.terms(x);
        t[0] * t[0] + t[1] * t[1]
    };
    let mut fx = f(x);
    for _ in 0..50 {
        let r = obj.terms(x);
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let h = 1e-6 * (1.0 + x[k].abs());
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let (tp, tm) = (obj.terms(xp), obj.terms(xm));
            for i in 0..2 {
                jac[i][k] = (tp[i] - tm[i]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if !(det.abs() > 0.0) || !det.is_finite() {
            break;
        }
        let dx = [-(jac[1][1] * r[0] - jac[0][1] * r[1]) / det, -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det];
        let cand = [x[0] + dx[0], x[1] + dx[1]];
        let fc = f(cand);
        if !(fc < fx) {
            break;
        }
        x = cand;
        fx = fc;
    }
    x
}

/// Joint fit of `gamma` and `delta` to a known pixel aspect ratio and
/// row/column angle. Starts a simplex search from a 3x3 grid in
/// `(gamma * kappa, ln delta)`, keeps the best minimum and probes the
/// valley to flag a non-unique solution.
pub fn fit_gamma_delta(p: &ProjectionMatrix, epsilon: f64, opts: &FitOptions) -> Result<GammaDeltaFit> {
    if !(epsilon > 0.0) {
        return Err(CalibError::InvalidConfig(format!("aspect ratio {epsilon} must be positive")));
    }
    let obj = Objective2 { p, kappa: gamma_scale(p), epsilon, shear: opts.target_shear };
    let mut best: Option<([f64; 2], f64)> = None;
    for g0 in [-0.5, 0.0, 0.5] {
        for d0 in [0.5f64, 1.0, 2.0] {
            let x0 = vec![g0, d0.ln()];
            let simplex = vec![x0.clone(), vec![g0 + 0.05, x0[1]], vec![g0, x0[1] + 0.1]];
            let (x, _) = nelder_mead(obj, simplex, opts.max_iter)?;
            let x = polish(&obj, [x[0], x[1]]);
            let f = obj.eval(x[0], x[1]);
            let better = match best {
                None => true,
                Some((bx, bf)) => {
                    let tie = (f - bf).abs() <= 1e-24 + 1e-9 * bf.max(f);
                    if tie {
                        x[0].abs() < bx[0].abs()
                    } else {
                        f < bf
                    }
                }
            };
            if better {
                best = Some((x, f));
            }
        }
    }
    let (x, f) = best.expect("grid is non-empty");
    if !(f < 1e-3) || !x.iter().all(|v| v.is_finite()) {
        return Err(CalibError::OptimizerFailed(format!(
            "best objective {f:e} at gamma_hat = {}, ln delta = {}",
            x[0], x[1]
        )));
    }

    let mut valley = f64::INFINITY;
    for sign in [-1.0, 1.0] {
        let g_hat = x[0] + sign * opts.probe_step;
        let cost = DeltaOnly { inner: &obj, g_hat };
        let (_, fp) = nelder_mead(cost, vec![vec![x[1]], vec![x[1] + 0.1]], opts.max_iter)?;
        valley = valley.min(fp);
    }
    Ok(GammaDeltaFit {
        gamma: x[0] / obj.kappa,
        delta: x[1].exp(),
        objective: f,
        valley_objective: valley,
        degenerate: valley < (opts.probe_step * opts.degenerate_slant.to_radians().sin()).powi(2),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmbiguityMode {
    /// `gamma = 0`, `delta` from the aspect ratio alone.
    AspectOnly,
    /// Joint `(gamma, delta)` fit to aspect ratio and orthogonality.
    #[default]
    Full,
}

impl std::str::FromStr for AmbiguityMode {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aspect-only" | "aspect_only" => Ok(AmbiguityMode::AspectOnly),
            "full" => Ok(AmbiguityMode::Full),
            _ => Err(CalibError::InvalidConfig(format!("unknown ambiguity mode {s:?}"))),
        }
    }
}

/// Record of how the `D(delta, gamma)` ambiguity was resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityResolution {
    pub mode: AmbiguityMode,
    pub gamma: f64,
    pub delta: f64,
    pub objective: f64,
    pub tilt_degenerate: bool,
}

/// Applies the fitted `D(delta, gamma)` to a calibration result.
pub fn fix_ambiguities(
    result: &CalibrationResult,
    epsilon: f64,
    mode: AmbiguityMode,
    opts: &FitOptions,
) -> Result<(CalibrationResult, AmbiguityResolution)> {
    let mut warnings = Vec::new();
    let (gamma, delta, degenerate, used) = match mode {
        AmbiguityMode::AspectOnly => (0.0, delta_for_aspect(&result.matrix, epsilon)?, false, mode),
        AmbiguityMode::Full => {
            let fit = fit_gamma_delta(&result.matrix, epsilon, opts)?;
            if fit.degenerate {
                warnings.push(format!(
                    "tilt not determinable (flat objective valley {:e}); falling back to gamma = 0",
                    fit.valley_objective
                ));
                (0.0, delta_for_aspect(&result.matrix, epsilon)?, true, AmbiguityMode::AspectOnly)
            } else {
                (fit.gamma, fit.delta, false, mode)
            }
        }
    };
    let hp = HomographyParams::gamma_delta(gamma, delta);
    let (matrix, orbits) = transform_solution(&result.matrix, &result.orbits, &hp)?;
    let mut out = CalibrationResult { matrix, orbits, ..result.clone() };
    out.warnings.extend(warnings);
    let resolution = AmbiguityResolution {
        mode: used,
        gamma,
        delta,
        objective: objective(&result.matrix, gamma, delta, epsilon, opts.target_shear),
        tilt_degenerate: degenerate,
    };
    Ok((out, resolution))
}
