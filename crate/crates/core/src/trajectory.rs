//! Forward model of circular marker orbits seen through a projection matrix.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::geometry::{ProjectionMatrix, Vec3};

/// Spacing tolerance for view angles (rad).
pub const SPACING_TOL: f64 = 1e-9;

/// Minimum number of views: harmonics up to the third enter the extraction.
pub const MIN_VIEWS: usize = 6;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

/// A circular orbit about the `z` axis in homogeneous cylinder coordinates:
/// euclidean radius `r' / w`, height `z' / w`, initial phase `phi0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousOrbit {
    pub r_prime: f64,
    pub z_prime: f64,
    pub w: f64,
    pub phi0: f64,
}

impl HomogeneousOrbit {
    pub fn new(r_prime: f64, z_prime: f64, w: f64, phi0: f64) -> Result<Self> {
        let o = HomogeneousOrbit { r_prime, z_prime, w, phi0 };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.r_prime, self.z_prime, self.w, self.phi0].iter().all(|x| x.is_finite()) {
            return Err(CalibError::InvalidOrbit("non-finite parameter".into()));
        }
        if self.w == 0.0 {
            return Err(CalibError::InvalidOrbit("homogeneous scale w is zero".into()));
        }
        if !(self.radius() > 0.0) {
            return Err(CalibError::InvalidOrbit(format!(
                "radius r'/w = {} must be positive (marker on the rotational axis?)",
                self.radius()
            )));
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        self.r_prime / self.w
    }

    pub fn height(&self) -> f64 {
        self.z_prime / self.w
    }

    /// Same orbit, homogeneous coordinates multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.r_prime * c, self.z_prime * c, self.w * c, self.phi0)
    }

    /// Homogeneous world point at rotation angle `phi`.
    pub fn homogeneous_at(&self, phi: f64) -> Vector4<f64> {
        let (sn, cs) = (phi - self.phi0).sin_cos();
        Vector4::new(self.r_prime * cs, self.r_prime * sn, self.z_prime, self.w)
    }

    /// Euclidean world point at rotation angle `phi`.
    pub fn point_at(&self, phi: f64) -> Vec3 {
        let x = self.homogeneous_at(phi);
        Vec3::new(x.x / x.w, x.y / x.w, x.z / x.w)
    }
}

/// The eight observables of one projected orbit,
/// `u(phi) = (a_u sin(phi - phi0_u) + o_u) / (a_w sin(phi - phi0_w) + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidParams {
    pub a_h: f64,
    pub a_v: f64,
    pub a_w: f64,
    pub phi0_h: f64,
    pub phi0_v: f64,
    pub phi0_w: f64,
    pub o_h: f64,
    pub o_v: f64,
}

impl SinusoidParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_h, self.a_v, self.a_w, self.phi0_h, self.phi0_v, self.phi0_w, self.o_h, self.o_v];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(CalibError::InvalidTrack("non-finite sinusoid parameter".into()));
        }
        if self.a_h < 0.0 || self.a_v < 0.0 || self.a_w < 0.0 {
            return Err(CalibError::InvalidTrack("negative amplitude".into()));
        }
        if self.a_w >= 1.0 {
            return Err(CalibError::InvalidTrack(format!(
                "a_w = {} >= 1: denominator vanishes during the rotation",
                self.a_w
            )));
        }
        Ok(())
    }

    /// Amplitude of row `m` (0 = h, 1 = v, 2 = w).
    pub fn amplitude(&self, m: usize) -> f64 {
        [self.a_h, self.a_v, self.a_w][m]
    }

    /// Offset of row `m`; the denominator offset is fixed to 1.
    pub fn offset(&self, m: usize) -> f64 {
        [self.o_h, self.o_v, 1.0][m]
    }

    pub fn phase(&self, m: usize) -> f64 {
        [self.phi0_h, self.phi0_v, self.phi0_w][m]
    }

    pub fn evaluate(&self, phi: f64) -> (f64, f64) {
        sinusoid_forward(self, phi)
    }
}

/// Samples of one marker track at equally spaced view angles.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackSamples {
    pub marker: u32,
    pub phi: Vec<f64>,
    pub h: Vec<f64>,
    pub v: Vec<f64>,
}

/// View angles `j 2 pi / n` for `j = 0..n`.
pub fn view_angles(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 * TAU / n as f64).collect()
}

impl TrackSamples {
    /// Builds a track on the canonical grid `phi_j = j 2 pi / N`.
    pub fn new(marker: u32, h: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let phi = view_angles(h.len());
        Self::from_parts(marker, phi, h, v)
    }

    /// Builds a track from explicit angles, which must cover the full
    /// rotation with uniform spacing `2 pi / N`.
    pub fn from_parts(marker: u32, phi: Vec<f64>, h: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let t = TrackSamples { marker, phi, h, v };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.phi.len();
        if self.h.len() != n || self.v.len() != n {
            return Err(CalibError::InvalidTrack(format!(
                "marker {}: length mismatch (phi {}, h {}, v {})",
                self.marker,
                n,
                self.h.len(),
                self.v.len()
            )));
        }
        if n < MIN_VIEWS {
            return Err(CalibError::InvalidTrack(format!(
                "marker {}: {} views, at least {} required",
                self.marker, n, MIN_VIEWS
            )));
        }
        let step = TAU / n as f64;
        for (j, pair) in self.phi.windows(2).enumerate() {
            if ((pair[1] - pair[0]) - step).abs() > SPACING_TOL {
                return Err(CalibError::InvalidTrack(format!(
                    "marker {}: views {} and {} are not spaced by 2pi/{}",
                    self.marker,
                    j,
                    j + 1,
                    n
                )));
            }
        }
        if self.phi.iter().chain(&self.h).chain(&self.v).any(|x| !x.is_finite()) {
            return Err(CalibError::InvalidTrack(format!("marker {}: non-finite sample", self.marker)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

/// Row amplitude and phase of the first two matrix columns:
/// `P_m1 cos(x) + P_m2 sin(x) = a sin(x - phase)`.
pub(crate) fn row_amplitude_phase(p_m1: f64, p_m2: f64) -> (f64, f64) {
    (p_m1.hypot(p_m2), (-p_m1).atan2(p_m2))
}

/// Projects an orbit at `n_views` equally spaced angles using the
/// fractions-of-sinusoids form of the projection.
pub fn project_orbit(
    p: &ProjectionMatrix,
    orbit: &HomogeneousOrbit,
    n_views: usize,
    marker: u32,
) -> Result<TrackSamples> {
    orbit.validate()?;
    let rows: [(f64, f64, f64); 3] = std::array::from_fn(|m| {
        let (a, ph) = row_amplitude_phase(p.get(m, 0), p.get(m, 1));
        (orbit.r_prime * a, ph, p.get(m, 2) * orbit.z_prime + p.get(m, 3) * orbit.w)
    });
    let phi = view_angles(n_views);
    let mut h = Vec::with_capacity(n_views);
    let mut v = Vec::with_capacity(n_views);
    let scale = rows[2].0.abs() + rows[2].2.abs();
    for (j, &f) in phi.iter().enumerate() {
        let comp = |(amp, ph, off): (f64, f64, f64)| amp * (f - orbit.phi0 - ph).sin() + off;
        let den = comp(rows[2]);
        if !(den.abs() > 1e-14 * scale) {
            return Err(CalibError::VanishingDenominator { view: j, phi: f });
        }
        h.push(comp(rows[0]) / den);
        v.push(comp(rows[1]) / den);
    }
    TrackSamples::from_parts(marker, phi, h, v)
}

/// Evaluates the sinusoid model at one angle.
pub fn sinusoid_forward(sp: &SinusoidParams, phi: f64) -> (f64, f64) {
    let den = sp.a_w * (phi - sp.phi0_w).sin() + 1.0;
    ((sp.a_h * (phi - sp.phi0_h).sin() + sp.o_h) / den, (sp.a_v * (phi - sp.phi0_v).sin() + sp.o_v) / den)
}

/// Observable sinusoid parameters of an orbit projected by `p`, normalized
/// so that the constant term of the denominator equals 1.
pub fn params_from_matrix_and_orbit(p: &ProjectionMatrix, orbit: &HomogeneousOrbit) -> Result<SinusoidParams> {
    orbit.validate()?;
    let den = p.get(2, 2) * orbit.z_prime + p.get(2, 3) * orbit.w;
    let scale = p.get(2, 2).abs() * orbit.z_prime.abs() + p.get(2, 3).abs() * orbit.w.abs();
    if !(den.abs() > 1e-14 * scale) {
        return Err(CalibError::InvalidOrbit(format!(
            "denominator offset P33 z' + P34 w = {den:e} cannot be normalized"
        )));
    }
    let k = orbit.r_prime / den;
    let amp_phase = |m: usize| {
        // r'/D may be negative; fold the sign into the phase
        let (a, ph) = row_amplitude_phase(k * p.get(m, 0), k * p.get(m, 1));
        (a, wrap_phase(orbit.phi0 + ph))
    };
    let (a_h, phi0_h) = amp_phase(0);
    let (a_v, phi0_v) = amp_phase(1);
    let (a_w, phi0_w) = amp_phase(2);
    Ok(SinusoidParams {
        a_h,
        a_v,
        a_w,
        phi0_h,
        phi0_v,
        phi0_w,
        o_h: (p.get(0, 2) * orbit.z_prime + p.get(0, 3) * orbit.w) / den,
        o_v: (p.get(1, 2) * orbit.z_prime + p.get(1, 3) * orbit.w) / den,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_point, ProjectionMatrix};
    use approx::assert_relative_eq;

    fn aligned_matrix() -> ProjectionMatrix {
        ProjectionMatrix::from_rows([[10000.0, 0.0, 0.0, 0.0], [0.0, 0.0, 10000.0, 0.0], [0.0, -1.0, 0.0, 5000.0]])
            .unwrap()
    }

    fn oblique_matrix() -> ProjectionMatrix {
        ProjectionMatrix::from_rows([
            [9800.0, 1200.0, -35.0, 2.1e5],
            [-40.0, 310.0, 10020.0, -3.3e5],
            [0.12, -0.99, 0.02, 6100.0],
        ])
        .unwrap()
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert_relative_eq!(wrap_phase(3.0 * PI + 0.1), -PI + 0.1, epsilon = 1e-12);
        assert_relative_eq!(wrap_phase(-0.5), -0.5);
    }

    #[test]
    fn aligned_orbit_closed_form() {
        let p = aligned_matrix();
        let orbit = HomogeneousOrbit::new(100.0, 50.0, 1.0, 0.0).unwrap();
        let t = project_orbit(&p, &orbit, 8, 0).unwrap();
        for j in 0..8 {
            let f = t.phi[j];
            let den = 1.0 - 0.02 * f.sin();
            assert_relative_eq!(t.h[j], 200.0 * f.cos() / den, epsilon = 1e-12);
            assert_relative_eq!(t.v[j], 100.0 / den, epsilon = 1e-12);
            let (h, v) = project_point(&p, &orbit.point_at(f)).unwrap();
            assert_relative_eq!(t.h[j], h, epsilon = 1e-12);
            assert_relative_eq!(t.v[j], v, epsilon = 1e-12);
        }
        assert_relative_eq!(t.h[0], 200.0, epsilon = 1e-12);
    }

    #[test]
    fn orbit_on_axis_rejected() {
        assert!(HomogeneousOrbit::new(0.0, 50.0, 1.0, 0.0).is_err());
        assert!(HomogeneousOrbit::new(10.0, 50.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn homogeneous_scaling_leaves_track_unchanged() {
        let p = oblique_matrix();
        let o = HomogeneousOrbit::new(700.0, -320.0, 1.0, 0.4).unwrap();
        let a = project_orbit(&p, &o, 36, 1).unwrap();
        let b = project_orbit(&p, &o.scaled(3.0).unwrap(), 36, 1).unwrap();
        for j in 0..36 {
            assert_relative_eq!(a.h[j], b.h[j], max_relative = 1e-13);
            assert_relative_eq!(a.v[j], b.v[j], max_relative = 1e-13);
        }
    }

    #[test]
    fn sinusoid_forward_examples() {
        let sp = SinusoidParams {
            a_h: 200.0,
            a_v: 0.0,
            a_w: 0.02,
            phi0_h: -PI / 2.0,
            phi0_v: 0.0,
            phi0_w: PI,
            o_h: 0.0,
            o_v: 100.0,
        };
        let (h, v) = sinusoid_forward(&sp, 0.0);
        assert_relative_eq!(h, 200.0, epsilon = 1e-12);
        assert_relative_eq!(v, 100.0, epsilon = 1e-12);

        let flat = SinusoidParams { a_h: 0.0, a_v: 0.0, a_w: 0.0, o_h: 3.0, o_v: -4.0, ..sp };
        assert_eq!(sinusoid_forward(&flat, 1.234), (3.0, -4.0));

        let ortho = SinusoidParams { a_w: 0.0, ..sp };
        let (h, _) = sinusoid_forward(&ortho, 0.7);
        assert_relative_eq!(h, 200.0 * 0.7f64.cos(), epsilon = 1e-12);
    }

    #[test]
    fn aligned_params_by_hand() {
        let sp =
            params_from_matrix_and_orbit(&aligned_matrix(), &HomogeneousOrbit::new(100.0, 50.0, 1.0, 0.0).unwrap())
                .unwrap();
        assert_relative_eq!(sp.a_h, 200.0, epsilon = 1e-12);
        assert_eq!(sp.a_v, 0.0);
        assert_relative_eq!(sp.a_w, 0.02, epsilon = 1e-15);
        assert_eq!(sp.o_h, 0.0);
        assert_relative_eq!(sp.o_v, 100.0, epsilon = 1e-12);
        assert_relative_eq!(sp.phi0_h, -PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(sp.phi0_w, PI, epsilon = 1e-15);
    }

    #[test]
    fn two_routes_agree() {
        let p = oblique_matrix();
        for o in [
            HomogeneousOrbit::new(700.0, -320.0, 1.0, 0.4).unwrap(),
            HomogeneousOrbit::new(-2.0, 0.3, -0.004, -2.0).unwrap(),
            HomogeneousOrbit::new(950.0, 0.0, 1.0, 3.0).unwrap(),
        ] {
            let sp = params_from_matrix_and_orbit(&p, &o).unwrap();
            sp.validate().unwrap();
            let t = project_orbit(&p, &o, 120, 0).unwrap();
            for j in 0..120 {
                let (h, v) = sinusoid_forward(&sp, t.phi[j]);
                assert_relative_eq!(h, t.h[j], max_relative = 1e-12, epsilon = 1e-9);
                assert_relative_eq!(v, t.v[j], max_relative = 1e-12, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn matrix_scale_does_not_change_params() {
        let p = oblique_matrix();
        let o = HomogeneousOrbit::new(700.0, -320.0, 1.0, 0.4).unwrap();
        let a = params_from_matrix_and_orbit(&p, &o).unwrap();
        let b = params_from_matrix_and_orbit(&p.scaled(-7.5).unwrap(), &o).unwrap();
        assert_relative_eq!(a.a_h, b.a_h, max_relative = 1e-14);
        assert_relative_eq!(a.a_w, b.a_w, max_relative = 1e-14);
        assert_relative_eq!(a.o_v, b.o_v, max_relative = 1e-14);
        assert_relative_eq!(a.phi0_v, b.phi0_v, epsilon = 1e-14);
        assert_relative_eq!(a.phi0_w, b.phi0_w, epsilon = 1e-14);
    }

    #[test]
    fn track_validation() {
        assert!(TrackSamples::new(0, vec![0.0; 5], vec![0.0; 5]).is_err());
        assert!(TrackSamples::new(0, vec![0.0; 6], vec![0.0; 7]).is_err());
        let mut phi = view_angles(12);
        phi[4] += 1e-6;
        assert!(TrackSamples::from_parts(0, phi, vec![0.0; 12], vec![0.0; 12]).is_err());
        let shifted: Vec<f64> = view_angles(12).iter().map(|p| p + 0.3).collect();
        assert!(TrackSamples::from_parts(0, shifted, vec![0.0; 12], vec![0.0; 12]).is_ok());
    }
}
