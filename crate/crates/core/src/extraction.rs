//! Recovery of the eight sinusoid parameters from a sampled track using
//! discrete trigonometric moments.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::trajectory::{SinusoidParams, TrackSamples, MIN_VIEWS};

/// The twelve normalized moment sums of one track component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentSums {
    pub u_bar: f64,
    pub u_s: f64,
    pub u_c: f64,
    pub u_ss: f64,
    pub u_sc: f64,
    pub u_cc: f64,
    pub u_s2: f64,
    pub u_c2: f64,
    pub u_s2s: f64,
    pub u_s2c: f64,
    pub u_sc2: f64,
    pub u_cc2: f64,
}

impl MomentSums {
    /// Determinant of the 2x2 system for the denominator coefficients.
    pub fn det(&self) -> f64 {
        self.u_s2c * self.u_sc2 - self.u_s2s * self.u_cc2
    }

    fn w_numerators(&self) -> (f64, f64) {
        (self.u_cc2 * self.u_s2 - self.u_s2c * self.u_c2, self.u_s2s * self.u_c2 - self.u_sc2 * self.u_s2)
    }

    fn scale(&self) -> f64 {
        self.u_bar.abs() + 2.0 * (self.u_s.abs() + self.u_c.abs() + self.u_s2.abs() + self.u_c2.abs())
    }

    fn is_degenerate(&self) -> bool {
        let s = self.scale();
        !(self.det().abs() > 1e-20 * s * s)
    }

    /// Numerator coefficients given the shared denominator coefficients.
    pub fn numerator(&self, s_w: f64, c_w: f64) -> (f64, f64, f64) {
        (
            s_w * self.u_s + c_w * self.u_c + self.u_bar,
            2.0 * (s_w * self.u_ss + c_w * self.u_sc + self.u_s),
            2.0 * (s_w * self.u_sc + c_w * self.u_cc + self.u_c),
        )
    }
}

/// Moment sums on the canonical grid `phi_j = j 2 pi / N`.
pub fn moment_sums(u: &[f64], n: usize) -> Result<MomentSums> {
    if u.len() != n {
        return Err(CalibError::InvalidTrack(format!("{} samples for N = {}", u.len(), n)));
    }
    moment_sums_at(u, &crate::trajectory::view_angles(n))
}

/// Moment sums at explicit angles.
pub fn moment_sums_at(u: &[f64], phi: &[f64]) -> Result<MomentSums> {
    let n = u.len();
    if phi.len() != n {
        return Err(CalibError::InvalidTrack(format!("{} samples for {} angles", n, phi.len())));
    }
    if n < MIN_VIEWS {
        return Err(CalibError::InvalidTrack(format!(
            "{n} views: harmonics up to the third need at least {MIN_VIEWS}"
        )));
    }
    let mut m = MomentSums::default();
    for (&x, &f) in u.iter().zip(phi) {
        let (s, c) = f.sin_cos();
        let (s2, c2) = (2.0 * s * c, c * c - s * s);
        m.u_bar += x;
        m.u_s += x * s;
        m.u_c += x * c;
        m.u_ss += x * s * s;
        m.u_sc += x * s * c;
        m.u_cc += x * c * c;
        m.u_s2 += x * s2;
        m.u_c2 += x * c2;
        m.u_s2s += x * s2 * s;
        m.u_s2c += x * s2 * c;
        m.u_sc2 += x * s * c2;
        m.u_cc2 += x * c * c2;
    }
    let k = 1.0 / n as f64;
    for f in [
        &mut m.u_bar,
        &mut m.u_s,
        &mut m.u_c,
        &mut m.u_ss,
        &mut m.u_sc,
        &mut m.u_cc,
        &mut m.u_s2,
        &mut m.u_c2,
        &mut m.u_s2s,
        &mut m.u_s2c,
        &mut m.u_sc2,
        &mut m.u_cc2,
    ] {
        *f *= k;
    }
    Ok(m)
}

/// Solves one component on its own: `(s_w, c_w, o_u, s_u, c_u)`.
pub fn solve_component(ms: &MomentSums) -> Result<(f64, f64, f64, f64, f64)> {
    if ms.is_degenerate() {
        return Err(CalibError::DegenerateComponent);
    }
    let det = ms.det();
    let (ns, nc) = ms.w_numerators();
    let (s_w, c_w) = (ns / det, nc / det);
    let (o, s, c) = ms.numerator(s_w, c_w);
    Ok((s_w, c_w, o, s, c))
}

/// Determinant-weighted combination of the denominator coefficients from
/// both components.
pub fn fuse_w(ms_h: &MomentSums, ms_v: &MomentSums) -> Result<(f64, f64)> {
    let mut num_s = 0.0;
    let mut num_c = 0.0;
    let mut den = 0.0;
    for ms in [ms_h, ms_v] {
        if ms.is_degenerate() {
            continue;
        }
        let d = ms.det();
        let (ns, nc) = ms.w_numerators();
        num_s += d * ns;
        num_c += d * nc;
        den += d * d;
    }
    if den == 0.0 {
        return Err(CalibError::NoPerspectiveInformation);
    }
    Ok((num_s / den, num_c / den))
}

fn amp_phase(s: f64, c: f64) -> (f64, f64) {
    (s.hypot(c), (-c).atan2(s))
}

/// Full eight-parameter extraction for one track.
pub fn extract_sinusoid(track: &TrackSamples) -> Result<SinusoidParams> {
    track.validate()?;
    let mh = moment_sums_at(&track.h, &track.phi)?;
    let mv = moment_sums_at(&track.v, &track.phi)?;
    let (s_w, c_w) = fuse_w(&mh, &mv).map_err(|e| match e {
        CalibError::NoPerspectiveInformation => CalibError::InvalidTrack(format!(
            "marker {}: neither component carries perspective information",
            track.marker
        )),
        e => e,
    })?;
    let (o_h, s_h, c_h) = mh.numerator(s_w, c_w);
    let (o_v, s_v, c_v) = mv.numerator(s_w, c_w);
    let (a_h, phi0_h) = amp_phase(s_h, c_h);
    let (a_v, phi0_v) = amp_phase(s_v, c_v);
    let (a_w, phi0_w) = amp_phase(s_w, c_w);
    Ok(SinusoidParams { a_h, a_v, a_w, phi0_h, phi0_v, phi0_w, o_h, o_v })
}

/// Extracts every track in order.
pub fn extract_all(tracks: &[TrackSamples]) -> Result<Vec<SinusoidParams>> {
    tracks.iter().map(extract_sinusoid).collect()
}
