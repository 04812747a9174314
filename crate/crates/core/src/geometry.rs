//! Projection matrices, real-space detector geometry and the conversions
//! between them.
//!
//! Lengths are in detector pixels. The rotational axis of the scan is the
//! world `z` axis and the world origin is the centre of the field of view.
//!
//! A [`RealSpaceGeometry`] places the source at `s`, the detector pixel
//! `(0, 0)` at `d` and spans the detector plane by the row stride `H` and the
//! column stride `V`, so pixel `(h, v)` sits at `d + h H + v V`.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};

pub type Vec3 = Vector3<f64>;

/// Relative threshold under which a determinant-like quantity counts as zero.
const SINGULAR_EPS: f64 = 1e-14;

/// A 3x4 homogeneous perspective projection, defined up to a nonzero scalar.
/// Serialized as three rows of four numbers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[[f64; 4]; 3]", try_from = "[[f64; 4]; 3]")]
pub struct ProjectionMatrix(Matrix3x4<f64>);

impl From<ProjectionMatrix> for [[f64; 4]; 3] {
    fn from(p: ProjectionMatrix) -> Self {
        p.rows()
    }
}

impl TryFrom<[[f64; 4]; 3]> for ProjectionMatrix {
    type Error = CalibError;

    fn try_from(rows: [[f64; 4]; 3]) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl ProjectionMatrix {
    /// Wraps a matrix after checking that it is finite and that its left
    /// 3x3 block has full rank.
    pub fn new(m: Matrix3x4<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(CalibError::SingularMatrix("non-finite entry".into()));
        }
        let p = ProjectionMatrix(m);
        let det = p.left_block().determinant();
        let bound = p.row(0).norm() * p.row(1).norm() * p.row(2).norm();
        if !(det.abs() > SINGULAR_EPS * bound) {
            return Err(CalibError::SingularMatrix(format!("left 3x3 block has determinant {det:e}")));
        }
        Ok(p)
    }

    pub fn from_rows(rows: [[f64; 4]; 3]) -> Result<Self> {
        Self::new(Matrix3x4::from_fn(|r, c| rows[r][c]))
    }

    pub fn rows(&self) -> [[f64; 4]; 3] {
        let m = &self.0;
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    pub fn as_matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Entry `P_mn` with zero-based indices.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    /// First three entries of row `m` (zero-based).
    pub fn row(&self, m: usize) -> Vec3 {
        Vec3::new(self.0[(m, 0)], self.0[(m, 1)], self.0[(m, 2)])
    }

    /// The fourth column.
    pub fn offset_column(&self) -> Vec3 {
        Vec3::new(self.0[(0, 3)], self.0[(1, 3)], self.0[(2, 3)])
    }

    pub fn left_block(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Multiplies every entry by `c`. The projection is unchanged for `c != 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0 * c)
    }

    /// Canonical representative of the equivalence class: unit Frobenius
    /// norm and `P_34 > 0`.
    pub fn normalized(&self) -> Self {
        let mut m = self.0 / self.0.norm();
        if m[(2, 3)] < 0.0 {
            m = -m;
        }
        ProjectionMatrix(m)
    }

    /// Applies the matrix to a homogeneous world point.
    pub fn apply(&self, x: &Vector4<f64>) -> Vec3 {
        self.0 * x
    }

    /// Projects a euclidean point to detector coordinates `(h, v)`.
    pub fn project(&self, p: &Vec3) -> Result<(f64, f64)> {
        project_point(self, p)
    }
}

/// Source, detector origin and detector strides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealSpaceGeometry {
    #[serde(with = "vec3_serde")]
    pub s: Vec3,
    #[serde(with = "vec3_serde")]
    pub d: Vec3,
    #[serde(rename = "H", with = "vec3_serde")]
    pub h: Vec3,
    #[serde(rename = "V", with = "vec3_serde")]
    pub v: Vec3,
}

impl RealSpaceGeometry {
    pub fn new(s: Vec3, d: Vec3, h: Vec3, v: Vec3) -> Result<Self> {
        let g = RealSpaceGeometry { s, d, h, v };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.s, self.d, self.h, self.v];
        if all.iter().any(|x| x.iter().any(|c| !c.is_finite())) {
            return Err(CalibError::DegenerateGeometry("non-finite component".into()));
        }
        let n = self.h.cross(&self.v);
        if !(n.norm() > SINGULAR_EPS * self.h.norm() * self.v.norm()) {
            return Err(CalibError::DegenerateGeometry("detector row and column vectors are parallel".into()));
        }
        let ds = self.d - self.s;
        if !(n.dot(&ds).abs() > SINGULAR_EPS * n.norm() * ds.norm()) {
            return Err(CalibError::DegenerateGeometry("source lies in the detector plane".into()));
        }
        Ok(())
    }

    /// Unit detector normal oriented towards the source.
    pub fn normal_towards_source(&self) -> Vec3 {
        let n = self.h.cross(&self.v).normalize();
        if n.dot(&(self.s - self.d)) < 0.0 {
            -n
        } else {
            n
        }
    }

    /// World position of detector pixel `(h, v)`.
    pub fn pixel_position(&self, h: f64, v: f64) -> Vec3 {
        self.d + self.h * h + self.v * v
    }

    pub fn to_matrix(&self) -> Result<ProjectionMatrix> {
        geometry_to_matrix(self)
    }
}

/// Builds the projection matrix whose rows are `V x (d - s)`, `-H x (d - s)`
/// and `H x V`, with the fourth column `-(3x3 block) s`.
pub fn geometry_to_matrix(g: &RealSpaceGeometry) -> Result<ProjectionMatrix> {
    g.validate()?;
    let ds = g.d - g.s;
    let r1 = g.v.cross(&ds);
    let r2 = -g.h.cross(&ds);
    let r3 = g.h.cross(&g.v);
    let c4 = Vec3::new(-g.v.cross(&g.d).dot(&g.s), g.h.cross(&g.d).dot(&g.s), -r3.dot(&g.s));
    let rows = [r1, r2, r3];
    // adding 0.0 turns negative zeros into positive ones
    ProjectionMatrix::new(Matrix3x4::from_fn(|r, c| if c < 3 { rows[r][c] } else { c4[r] } + 0.0))
}

/// Perspective projection of a euclidean point.
pub fn project_point(p: &ProjectionMatrix, x: &Vec3) -> Result<(f64, f64)> {
    let hv = p.apply(&Vector4::new(x.x, x.y, x.z, 1.0));
    let scale = p.row(2).norm() * x.norm() + p.get(2, 3).abs();
    if !(hv.z.abs() > SINGULAR_EPS * scale) {
        return Err(CalibError::AtInfinity { w: hv.z });
    }
    Ok((hv.x / hv.z, hv.y / hv.z))
}

/// Recovers source, detector origin and strides from a projection matrix.
///
/// The overall sign of `n_d` is chosen so that the detector and the world
/// origin lie in the same half space as seen from the source,
/// i.e. `s . (d - s) < 0`. The result reproduces `P` up to a positive
/// scalar; `P` and `-P` give identical geometries.
pub fn matrix_to_geometry(p: &ProjectionMatrix) -> Result<RealSpaceGeometry> {
    let a1 = p.row(0);
    let a2 = p.row(1);
    let a3 = p.row(2);
    let b = p.offset_column();

    let c12 = a1.cross(&a2);
    let n_s = c12.dot(&a3);
    if !(n_s.abs() > SINGULAR_EPS * a1.norm() * a2.norm() * a3.norm()) {
        return Err(CalibError::SingularMatrix(format!("n_s = {n_s:e}")));
    }

    // Cramer's rule on the columns of the left block: s = -M^-1 b.
    let col = |j: usize| Vec3::new(p.get(0, j), p.get(1, j), p.get(2, j));
    let (k1, k2, k3) = (col(0), col(1), col(2));
    let s = Vec3::new(-k2.cross(&k3).dot(&b) / n_s, k1.cross(&k3).dot(&b) / n_s, -k1.cross(&k2).dot(&b) / n_s);

    let side = s.dot(&c12);
    if side == 0.0 {
        return Err(CalibError::DegenerateGeometry("cannot orient detector: source at the world origin".into()));
    }
    let n_d = -side.signum() * n_s.abs().sqrt();

    let ds = c12 / n_d;
    let h = a2.cross(&a3) / n_d;
    let v = -a1.cross(&a3) / n_d;
    let pos = |x: Vec3| x.map(|c| c + 0.0);
    RealSpaceGeometry::new(pos(s), pos(s + ds), pos(h), pos(v))
}

/// Human-readable description of a detector pose relative to the
/// rotational axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportAngles {
    /// Source–detector distance along the source direction, perpendicular
    /// to the rotational axis (px).
    pub sdd: f64,
    /// Offset of `d` from the point where the optical axis meets the
    /// detector, in pixel units along `H` and `V`.
    pub h_shift: f64,
    pub v_shift: f64,
    /// Slant of the detector normal about the rotational axis (deg).
    pub slant_phi: f64,
    /// Tilt of the detector normal towards `+z` (deg).
    pub tilt_theta: f64,
    /// In-plane rotation of `H` about the detector normal (deg).
    pub inplane_eta: f64,
}

/// Decomposes a geometry into distance, shifts and orientation angles.
///
/// With the source-facing unit normal `n`:
/// * slant is the signed angle (right hand about `+z`) from the horizontal
///   source direction to the horizontal part of `n`;
/// * tilt is `asin(n_z)`;
/// * in-plane rotation is the signed angle about `n` from the horizontal
///   detector direction `n x z` to `H`.
///
/// These invert a detector orientation `Rz(slant) Rx(tilt) Ry(eta)` applied
/// to the nominal frame `H = x`, `V = z` facing a source on `+y`.
pub fn report_angles(g: &RealSpaceGeometry) -> Result<ReportAngles> {
    g.validate()?;
    let s_norm = g.s.norm();
    let s_xy = Vec3::new(g.s.x, g.s.y, 0.0);
    if s_xy.norm() <= SINGULAR_EPS * s_norm {
        return Err(CalibError::DegenerateGeometry("source on the rotational axis".into()));
    }
    let sdd = (g.d - g.s).dot(&s_xy.normalize()).abs();

    // Offset of the detector origin from the point where the optical axis
    // (source towards the rotational axis, perpendicular to it) meets the detector.
    let n = g.normal_towards_source();
    let axis_dir = -s_xy;
    let denom = axis_dir.dot(&n);
    if denom.abs() <= SINGULAR_EPS * s_xy.norm() {
        return Err(CalibError::DegenerateGeometry("optical axis parallel to the detector".into()));
    }
    let t = (g.d - g.s).dot(&n) / denom;
    let pierce = g.s + axis_dir * t - g.d;
    let gram = nalgebra::Matrix2::new(g.h.dot(&g.h), g.h.dot(&g.v), g.h.dot(&g.v), g.v.dot(&g.v));
    let rhs = nalgebra::Vector2::new(g.h.dot(&pierce), g.v.dot(&pierce));
    let shift =
        -gram.lu().solve(&rhs).ok_or_else(|| CalibError::DegenerateGeometry("singular detector Gram matrix".into()))?;

    let s_hat = s_xy.normalize();
    let slant = (s_hat.x * n.y - s_hat.y * n.x).atan2(s_hat.x * n.x + s_hat.y * n.y);
    let tilt = n.z.clamp(-1.0, 1.0).asin();

    let z = Vec3::z();
    let e_h = n.cross(&z);
    if e_h.norm() <= SINGULAR_EPS {
        return Err(CalibError::DegenerateGeometry("detector normal along the rotational axis".into()));
    }
    let e_h = e_h.normalize();
    let eta = e_h.cross(&g.h).dot(&n).atan2(e_h.dot(&g.h));

    Ok(ReportAngles {
        sdd,
        h_shift: shift.x,
        v_shift: shift.y,
        slant_phi: slant.to_degrees(),
        tilt_theta: tilt.to_degrees(),
        inplane_eta: eta.to_degrees(),
    })
}

/// Rigid rotation about and translation along `z` followed by a global
/// scale: the free reference-frame choices of a self-calibrated geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaugeTransform {
    /// Rotation about `+z` (rad).
    pub rotation: f64,
    /// Translation along `z`, applied after the rotation.
    pub dz: f64,
    /// Global scale, applied last.
    pub scale: f64,
}

impl GaugeTransform {
    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        let (sn, cs) = self.rotation.sin_cos();
        Vec3::new(cs * p.x - sn * p.y, sn * p.x + cs * p.y, p.z + self.dz) * self.scale
    }

    pub fn apply_direction(&self, p: &Vec3) -> Vec3 {
        let (sn, cs) = self.rotation.sin_cos();
        Vec3::new(cs * p.x - sn * p.y, sn * p.x + cs * p.y, p.z) * self.scale
    }

    pub fn apply_geometry(&self, g: &RealSpaceGeometry) -> RealSpaceGeometry {
        RealSpaceGeometry {
            s: self.apply_point(&g.s),
            d: self.apply_point(&g.d),
            h: self.apply_direction(&g.h),
            v: self.apply_direction(&g.v),
        }
    }
}

/// The gauge transform that puts the source on `+y` at `z = 0` and scales
/// `H` to `pixel_pitch`.
pub fn gauge_transform(g: &RealSpaceGeometry, pixel_pitch: f64) -> Result<GaugeTransform> {
    if !(pixel_pitch > 0.0) {
        return Err(CalibError::Gauge(format!("pixel pitch must be positive, got {pixel_pitch}")));
    }
    let r_xy = g.s.x.hypot(g.s.y);
    if r_xy <= SINGULAR_EPS * g.s.norm() || r_xy == 0.0 {
        return Err(CalibError::Gauge("source lies on the rotational axis".into()));
    }
    let h_norm = g.h.norm();
    if h_norm == 0.0 {
        return Err(CalibError::Gauge("zero row stride".into()));
    }
    Ok(GaugeTransform { rotation: g.s.x.atan2(g.s.y), dz: -g.s.z, scale: pixel_pitch / h_norm })
}

pub fn normalize_gauge(g: &RealSpaceGeometry, pixel_pitch: f64) -> Result<RealSpaceGeometry> {
    let t = gauge_transform(g, pixel_pitch)?;
    let mut out = t.apply_geometry(g);
    // exact zeros instead of roundoff
    out.s.x = 0.0;
    out.s.z = 0.0;
    Ok(out)
}

/// JSON layout of a matrix: `{"P": [[..4..], [..4..], [..4..]]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    #[serde(rename = "P")]
    pub p: [[f64; 4]; 3],
}

impl From<&ProjectionMatrix> for MatrixFile {
    fn from(p: &ProjectionMatrix) -> Self {
        MatrixFile { p: p.rows() }
    }
}

impl TryFrom<&MatrixFile> for ProjectionMatrix {
    type Error = CalibError;
    fn try_from(f: &MatrixFile) -> Result<Self> {
        ProjectionMatrix::from_rows(f.p)
    }
}

mod vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn aligned() -> RealSpaceGeometry {
        RealSpaceGeometry::new(
            Vec3::new(0.0, 5000.0, 0.0),
            Vec3::new(0.0, -5000.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        )
        .unwrap()
    }

    /// Oracle: intersect the ray from the source through `p` with the
    /// detector plane and read off the pixel coordinates.
    fn ray_plane_pixel(g: &RealSpaceGeometry, p: &Vec3) -> (f64, f64) {
        let n = g.h.cross(&g.v);
        let dir = p - g.s;
        let t = n.dot(&(g.d - g.s)) / n.dot(&dir);
        let hit = g.s + dir * t - g.d;
        let m = nalgebra::Matrix3::from_columns(&[g.h, g.v, n]);
        let c = m.lu().solve(&hit).unwrap();
        (c.x, c.y)
    }

    #[test]
    fn aligned_matrix_by_hand() {
        let p = geometry_to_matrix(&aligned()).unwrap();
        let expected = [[10000.0, 0.0, 0.0, 0.0], [0.0, 0.0, 10000.0, 0.0], [0.0, -1.0, 0.0, 5000.0]];
        for (r, row) in expected.iter().enumerate() {
            for (c, x) in row.iter().enumerate() {
                assert_eq!(p.get(r, c), *x, "P[{r}][{c}]");
            }
        }
    }

    #[test]
    fn joint_scaling_projects_identically() {
        let g = aligned();
        let g2 = RealSpaceGeometry::new(g.s * 2.0, g.d * 2.0, g.h * 2.0, g.v * 2.0).unwrap();
        let (p1, p2) = (g.to_matrix().unwrap(), g2.to_matrix().unwrap());
        for x in [Vec3::new(13.0, -40.0, 7.0), Vec3::new(-300.0, 100.0, 250.0)] {
            let a = p1.project(&x).unwrap();
            let b = p2.project(&(x * 2.0)).unwrap();
            assert_relative_eq!(a.0, b.0, max_relative = 1e-12);
            assert_relative_eq!(a.1, b.1, max_relative = 1e-12);
        }
    }

    #[test]
    fn parallel_strides_rejected() {
        let r = RealSpaceGeometry::new(
            Vec3::new(0.0, 5000.0, 0.0),
            Vec3::new(0.0, -5000.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        );
        assert!(matches!(r, Err(CalibError::DegenerateGeometry(_))));
    }

    #[test]
    fn project_point_examples() {
        let p = aligned().to_matrix().unwrap();
        assert_eq!(p.project(&Vec3::zeros()).unwrap(), (0.0, 0.0));
        let (h, v) = p.project(&Vec3::new(100.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(h, 200.0, max_relative = 1e-15);
        assert_eq!(v, 0.0);
        let oracle = ray_plane_pixel(&aligned(), &Vec3::new(100.0, 0.0, 0.0));
        assert_relative_eq!(oracle.0, 200.0, max_relative = 1e-12);
        assert!(matches!(p.project(&Vec3::new(0.0, 5000.0, 0.0)), Err(CalibError::AtInfinity { .. })));
    }

    #[test]
    fn project_point_matches_ray_oracle_on_oblique_geometry() {
        let g = RealSpaceGeometry::new(
            Vec3::new(30.0, 7000.0, -20.0),
            Vec3::new(-900.0, -3000.0, -600.0),
            Vec3::new(0.99, 0.1, 0.02),
            Vec3::new(-0.03, 0.05, 1.01),
        )
        .unwrap();
        let p = g.to_matrix().unwrap();
        for x in [Vec3::new(100.0, 20.0, -30.0), Vec3::new(-700.0, 400.0, 650.0)] {
            let a = p.project(&x).unwrap();
            let b = ray_plane_pixel(&g, &x);
            assert_relative_eq!(a.0, b.0, max_relative = 1e-10);
            assert_relative_eq!(a.1, b.1, max_relative = 1e-10);
        }
    }

    #[test]
    fn aligned_round_trip_is_exact() {
        let g = aligned();
        let back = matrix_to_geometry(&g.to_matrix().unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn negated_matrix_gives_same_geometry() {
        let p = aligned().to_matrix().unwrap();
        let neg = p.scaled(-1.0).unwrap();
        assert_eq!(matrix_to_geometry(&p).unwrap(), matrix_to_geometry(&neg).unwrap());
    }

    #[test]
    fn fourth_column_and_third_row_identities() {
        let g = RealSpaceGeometry::new(
            Vec3::new(120.0, 6000.0, 35.0),
            Vec3::new(-800.0, -2500.0, 400.0),
            Vec3::new(0.98, 0.12, -0.03),
            Vec3::new(0.02, -0.04, 1.02),
        )
        .unwrap();
        let p = g.to_matrix().unwrap();
        let c4 = -(p.left_block() * g.s);
        assert_relative_eq!(p.offset_column(), c4, max_relative = 1e-12);
        assert_relative_eq!(p.row(2), g.h.cross(&g.v), max_relative = 1e-15);
    }

    #[test]
    fn report_angles_aligned() {
        let a = report_angles(&aligned()).unwrap();
        assert_eq!(a.sdd, 10000.0);
        assert!(a.h_shift.abs() < 1e-12 && a.v_shift.abs() < 1e-12);
        assert_eq!(a.slant_phi, 0.0);
        assert_eq!(a.tilt_theta, 0.0);
        assert_eq!(a.inplane_eta, 0.0);
    }

    #[test]
    fn inplane_rotation_is_reported() {
        let eta: f64 = 3.5_f64.to_radians();
        let g = aligned();
        // rotate H and V about the source-facing normal (+y)
        let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), eta);
        let g2 = RealSpaceGeometry::new(g.s, g.d, rot * g.h, rot * g.v).unwrap();
        let a = report_angles(&g2).unwrap();
        assert_relative_eq!(a.inplane_eta, 3.5, epsilon = 1e-12);
        assert_relative_eq!(a.sdd, 10000.0, max_relative = 1e-14);
        assert!(a.slant_phi.abs() < 1e-12 && a.tilt_theta.abs() < 1e-12);
        assert!(a.h_shift.abs() < 1e-9 && a.v_shift.abs() < 1e-9);
    }

    #[test]
    fn gauge_identity_on_normalized_geometry() {
        let g = aligned();
        assert_eq!(normalize_gauge(&g, 1.0).unwrap(), g);
    }

    #[test]
    fn gauge_undoes_z_rotation() {
        let g = RealSpaceGeometry::new(
            Vec3::new(0.0, 6000.0, 0.0),
            Vec3::new(50.0, -3000.0, 20.0),
            Vec3::new(0.99, 0.05, 0.01),
            Vec3::new(0.0, 0.02, 1.0),
        )
        .unwrap();
        let g = normalize_gauge(&g, 0.99_f64.hypot(0.05).hypot(0.01)).unwrap();
        let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), 30f64.to_radians());
        let turned = RealSpaceGeometry::new(rot * g.s, rot * g.d, rot * g.h, rot * g.v).unwrap();
        let back = normalize_gauge(&turned, g.h.norm()).unwrap();
        for (a, b) in [(back.s, g.s), (back.d, g.d), (back.h, g.h), (back.v, g.v)] {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn source_on_axis_rejected_by_gauge() {
        let g = RealSpaceGeometry::new(
            Vec3::new(0.0, 0.0, 100.0),
            Vec3::new(0.0, 0.0, -100.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        assert!(matches!(normalize_gauge(&g, 1.0), Err(CalibError::Gauge(_))));
    }

    #[test]
    fn normalized_matrix_is_canonical() {
        let p = aligned().to_matrix().unwrap();
        let a = p.scaled(-3.0).unwrap().normalized();
        let b = p.normalized();
        assert_relative_eq!(a.as_matrix(), b.as_matrix(), epsilon = 1e-15);
        assert!(b.get(2, 3) > 0.0);
    }

    #[test]
    fn json_layouts() {
        let g = aligned();
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(text, r#"{"s":[0.0,5000.0,0.0],"d":[0.0,-5000.0,0.0],"H":[1.0,0.0,0.0],"V":[0.0,0.0,1.0]}"#);
        let m = MatrixFile::from(&g.to_matrix().unwrap());
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.starts_with(r#"{"P":[[10000.0,0.0,0.0,0.0],"#), "{text}");
    }
}
