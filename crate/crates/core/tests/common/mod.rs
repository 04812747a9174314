#![allow(dead_code)]

use nalgebra::Rotation3;
use orbitcal_core::{HomogeneousOrbit, RealSpaceGeometry, Vec3};
use proptest::prelude::*;

/// Source at distance `dist` in direction `azimuth` (lifted by `lift`), detector
/// `gap` behind the axis, strides turned by small angles and scaled by the
/// pixel pitch and aspect.
#[derive(Clone, Copy, Debug)]
pub struct GeometrySpec {
    pub dist: f64,
    pub azimuth: f64,
    pub lift: f64,
    pub gap: f64,
    pub angles: [f64; 3],
    pub pitch: f64,
    pub aspect: f64,
    pub offset: [f64; 2],
}

impl GeometrySpec {
    pub fn build(&self) -> RealSpaceGeometry {
        let dir = Vec3::new(self.azimuth.cos(), self.azimuth.sin(), 0.0);
        let s = dir * self.dist + Vec3::new(0.0, 0.0, self.lift);
        let side = Vec3::z().cross(&dir);
        let turn = Rotation3::from_euler_angles(self.angles[0], self.angles[1], self.angles[2]);
        let h = turn * side * self.pitch;
        let v = turn * Vec3::z() * self.pitch * self.aspect;
        let centre = -dir * self.gap + Vec3::new(0.0, 0.0, self.lift);
        let d = centre + h * self.offset[0] + v * self.offset[1];
        RealSpaceGeometry::new(s, d, h, v).unwrap()
    }
}

pub fn arb_geometry() -> impl Strategy<Value = RealSpaceGeometry> {
    (
        2000.0..20000.0f64,
        -3.1..3.1f64,
        -500.0..500.0f64,
        0.0..3000.0f64,
        prop::array::uniform3(-0.3..0.3f64),
        0.2..3.0f64,
        0.5..2.0f64,
        prop::array::uniform2(-300.0..300.0f64),
    )
        .prop_map(|(dist, azimuth, lift, gap, angles, pitch, aspect, offset)| {
            GeometrySpec { dist, azimuth, lift, gap, angles, pitch, aspect, offset }.build()
        })
}

pub fn arb_orbit() -> impl Strategy<Value = HomogeneousOrbit> {
    (50.0..1200.0f64, -800.0..800.0f64, 0.5..2.0f64, -3.1..3.1f64)
        .prop_map(|(r, z, w, phi0)| HomogeneousOrbit::new(r * w, z * w, w, phi0).unwrap())
}

/// Ray from `s` through `x` intersected with the detector plane, in
/// detector coordinates; a plain 3x3 solve.
pub fn ray_cast(g: &RealSpaceGeometry, x: &Vec3) -> (f64, f64) {
    let m = nalgebra::Matrix3::from_columns(&[g.h, g.v, g.s - x]);
    let sol = m.lu().solve(&(g.s - g.d)).unwrap();
    (sol.x, sol.y)
}

pub fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}
