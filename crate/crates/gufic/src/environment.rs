//! Contact surfaces, the penalty contact wrench, and the low-pass filtered
//! force/torque sensor.
//!
//! The environment pushes, never pulls: the combined spring-damper force is
//! clamped at zero, which keeps the environment passive regardless of the
//! damping coefficient. The tool is treated as a point at the end-effector
//! origin, so contact produces no torque.

use crate::geometry::{Pose, Twist, Vec3, Vec6, Wrench};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error("surface normal must be unit length, |n| = {norm}")]
    NonUnitNormal { norm: f64 },
    #[error("sphere radius must be positive, found {radius}")]
    NonPositiveRadius { radius: f64 },
    #[error("filter cutoff must be positive, found {cutoff_hz}")]
    BadCutoff { cutoff_hz: f64 },
    #[error("discretized filter is unstable (pole magnitude {pole_magnitude})")]
    UnstableFilter { pole_magnitude: f64 },
}

#[derive(Debug, Clone, Copy)]
pub enum SurfaceModel {
    Plane { center: Vec3, normal: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

impl SurfaceModel {
    pub fn plane(center: Vec3, normal: Vec3) -> Result<Self, EnvironmentError> {
        let norm = normal.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(EnvironmentError::NonUnitNormal { norm });
        }
        Ok(SurfaceModel::Plane { center, normal })
    }

    pub fn sphere(center: Vec3, radius: f64) -> Result<Self, EnvironmentError> {
        if radius <= 0.0 {
            return Err(EnvironmentError::NonPositiveRadius { radius });
        }
        Ok(SurfaceModel::Sphere { center, radius })
    }

    /// Penetration depth (positive inside the material) and the outward
    /// surface normal at the closest surface point to `p`.
    ///
    /// For the sphere the tool presses from outside the shell: depth is
    /// `radius - |p - center|`, positive once the tool point is within the
    /// radius, and the normal points radially outward.
    pub fn penetration(&self, p: &Vec3) -> (f64, Vec3) {
        match self {
            SurfaceModel::Plane { center, normal } => ((center - p).dot(normal), *normal),
            SurfaceModel::Sphere { center, radius } => {
                let rel = p - center;
                let dist = rel.norm();
                if dist < 1e-12 {
                    (*radius, Vec3::z())
                } else {
                    (radius - dist, rel / dist)
                }
            }
        }
    }

    /// Re-expresses the surface in a spatial frame moved by `h`.
    pub fn left_transformed(&self, h: &Pose) -> Self {
        match self {
            SurfaceModel::Plane { center, normal } => SurfaceModel::Plane {
                center: h.act_point(center),
                normal: h.rotation_matrix() * normal,
            },
            SurfaceModel::Sphere { center, radius } => SurfaceModel::Sphere {
                center: h.act_point(center),
                radius: *radius,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactParams {
    /// Normal spring stiffness, N/m.
    pub stiffness: f64,
    /// Normal damping, N·s/m.
    pub damping: f64,
    /// Viscous coefficient opposing tangential sliding, N·s/m.
    #[serde(default)]
    pub tangential_damping: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams { stiffness: 1e5, damping: 200.0, tangential_damping: 0.0 }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.stiffness < 0.0 || self.damping < 0.0 || self.tangential_damping < 0.0 {
            return Err("contact parameters must be non-negative".into());
        }
        Ok(())
    }
}

/// Body-frame wrench the environment exerts on the end-effector.
///
/// Normal force is `k_c * depth + c_c * depth_rate`, clamped to push-only as
/// a whole; tangential resistance is viscous. Zero outside the material.
pub fn contact_wrench(
    surface: &SurfaceModel,
    g: &Pose,
    velocity: &Twist,
    params: &ContactParams,
) -> Wrench {
    let (depth, normal_out) = surface.penetration(&g.position);
    if depth <= 0.0 {
        return Wrench::zero();
    }
    let v_world = g.rotation_matrix() * velocity.linear();
    let depth_rate = -normal_out.dot(&v_world);
    let normal_magnitude = (params.stiffness * depth + params.damping * depth_rate).max(0.0);
    let v_tangential = v_world - normal_out * normal_out.dot(&v_world);
    let f_world = normal_out * normal_magnitude - v_tangential * params.tangential_damping;
    Wrench::from_parts(g.rotation_matrix().transpose() * f_world, Vec3::zeros())
}

/// Second-order Butterworth low-pass on each of the six wrench channels,
/// discretized by the bilinear transform (direct form II transposed).
#[derive(Debug, Clone)]
pub struct FtSensor {
    b: [f64; 3],
    a: [f64; 2],
    s1: Vec6,
    s2: Vec6,
    cutoff_hz: f64,
    sample_period: f64,
}

impl FtSensor {
    pub fn new(cutoff_hz: f64, sample_period: f64) -> Result<Self, EnvironmentError> {
        if cutoff_hz <= 0.0 {
            return Err(EnvironmentError::BadCutoff { cutoff_hz });
        }
        // Prewarped analog prototype; the bilinear transform then puts the
        // -3 dB point exactly at the cutoff.
        let w = (std::f64::consts::PI * cutoff_hz * sample_period).tan();
        let sqrt2 = std::f64::consts::SQRT_2;
        let d = 1.0 + sqrt2 * w + w * w;
        let b0 = w * w / d;
        let b = [b0, 2.0 * b0, b0];
        let a = [2.0 * (w * w - 1.0) / d, (1.0 - sqrt2 * w + w * w) / d];

        // Poles of z^2 + a1 z + a2.
        let disc = a[0] * a[0] - 4.0 * a[1];
        let pole_magnitude = if disc >= 0.0 {
            let r = disc.sqrt();
            ((-a[0] + r) / 2.0).abs().max(((-a[0] - r) / 2.0).abs())
        } else {
            a[1].abs().sqrt()
        };
        if pole_magnitude >= 1.0 {
            return Err(EnvironmentError::UnstableFilter { pole_magnitude });
        }

        Ok(FtSensor { b, a, s1: Vec6::zeros(), s2: Vec6::zeros(), cutoff_hz, sample_period })
    }

    pub fn cutoff_hz(&self) -> f64 {
        self.cutoff_hz
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    /// Advances the filter by one sample and returns the filtered wrench.
    pub fn step(&mut self, raw: &Wrench) -> Wrench {
        let x = raw.as_vector();
        let mut y = Vec6::zeros();
        for i in 0..6 {
            y[i] = self.b[0] * x[i] + self.s1[i];
            self.s1[i] = self.b[1] * x[i] - self.a[0] * y[i] + self.s2[i];
            self.s2[i] = self.b[2] * x[i] - self.a[1] * y[i];
        }
        Wrench(y)
    }

    pub fn reset(&mut self) {
        self.s1 = Vec6::zeros();
        self.s2 = Vec6::zeros();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{power, Pose, Rotation};
    use approx::assert_relative_eq;

    fn flat_surface() -> SurfaceModel {
        SurfaceModel::plane(Vec3::new(0.5, 0.0, 0.1308), Vec3::z()).unwrap()
    }

    fn tool_down_pose(z: f64) -> Pose {
        // Tool z-axis pointing into the surface.
        let r = crate::geometry::Mat3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0);
        Pose::from_parts(r, Vec3::new(0.5, 0.0, z)).unwrap()
    }

    #[test]
    fn no_contact_above_surface() {
        let surface = flat_surface();
        let g = tool_down_pose(0.2);
        let f = contact_wrench(&surface, &g, &Twist::zero(), &ContactParams::default());
        assert_eq!(f.0, Vec6::zeros());
    }

    #[test]
    fn static_penetration_spring_force() {
        let surface = flat_surface();
        let params = ContactParams { stiffness: 1e5, damping: 200.0, tangential_damping: 0.0 };
        let depth = 1e-4;
        let g = tool_down_pose(0.1308 - depth);
        let f = contact_wrench(&surface, &g, &Twist::zero(), &params);
        // World force +z maps to body force -z for the flipped tool.
        assert_relative_eq!(f.linear(), Vec3::new(0.0, 0.0, -params.stiffness * depth), epsilon = 1e-9);
        assert_eq!(f.angular(), Vec3::zeros());
    }

    #[test]
    fn force_continuous_and_push_only() {
        let surface = flat_surface();
        let params = ContactParams { stiffness: 1e4, damping: 100.0, tangential_damping: 0.0 };
        // Exactly at the surface with zero velocity: zero force.
        let g = tool_down_pose(0.1308);
        assert_eq!(contact_wrench(&surface, &g, &Twist::zero(), &params).0, Vec6::zeros());
        // Retreating faster than the spring pushes: clamped to zero, not adhesive.
        let g = tool_down_pose(0.1308 - 1e-5);
        let retreat = Twist::from_parts(Vec3::new(0.0, 0.0, -1.0), Vec3::zeros());
        let f = contact_wrench(&surface, &g, &retreat, &params);
        assert_eq!(f.0, Vec6::zeros());
    }

    #[test]
    fn sphere_contact_outward_normal() {
        let center = Vec3::new(0.4, 0.0, -0.1);
        let surface = SurfaceModel::sphere(center, 0.305).unwrap();
        let params = ContactParams { stiffness: 2000.0, damping: 0.0, tangential_damping: 0.0 };
        // Tool point 5 mm inside the shell along +z from the center.
        let p = center + Vec3::z() * 0.3;
        let g = Pose::new(Rotation::identity(), p);
        let f = contact_wrench(&surface, &g, &Twist::zero(), &params);
        assert_relative_eq!(f.linear(), Vec3::new(0.0, 0.0, 2000.0 * 0.005), epsilon = 1e-9);
    }

    #[test]
    fn environment_absorbs_energy_over_contact_cycle() {
        // Scripted vertical bounce: integral of V^b . (-F_e) stays above a
        // small negative slack set by the spring energy resolution.
        let surface = flat_surface();
        let params = ContactParams { stiffness: 2e4, damping: 150.0, tangential_damping: 30.0 };
        let dt = 1e-4;
        let mut absorbed = 0.0;
        let mut min_absorbed: f64 = 0.0;
        for k in 0..40_000 {
            let t = k as f64 * dt;
            // Tool descends 4 mm into the surface and pulls back out, twice,
            // while sliding sideways.
            let z = 0.1308 + 0.004 * (2.0 * std::f64::consts::PI * 0.5 * t).cos() - 0.004;
            let zdot = -0.004 * 2.0 * std::f64::consts::PI * 0.5
                * (2.0 * std::f64::consts::PI * 0.5 * t).sin();
            let g = tool_down_pose(z);
            let v_world = Vec3::new(0.05, 0.0, zdot);
            let v_body = Twist::from_parts(g.rotation_matrix().transpose() * v_world, Vec3::zeros());
            let f = contact_wrench(&surface, &g, &v_body, &params);
            absorbed += -power(&v_body, &f) * dt;
            min_absorbed = min_absorbed.min(absorbed);
        }
        assert!(min_absorbed > -1e-3, "environment released {min_absorbed:.3e} J");
    }

    #[test]
    fn filter_dc_gain_unity() {
        let mut sensor = FtSensor::new(5.0, 1e-3).unwrap();
        let input = Wrench::from_parts(Vec3::new(1.0, -2.0, 3.0), Vec3::new(0.5, 0.25, -1.0));
        let mut out = Wrench::zero();
        for _ in 0..2000 {
            out = sensor.step(&input);
        }
        for i in 0..6 {
            assert!((out.0[i] - input.0[i]).abs() <= 1e-3 * input.0[i].abs());
        }
    }

    fn steady_state_amplitude(freq_hz: f64) -> f64 {
        let dt = 1e-3;
        let mut sensor = FtSensor::new(5.0, dt).unwrap();
        let cycles_settle = (freq_hz * 2.0).max(10.0) as usize;
        let n_settle = (cycles_settle as f64 / freq_hz / dt) as usize;
        let n_measure = (10.0 / freq_hz / dt).round() as usize;
        let mut sin_acc = 0.0;
        let mut cos_acc = 0.0;
        for k in 0..(n_settle + n_measure) {
            let t = k as f64 * dt;
            let phase = 2.0 * std::f64::consts::PI * freq_hz * t;
            let x = phase.sin();
            let y = sensor.step(&Wrench::from_parts(Vec3::new(x, 0.0, 0.0), Vec3::zeros())).0[0];
            if k >= n_settle {
                sin_acc += y * phase.sin();
                cos_acc += y * phase.cos();
            }
        }
        let scale = 2.0 / n_measure as f64;
        ((sin_acc * scale).powi(2) + (cos_acc * scale).powi(2)).sqrt()
    }

    #[test]
    fn filter_cutoff_attenuation() {
        let amp = steady_state_amplitude(5.0);
        let expected = std::f64::consts::FRAC_1_SQRT_2;
        assert!((amp - expected).abs() / expected < 0.02, "gain at cutoff {amp:.4}");
    }

    #[test]
    fn filter_stopband_attenuation() {
        let amp = steady_state_amplitude(100.0);
        assert!(amp <= 0.01, "gain at 100 Hz {amp:.5}");
    }

    #[test]
    fn filter_is_linear_time_invariant() {
        let dt = 1e-3;
        let signal_a = |t: f64| (17.0 * t).sin() + 0.3;
        let signal_b = |t: f64| (5.0 * t).cos() * 2.0;
        let mut fa = FtSensor::new(5.0, dt).unwrap();
        let mut fb = FtSensor::new(5.0, dt).unwrap();
        let mut fab = FtSensor::new(5.0, dt).unwrap();
        for k in 0..5000 {
            let t = k as f64 * dt;
            let a = Wrench(Vec6::repeat(signal_a(t)));
            let b = Wrench(Vec6::repeat(signal_b(t)));
            let ya = fa.step(&a);
            let yb = fb.step(&b);
            let yab = fab.step(&Wrench(a.0 + b.0));
            assert_relative_eq!(yab.0, ya.0 + yb.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn filter_rejects_bad_configs() {
        assert!(FtSensor::new(0.0, 1e-3).is_err());
        assert!(FtSensor::new(-5.0, 1e-3).is_err());
    }
}
