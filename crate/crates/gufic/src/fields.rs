//! Reference trajectories, the time-varying velocity field, its analytic
//! total time derivative, and the force field.
//!
//! The velocity field maps `(t, g)` to a desired body twist
//!
//! ```text
//! V_d*(t, g) = Ad_{g_ed} Vbar_d^b(t) - zeta * e_G(g, gbar_d(t)),
//! ```
//!
//! with `g_ed = g^-1 gbar_d`: a transport of the reference body velocity to
//! the current configuration plus a descent direction on the error function
//! `Psi`. Because the field is evaluated at the robot's own pose, modifying
//! it (for tank passivity) and re-integrating the setpoint stays causal.

use crate::geometry::{
    adjoint_apply, coadjoint_transform, gcev, hat3, log_so3, Mat3, Pose, Rotation, Twist, Vec3,
    Wrench,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("velocity field gain zeta must be positive, found {zeta}")]
    BadZeta { zeta: f64 },
    #[error("waypoint trajectory needs at least two samples with increasing times")]
    BadWaypoints,
    #[error("reference sample inconsistent: |Rdot - R hat(omega)| = {defect:.3e}")]
    InconsistentSample { defect: f64 },
}

/// One evaluation of the reference trajectory `gbar_d(t)` with its raw first
/// and second derivatives and the derived body velocity.
#[derive(Debug, Clone)]
pub struct ReferenceSample {
    pub pose: Pose,
    pub body_velocity: Twist,
    pub p_dot: Vec3,
    pub p_ddot: Vec3,
    pub r_dot: Mat3,
    pub r_ddot: Mat3,
}

impl ReferenceSample {
    /// Builds the sample from raw derivatives and derives
    /// `Vbar_d^b = [R^T pdot; (R^T Rdot)^vee]`.
    pub fn from_derivatives(
        pose: Pose,
        p_dot: Vec3,
        p_ddot: Vec3,
        r_dot: Mat3,
        r_ddot: Mat3,
    ) -> Self {
        let r = pose.rotation_matrix();
        let omega = crate::geometry::vee3_unchecked(&(r.transpose() * r_dot));
        let v = r.transpose() * p_dot;
        ReferenceSample {
            pose,
            body_velocity: Twist::from_parts(v, omega),
            p_dot,
            p_ddot,
            r_dot,
            r_ddot,
        }
    }

    /// Frobenius defect of the consistency invariant
    /// `Rdot = R hat(omega)`.
    pub fn consistency_defect(&self) -> f64 {
        let r = self.pose.rotation_matrix();
        (self.r_dot - r * hat3(&self.body_velocity.angular())).norm()
    }

    fn left_transformed(&self, h: &Pose) -> Self {
        let hr = h.rotation_matrix();
        ReferenceSample {
            pose: h.compose(&self.pose),
            body_velocity: self.body_velocity,
            p_dot: hr * self.p_dot,
            p_ddot: hr * self.p_ddot,
            r_dot: hr * self.r_dot,
            r_ddot: hr * self.r_ddot,
        }
    }
}

/// A pose keyframe of a custom trajectory.
#[derive(Debug, Clone)]
pub struct Waypoint {
    pub time: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone)]
pub enum TrajectoryKind {
    /// Planar circle at constant angular rate with a fixed orientation.
    Circle { center: Vec3, radius: f64, angular_rate: f64, rotation: Rotation },
    /// Arc on a sphere: `p = center + radius [0, sin th, cos th]` with
    /// `th(t) = theta0 + theta_rate t`, orientation keeping the tool normal
    /// to the sphere.
    SphereArc { center: Vec3, radius: f64, theta0: f64, theta_rate: f64, base_rotation: Rotation },
    /// Sampled poses, cubic Hermite on positions and piecewise-geodesic on
    /// rotations (C1 in position, piecewise-constant body rate in rotation).
    Waypoints(Vec<Waypoint>),
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    /// Optional static re-expression of the whole trajectory in a moved
    /// spatial frame (left action).
    pub world_transform: Option<Pose>,
}

impl Trajectory {
    pub fn new(kind: TrajectoryKind) -> Result<Self, FieldError> {
        if let TrajectoryKind::Waypoints(w) = &kind {
            if w.len() < 2 || w.windows(2).any(|ab| ab[1].time <= ab[0].time) {
                return Err(FieldError::BadWaypoints);
            }
        }
        Ok(Trajectory { kind, world_transform: None })
    }

    pub fn with_world_transform(mut self, h: Pose) -> Self {
        self.world_transform = Some(h);
        self
    }

    pub fn sample(&self, t: f64) -> ReferenceSample {
        let base = match &self.kind {
            TrajectoryKind::Circle { center, radius, angular_rate, rotation } => {
                circle_sample(center, *radius, *angular_rate, rotation, t)
            }
            TrajectoryKind::SphereArc { center, radius, theta0, theta_rate, base_rotation } => {
                sphere_arc_sample(center, *radius, *theta0, *theta_rate, base_rotation, t)
            }
            TrajectoryKind::Waypoints(w) => waypoint_sample(w, t),
        };
        match &self.world_transform {
            Some(h) => base.left_transformed(h),
            None => base,
        }
    }
}

fn circle_sample(center: &Vec3, radius: f64, rate: f64, rotation: &Rotation, t: f64) -> ReferenceSample {
    let phase = rate * t;
    let (s, c) = phase.sin_cos();
    let p = center + Vec3::new(radius * c, radius * s, 0.0);
    let p_dot = Vec3::new(-radius * rate * s, radius * rate * c, 0.0);
    let p_ddot = Vec3::new(-radius * rate * rate * c, -radius * rate * rate * s, 0.0);
    ReferenceSample::from_derivatives(
        Pose::new(*rotation, p),
        p_dot,
        p_ddot,
        Mat3::zeros(),
        Mat3::zeros(),
    )
}

fn rot_y(phi: f64) -> Mat3 {
    let (s, c) = phi.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_y_d(phi: f64) -> Mat3 {
    let (s, c) = phi.sin_cos();
    Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn rot_y_dd(phi: f64) -> Mat3 {
    let (s, c) = phi.sin_cos();
    Mat3::new(-c, 0.0, -s, 0.0, 0.0, 0.0, s, 0.0, -c)
}

fn sphere_arc_sample(
    center: &Vec3,
    radius: f64,
    theta0: f64,
    theta_rate: f64,
    base_rotation: &Rotation,
    t: f64,
) -> ReferenceSample {
    let theta = theta0 + theta_rate * t;
    let (s, c) = theta.sin_cos();
    let p = center + Vec3::new(0.0, radius * s, radius * c);
    let p_dot = Vec3::new(0.0, radius * theta_rate * c, -radius * theta_rate * s);
    let p_ddot = Vec3::new(
        0.0,
        -radius * theta_rate * theta_rate * s,
        -radius * theta_rate * theta_rate * c,
    );
    // R(t) = R0 RotY(-theta); phi = -theta, phidot = -theta_rate, phiddot = 0.
    let r0 = base_rotation.matrix();
    let r = r0 * rot_y(-theta);
    let r_dot = r0 * rot_y_d(-theta) * (-theta_rate);
    let r_ddot = r0 * rot_y_dd(-theta) * (theta_rate * theta_rate);
    ReferenceSample::from_derivatives(
        Pose::new(Rotation::new_renormalized(r), p),
        p_dot,
        p_ddot,
        r_dot,
        r_ddot,
    )
}

fn waypoint_sample(points: &[Waypoint], t: f64) -> ReferenceSample {
    let first = points.first().expect("validated non-empty");
    let last = points.last().expect("validated non-empty");
    if t <= first.time {
        return ReferenceSample::from_derivatives(
            first.pose,
            Vec3::zeros(),
            Vec3::zeros(),
            Mat3::zeros(),
            Mat3::zeros(),
        );
    }
    if t >= last.time {
        return ReferenceSample::from_derivatives(
            last.pose,
            Vec3::zeros(),
            Vec3::zeros(),
            Mat3::zeros(),
            Mat3::zeros(),
        );
    }
    let seg = points.windows(2).position(|ab| t < ab[1].time).expect("t inside range");
    let (a, b) = (&points[seg], &points[seg + 1]);
    let dt = b.time - a.time;
    let s = (t - a.time) / dt;

    // Cubic Hermite on position with central-difference endpoint slopes.
    let slope = |i: usize| -> Vec3 {
        let prev = if i == 0 { 0 } else { i - 1 };
        let next = (i + 1).min(points.len() - 1);
        (points[next].pose.position - points[prev].pose.position)
            / (points[next].time - points[prev].time)
    };
    let p0 = a.pose.position;
    let p1 = b.pose.position;
    let m0 = slope(seg) * dt;
    let m1 = slope(seg + 1) * dt;
    let (s2, s3) = (s * s, s * s * s);
    let p = p0 * (2.0 * s3 - 3.0 * s2 + 1.0)
        + m0 * (s3 - 2.0 * s2 + s)
        + p1 * (-2.0 * s3 + 3.0 * s2)
        + m1 * (s3 - s2);
    let dp_ds = p0 * (6.0 * s2 - 6.0 * s)
        + m0 * (3.0 * s2 - 4.0 * s + 1.0)
        + p1 * (-6.0 * s2 + 6.0 * s)
        + m1 * (3.0 * s2 - 2.0 * s);
    let ddp_ds = p0 * (12.0 * s - 6.0)
        + m0 * (6.0 * s - 4.0)
        + p1 * (-12.0 * s + 6.0)
        + m1 * (6.0 * s - 2.0);

    // Geodesic rotation segment: constant body rate w/dt.
    let w = log_so3(&(a.pose.rotation_matrix().transpose() * b.pose.rotation_matrix()));
    let r = a.pose.rotation_matrix() * crate::geometry::exp_se3(
        &Twist::from_parts(Vec3::zeros(), w),
        s,
    )
    .rotation_matrix()
    .to_owned();
    let omega_hat = hat3(&(w / dt));
    let r_dot = r * omega_hat;
    let r_ddot = r_dot * omega_hat;

    ReferenceSample::from_derivatives(
        Pose::new(Rotation::new_renormalized(r), p),
        dp_ds / dt,
        ddp_ds / (dt * dt),
        r_dot,
        r_ddot,
    )
}

/// Gain of the descent term of the velocity field.
#[derive(Debug, Clone, Copy)]
pub struct VelocityFieldParams {
    zeta: f64,
}

impl VelocityFieldParams {
    pub fn new(zeta: f64) -> Result<Self, FieldError> {
        if zeta <= 0.0 {
            return Err(FieldError::BadZeta { zeta });
        }
        Ok(VelocityFieldParams { zeta })
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }
}

/// `V_d*(t, g)` evaluated against a precomputed reference sample.
pub fn velocity_field_at(sample: &ReferenceSample, g: &Pose, zeta: f64) -> Twist {
    let g_ed = g.inverse().compose(&sample.pose);
    let transported = adjoint_apply(&g_ed, &sample.body_velocity);
    Twist(transported.0 - gcev(g, &sample.pose).0 * zeta)
}

pub fn velocity_field(t: f64, g: &Pose, trajectory: &Trajectory, params: &VelocityFieldParams) -> Twist {
    velocity_field_at(&trajectory.sample(t), g, params.zeta)
}

/// Total time derivative of the velocity field along the motion
/// `gdot = g hat(V^b)`, assembled from the analytic derivatives of its four
/// matrix blocks with `Rdot = R hat(omega^b)` and `pdot = R v^b`
/// substituted.
pub fn velocity_field_rate_at(sample: &ReferenceSample, g: &Pose, vb: &Twist, zeta: f64) -> Twist {
    let r = g.rotation_matrix();
    let rt = r.transpose();
    let p = g.position;
    let w_hat = hat3(&vb.angular());
    let v = vb.linear();

    let rd = sample.pose.rotation_matrix();
    let pd = sample.pose.position;
    let rd_dot = &sample.r_dot;
    let rd_ddot = &sample.r_ddot;
    let pd_dot = &sample.p_dot;
    let pd_ddot = &sample.p_ddot;
    let dp = p - pd;

    // Transport term, rotation block: A = R^T Rd_dot Rd^T R.
    let a = rt * rd_dot * rd.transpose() * r;
    let a_dot = -w_hat * a + rt * rd_ddot * rd.transpose() * r
        + rt * rd_dot * rd_dot.transpose() * r
        + a * w_hat;

    // Transport term, translation block:
    // B = R^T Rd_dot Rd^T (p - pd) + R^T pd_dot.
    let b1 = rt * rd_dot * rd.transpose();
    let b_dot = -w_hat * (b1 * dp)
        + rt * rd_ddot * rd.transpose() * dp
        + rt * rd_dot * rd_dot.transpose() * dp
        + b1 * (r * v - pd_dot)
        - w_hat * (rt * pd_dot)
        + rt * pd_ddot;

    // Descent term, rotation block: C = Rd^T R - R^T Rd.
    let c_dot = rd_dot.transpose() * r + rd.transpose() * r * w_hat + w_hat * rt * rd
        - rt * rd_dot;

    // Descent term, translation block: D = R^T (p - pd).
    let d_dot = -w_hat * (rt * dp) + v - rt * pd_dot;

    let lin = b_dot - d_dot * zeta;
    let ang = crate::geometry::vee3_unchecked(&(a_dot - c_dot * zeta));
    Twist::from_parts(lin, ang)
}

pub fn velocity_field_rate(
    t: f64,
    g: &Pose,
    vb: &Twist,
    trajectory: &Trajectory,
    params: &VelocityFieldParams,
) -> Twist {
    velocity_field_rate_at(&trajectory.sample(t), g, vb, params.zeta)
}

/// Frame in which a constant force field is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForceFrame {
    /// Components given in the current end-effector body frame.
    Current,
    /// Components given at the desired pose; transported by the dual adjoint.
    Desired,
}

#[derive(Debug, Clone)]
pub struct ForceFieldSpec {
    pub wrench: Wrench,
    pub frame: ForceFrame,
}

/// Desired interaction force in the current body frame.
pub fn force_field(spec: &ForceFieldSpec, g: &Pose, gd: &Pose) -> Wrench {
    match spec.frame {
        ForceFrame::Current => spec.wrench,
        ForceFrame::Desired => {
            let g_ed = g.inverse().compose(gd);
            coadjoint_transform(&g_ed.inverse(), &spec.wrench)
        }
    }
}
