//! 6-DOF serial-arm kinematics and dynamics.
//!
//! The arm is described by product-of-exponentials data: one space-frame
//! screw axis per joint at the home configuration, the home pose of each
//! link frame (where that link's inertia is expressed), and a tool frame.
//! The joint count is fixed at six so the body Jacobian is square and the
//! operational-space projections use literal inverses.

use crate::geometry::{
    ad_se3, adjoint, adjoint_apply, error_function, exp_se3, gcev, hat3, Mat3, Mat6, Pose,
    Twist, Vec3, Vec6, Wrench,
};
use serde::Deserialize;
use std::path::Path;
use thiserror::Error;

/// Joints of the arm; fixed so Eq.-style 6x6 inverses stay literal.
pub const N_JOINTS: usize = 6;

/// Jacobians with a smallest singular value below this are treated as rank
/// deficient: the full-rank assumption behind the operational-space terms no
/// longer holds and the run is aborted rather than regularized.
pub const SINGULARITY_THRESHOLD: f64 = 1e-4;

const IK_MAX_ITERATIONS: usize = 500;
const IK_TOLERANCE: f64 = 1e-8;
const CHRISTOFFEL_STEP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RobotError {
    #[error("configuration is near-singular: sigma_min(J_b) = {sigma_min:.3e} < {SINGULARITY_THRESHOLD:.1e}")]
    NearSingular { sigma_min: f64 },
    #[error("inverse kinematics did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("failed to read robot model {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("failed to parse robot model {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

/// One revolute joint: a screw axis in the space frame at home, plus the
/// home pose of the link frame it drives.
#[derive(Debug, Clone)]
pub struct Joint {
    pub axis: Twist,
    pub origin: Pose,
}

/// Inertial data of one link, expressed in its link frame.
#[derive(Debug, Clone)]
pub struct Link {
    pub mass: f64,
    pub com: Vec3,
    pub inertia: Mat3,
}

impl Link {
    /// 6x6 spatial inertia about the link-frame origin, `[v; omega]` order.
    pub fn spatial_inertia(&self) -> Mat6 {
        let c = hat3(&self.com);
        let mut g = Mat6::zeros();
        g.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Mat3::identity() * self.mass));
        g.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-c * self.mass));
        g.fixed_view_mut::<3, 3>(3, 0).copy_from(&(c * self.mass));
        g.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(self.inertia - c * c * self.mass));
        g
    }
}

#[derive(Debug, Clone)]
pub struct RobotDescription {
    pub joints: Vec<Joint>,
    pub links: Vec<Link>,
    pub tool: Pose,
    pub gravity: Vec3,
}

#[derive(Debug, Clone, Copy)]
pub struct JointState {
    pub q: Vec6,
    pub qdot: Vec6,
}

impl JointState {
    pub fn new(q: Vec6, qdot: Vec6) -> Self {
        JointState { q, qdot }
    }

    pub fn at_rest(q: Vec6) -> Self {
        JointState { q, qdot: Vec6::zeros() }
    }
}

/// Joint-space dynamics of Eq. `M qdd + C qd + G = T + T_e`.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub m: Mat6,
    pub c: Mat6,
    pub g: Vec6,
}

/// Operational-space dynamics in the end-effector body frame.
#[derive(Debug, Clone)]
pub struct OperationalTerms {
    pub mt: Mat6,
    pub ct: Mat6,
    pub gt: Wrench,
    pub jb: Mat6,
    pub jb_dot: Mat6,
    pub jb_inv: Mat6,
    pub sigma_min: f64,
}

// ---------------------------------------------------------------------------
// Model file loading
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseSpec {
    rotation: [[f64; 3]; 3],
    position: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSpec {
    axis: [f64; 6],
    origin: PoseSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSpec {
    mass: f64,
    com: [f64; 3],
    inertia: [[f64; 3]; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpec {
    joints: Vec<JointSpec>,
    links: Vec<LinkSpec>,
    tool: PoseSpec,
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

fn pose_from_spec(spec: &PoseSpec, what: &str) -> Result<Pose, RobotError> {
    let r = Mat3::from_row_slice(&spec.rotation.concat());
    let p = Vec3::from_row_slice(&spec.position);
    Pose::from_parts(r, p)
        .map_err(|e| RobotError::InvalidModel(format!("{what}.rotation: {e}")))
}

impl RobotDescription {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RobotError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RobotError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec: ModelSpec =
            serde_json::from_str(&text).map_err(|source| RobotError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        Self::from_spec(spec)
    }

    fn from_spec(spec: ModelSpec) -> Result<Self, RobotError> {
        if spec.joints.len() != N_JOINTS {
            return Err(RobotError::InvalidModel(format!(
                "joints: expected exactly {N_JOINTS}, found {}",
                spec.joints.len()
            )));
        }
        if spec.links.len() != N_JOINTS {
            return Err(RobotError::InvalidModel(format!(
                "links: expected exactly {N_JOINTS}, found {}",
                spec.links.len()
            )));
        }
        let mut joints = Vec::with_capacity(N_JOINTS);
        for (i, j) in spec.joints.iter().enumerate() {
            joints.push(Joint {
                axis: Twist(Vec6::from_row_slice(&j.axis)),
                origin: pose_from_spec(&j.origin, &format!("joints[{i}].origin"))?,
            });
        }
        let mut links = Vec::with_capacity(N_JOINTS);
        for (i, l) in spec.links.iter().enumerate() {
            if l.mass <= 0.0 {
                return Err(RobotError::InvalidModel(format!(
                    "links[{i}].mass: must be > 0, found {}",
                    l.mass
                )));
            }
            let inertia = Mat3::from_row_slice(&l.inertia.concat());
            crate::geometry::check_spd(&inertia).map_err(|e| {
                RobotError::InvalidModel(format!("links[{i}].inertia: {e}"))
            })?;
            links.push(Link {
                mass: l.mass,
                com: Vec3::from_row_slice(&l.com),
                inertia,
            });
        }
        let tool = pose_from_spec(&spec.tool, "tool")?;
        Ok(RobotDescription {
            joints,
            links,
            tool,
            gravity: Vec3::from_row_slice(&spec.gravity),
        })
    }

    /// Re-expresses the whole model in a spatial frame moved by `h`: home
    /// poses are left-multiplied, screw axes adjoint-transported, and the
    /// gravity vector rotated. Useful for re-mounting the arm and for
    /// equivariance checks.
    pub fn left_transformed(&self, h: &Pose) -> Self {
        let ad_h = adjoint(h);
        RobotDescription {
            joints: self
                .joints
                .iter()
                .map(|j| Joint {
                    axis: Twist(ad_h * j.axis.0),
                    origin: h.compose(&j.origin),
                })
                .collect(),
            links: self.links.clone(),
            tool: h.compose(&self.tool),
            gravity: h.rotation_matrix() * self.gravity,
        }
    }

    /// Link-frame screw axes `A_i = Ad_{M_i^-1} S_i`.
    fn local_axes(&self) -> Vec<Twist> {
        self.joints
            .iter()
            .map(|j| adjoint_apply(&j.origin.inverse(), &j.axis))
            .collect()
    }

    /// Relative transforms `T_{i,i-1}(q_i)` between consecutive link frames.
    fn relative_transforms(&self, q: &Vec6, local: &[Twist]) -> Vec<Pose> {
        let mut rel = Vec::with_capacity(N_JOINTS);
        let mut prev = Pose::identity();
        for i in 0..N_JOINTS {
            let step = self.joints[i].origin.inverse().compose(&prev);
            rel.push(exp_se3(&local[i], -q[i]).compose(&step));
            prev = self.joints[i].origin;
        }
        rel
    }
}

// ---------------------------------------------------------------------------
// Kinematics
// ---------------------------------------------------------------------------

/// Tool pose `g(q) = exp(S1 q1) ... exp(S6 q6) M_tool`.
pub fn forward_kinematics(model: &RobotDescription, q: &Vec6) -> Pose {
    let mut g = Pose::identity();
    for (i, joint) in model.joints.iter().enumerate() {
        g = g.compose(&exp_se3(&joint.axis, q[i]));
    }
    g.compose(&model.tool)
}

/// Pose of link frame `i` (0-based).
pub fn link_pose(model: &RobotDescription, q: &Vec6, i: usize) -> Pose {
    let mut g = Pose::identity();
    for k in 0..=i {
        g = g.compose(&exp_se3(&model.joints[k].axis, q[k]));
    }
    g.compose(&model.joints[i].origin)
}

/// Body Jacobian of the tool frame: `V^b = J_b(q) qdot`.
pub fn body_jacobian(model: &RobotDescription, q: &Vec6) -> Mat6 {
    let mut j = Mat6::zeros();
    let mut suffix = model.tool;
    for i in (0..N_JOINTS).rev() {
        let col = adjoint_apply(&suffix.inverse(), &model.joints[i].axis);
        j.set_column(i, &col.0);
        suffix = exp_se3(&model.joints[i].axis, q[i]).compose(&suffix);
    }
    j
}

/// Time derivative of the body Jacobian along `qdot`, assembled column-wise
/// from the Lie brackets `dJ_i/dt = ad_{J_i} (sum_{j>i} J_j qdot_j)`.
pub fn jacobian_rate(model: &RobotDescription, q: &Vec6, qdot: &Vec6) -> Mat6 {
    let j = body_jacobian(model, q);
    jacobian_rate_from(&j, qdot)
}

pub(crate) fn jacobian_rate_from(jb: &Mat6, qdot: &Vec6) -> Mat6 {
    let mut jdot = Mat6::zeros();
    let mut tail = Vec6::zeros();
    for i in (0..N_JOINTS).rev() {
        let col = Twist(jb.column(i).into_owned());
        jdot.set_column(i, &(ad_se3(&col) * tail));
        tail += col.0 * qdot[i];
    }
    jdot
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

/// Recursive Newton-Euler inverse dynamics: joint torques realizing `qddot`
/// at `(q, qdot)` under the model's gravity, with no tip wrench.
pub fn rnea(model: &RobotDescription, q: &Vec6, qdot: &Vec6, qddot: &Vec6) -> Vec6 {
    let local = model.local_axes();
    let rel = model.relative_transforms(q, &local);

    let mut v = vec![Twist::zero(); N_JOINTS + 1];
    let mut vdot = vec![Twist::zero(); N_JOINTS + 1];
    // Accelerating the base opposite to gravity folds the gravity moment
    // into the same recursion.
    vdot[0] = Twist::from_parts(-model.gravity, Vec3::zeros());

    for i in 0..N_JOINTS {
        let transported = adjoint_apply(&rel[i], &v[i]);
        v[i + 1] = Twist(transported.0 + local[i].0 * qdot[i]);
        let a_transport = adjoint_apply(&rel[i], &vdot[i]);
        let coriolis = ad_se3(&v[i + 1]) * local[i].0 * qdot[i];
        vdot[i + 1] = Twist(a_transport.0 + coriolis + local[i].0 * qddot[i]);
    }

    let inertias: Vec<Mat6> = model.links.iter().map(Link::spatial_inertia).collect();
    let mut tau = Vec6::zeros();
    let mut f = Vec6::zeros();
    for i in (0..N_JOINTS).rev() {
        let gi = &inertias[i];
        let vi = &v[i + 1];
        let mut fi = gi * vdot[i + 1].0 - ad_se3(vi).transpose() * (gi * vi.0);
        if i + 1 < N_JOINTS {
            fi += adjoint(&rel[i + 1]).transpose() * f;
        }
        tau[i] = local[i].0.dot(&fi);
        f = fi;
    }
    tau
}

/// Inertia matrix by composite-rigid-body assembly.
pub fn mass_matrix(model: &RobotDescription, q: &Vec6) -> Mat6 {
    let local = model.local_axes();
    let rel = model.relative_transforms(q, &local);
    mass_matrix_from(model, &local, &rel)
}

fn mass_matrix_from(model: &RobotDescription, local: &[Twist], rel: &[Pose]) -> Mat6 {
    // Composite inertias: links i..n with joints beyond i locked.
    let mut composite: Vec<Mat6> = model.links.iter().map(Link::spatial_inertia).collect();
    for i in (0..N_JOINTS - 1).rev() {
        let ad = adjoint(&rel[i + 1]);
        let transported = ad.transpose() * composite[i + 1] * ad;
        composite[i] += transported;
    }

    let mut m = Mat6::zeros();
    for i in 0..N_JOINTS {
        let mut x = local[i].0;
        m[(i, i)] = x.dot(&(composite[i] * x));
        for j in (i + 1)..N_JOINTS {
            x = adjoint(&rel[j]) * x;
            let mij = x.dot(&(composite[j] * local[j].0));
            m[(i, j)] = mij;
            m[(j, i)] = mij;
        }
    }
    m
}

/// `M`, `C`, `G` with the Coriolis matrix built from Christoffel symbols of
/// the inertia matrix, which guarantees `Mdot - 2C` skew-symmetry.
pub fn joint_space_terms(model: &RobotDescription, state: &JointState) -> DynamicsTerms {
    let m = mass_matrix(model, &state.q);

    // Central differences of M along each joint.
    let mut dm = Vec::with_capacity(N_JOINTS);
    for k in 0..N_JOINTS {
        let mut qp = state.q;
        let mut qm = state.q;
        qp[k] += CHRISTOFFEL_STEP;
        qm[k] -= CHRISTOFFEL_STEP;
        dm.push((mass_matrix(model, &qp) - mass_matrix(model, &qm)) / (2.0 * CHRISTOFFEL_STEP));
    }

    let mut c = Mat6::zeros();
    for i in 0..N_JOINTS {
        for j in 0..N_JOINTS {
            let mut cij = 0.0;
            for k in 0..N_JOINTS {
                cij += 0.5
                    * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)])
                    * state.qdot[k];
            }
            c[(i, j)] = cij;
        }
    }

    let g = rnea(model, &state.q, &Vec6::zeros(), &Vec6::zeros());
    DynamicsTerms { m, c, g }
}

/// Operational-space terms in the tool body frame:
/// `Mt = J^-T M J^-1`, `Ct = J^-T (C - M J^-1 Jdot) J^-1`, `Gt = J^-T G`.
pub fn operational_terms(
    model: &RobotDescription,
    state: &JointState,
) -> Result<OperationalTerms, RobotError> {
    let joint_terms = joint_space_terms(model, state);
    operational_terms_from(model, state, &joint_terms)
}

pub fn operational_terms_from(
    model: &RobotDescription,
    state: &JointState,
    joint_terms: &DynamicsTerms,
) -> Result<OperationalTerms, RobotError> {
    let jb = body_jacobian(model, &state.q);
    let sigma_min = jb
        .singular_values()
        .iter()
        .fold(f64::INFINITY, |a, &s| a.min(s));
    if sigma_min < SINGULARITY_THRESHOLD {
        return Err(RobotError::NearSingular { sigma_min });
    }
    let jb_inv = jb.try_inverse().ok_or(RobotError::NearSingular { sigma_min })?;
    let jb_dot = jacobian_rate_from(&jb, &state.qdot);
    let jt_inv = jb_inv.transpose();
    let mt = jt_inv * joint_terms.m * jb_inv;
    let ct = jt_inv * (joint_terms.c - joint_terms.m * jb_inv * jb_dot) * jb_inv;
    let gt = Wrench(jt_inv * joint_terms.g);
    Ok(OperationalTerms { mt, ct, gt, jb, jb_dot, jb_inv, sigma_min })
}

/// Solves `M qdd = T + J_b^T F_e - C qd - G` for the joint accelerations.
pub fn forward_dynamics(
    model: &RobotDescription,
    state: &JointState,
    torque: &Vec6,
    external: &Wrench,
) -> Vec6 {
    let terms = joint_space_terms(model, state);
    let jb = body_jacobian(model, &state.q);
    forward_dynamics_from(&terms, &jb, state, torque, external)
}

pub fn forward_dynamics_from(
    terms: &DynamicsTerms,
    jb: &Mat6,
    state: &JointState,
    torque: &Vec6,
    external: &Wrench,
) -> Vec6 {
    let rhs = torque + jb.transpose() * external.0 - terms.c * state.qdot - terms.g;
    terms
        .m
        .cholesky()
        .map(|chol| chol.solve(&rhs))
        .unwrap_or_else(|| terms.m.lu().solve(&rhs).expect("inertia matrix invertible"))
}

// ---------------------------------------------------------------------------
// Inverse kinematics
// ---------------------------------------------------------------------------

/// Damped least-squares IK on the GCEV residual. Converges to
/// `Psi(fk(q), target) <= 1e-8` or reports `NoConvergence`.
pub fn inverse_kinematics(
    model: &RobotDescription,
    target: &Pose,
    seed: &Vec6,
) -> Result<Vec6, RobotError> {
    let mut q = *seed;
    let mut psi = error_function(&forward_kinematics(model, &q), target);
    let mut damping: f64 = 1e-3;
    for iteration in 0..IK_MAX_ITERATIONS {
        if psi <= IK_TOLERANCE {
            log::debug!("ik converged in {iteration} iterations (psi = {psi:.3e})");
            return Ok(q);
        }
        let g = forward_kinematics(model, &q);
        let mut e = gcev(&g, target).0;
        // The angular GCEV is twice the rotation vector to first order;
        // halving it makes the Gauss-Newton step a true Newton step near
        // the solution instead of a 2x overshoot.
        for i in 3..6 {
            e[i] *= 0.5;
        }
        let jb = body_jacobian(model, &q);
        let jt = jb.transpose();

        // Levenberg-Marquardt style damping: grow it until a step improves.
        let mut improved = false;
        while damping <= 1e6 {
            let normal = jt * jb + Mat6::identity() * damping * damping;
            let step = match normal.cholesky() {
                Some(chol) => chol.solve(&(jt * e)),
                None => break,
            };
            let candidate = q - step;
            let candidate_psi = error_function(&forward_kinematics(model, &candidate), target);
            if candidate_psi < psi {
                q = candidate;
                psi = candidate_psi;
                damping = (damping * 0.5).max(1e-4);
                improved = true;
                break;
            }
            damping *= 4.0;
        }
        if !improved {
            return Err(RobotError::NoConvergence { iterations: iteration, residual: psi });
        }
    }
    Err(RobotError::NoConvergence { iterations: IK_MAX_ITERATIONS, residual: psi })
}
