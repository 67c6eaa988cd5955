//! SE(3)/SO(3) types and the Lie-group operations used across the crate.
//!
//! Twists and wrenches are stacked `[linear; angular]`: a twist is
//! `[v; omega]` (m/s, rad/s) and a wrench is `[f; tau]` (N, N·m). All 6x6
//! block matrices (adjoints, gain matrices, operational-space terms) follow
//! the same order.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;
pub type Mat6 = Matrix6<f64>;

/// Frobenius tolerance for the orthonormality invariant of rotations.
pub const ROTATION_TOL: f64 = 1e-9;
/// Skew-symmetry tolerance accepted by [`vee3`].
pub const SKEW_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("matrix is not skew-symmetric: |S + S^T| = {defect:.3e}")]
    NotSkew { defect: f64 },
    #[error("matrix is not a rotation: |R^T R - I| = {ortho:.3e}, det = {det:.6}")]
    NotRotation { ortho: f64, det: f64 },
    #[error("matrix is not symmetric positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { min_eig: f64 },
}

/// A validated element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates `R^T R = I` and `det R = 1` to [`ROTATION_TOL`].
    pub fn new(m: Mat3) -> Result<Self, GeometryError> {
        let ortho = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotRotation { ortho, det });
        }
        Ok(Rotation(m))
    }

    /// Accepts a matrix that may have accumulated numerical drift and
    /// projects it back onto SO(3) when the drift exceeds [`ROTATION_TOL`].
    pub fn new_renormalized(m: Mat3) -> Self {
        let ortho = (m.transpose() * m - Mat3::identity()).norm();
        if ortho > ROTATION_TOL {
            Rotation(nearest_rotation(&m))
        } else {
            Rotation(m)
        }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let a = axis.normalize();
        Rotation(rodrigues(&(a * angle)))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Frobenius distance of `R^T R` from the identity.
    pub fn orthonormality_drift(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }
}

impl std::ops::Mul for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation::new_renormalized(self.0 * rhs.0)
    }
}

/// Nearest orthogonal matrix with positive determinant (polar projection).
fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with vectors");
    let vt = svd.v_t.expect("svd with vectors");
    let d = (u * vt).determinant();
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d.signum()));
    u * fix * vt
}

/// A pose `g = (R, p)` on SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub position: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Rotation::identity(), position: Vec3::zeros() }
    }

    pub fn new(rotation: Rotation, position: Vec3) -> Self {
        Pose { rotation, position }
    }

    pub fn from_parts(rotation: Mat3, position: Vec3) -> Result<Self, GeometryError> {
        Ok(Pose { rotation: Rotation::new(rotation)?, position })
    }

    pub fn rotation_matrix(&self) -> &Mat3 {
        self.rotation.matrix()
    }

    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            rotation: &self.rotation * &rhs.rotation,
            position: self.rotation.matrix() * rhs.position + self.position,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        let p = -(rt.matrix() * self.position);
        Pose { rotation: rt, position: p }
    }

    pub fn act_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.matrix() * p + self.position
    }

    pub fn homogeneous(&self) -> Mat4 {
        let mut h = Mat4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        h
    }

    pub fn from_homogeneous(h: &Mat4) -> Result<Self, GeometryError> {
        let r = h.fixed_view::<3, 3>(0, 0).into_owned();
        let p = h.fixed_view::<3, 1>(0, 3).into_owned();
        Pose::from_parts(r, p)
    }
}

impl std::ops::Mul for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Body-frame velocity `[v; omega]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist(pub Vec6);

/// Body-frame force/torque `[f; tau]`, dual to [`Twist`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench(pub Vec6);

macro_rules! impl_six_vector {
    ($T:ident) => {
        impl $T {
            pub fn zero() -> Self {
                $T(Vec6::zeros())
            }

            pub fn from_parts(linear: Vec3, angular: Vec3) -> Self {
                $T(Vec6::new(linear.x, linear.y, linear.z, angular.x, angular.y, angular.z))
            }

            pub fn linear(&self) -> Vec3 {
                self.0.fixed_rows::<3>(0).into_owned()
            }

            pub fn angular(&self) -> Vec3 {
                self.0.fixed_rows::<3>(3).into_owned()
            }

            pub fn as_vector(&self) -> &Vec6 {
                &self.0
            }

            pub fn norm(&self) -> f64 {
                self.0.norm()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|x| x.is_finite())
            }
        }

        impl std::ops::Add for $T {
            type Output = $T;
            fn add(self, rhs: $T) -> $T {
                $T(self.0 + rhs.0)
            }
        }

        impl std::ops::Sub for $T {
            type Output = $T;
            fn sub(self, rhs: $T) -> $T {
                $T(self.0 - rhs.0)
            }
        }

        impl std::ops::Neg for $T {
            type Output = $T;
            fn neg(self) -> $T {
                $T(-self.0)
            }
        }

        impl std::ops::Mul<f64> for $T {
            type Output = $T;
            fn mul(self, rhs: f64) -> $T {
                $T(self.0 * rhs)
            }
        }

        impl From<Vec6> for $T {
            fn from(v: Vec6) -> $T {
                $T(v)
            }
        }
    };
}

impl_six_vector!(Twist);
impl_six_vector!(Wrench);

/// Duality pairing `<F, V> = f·v + tau·omega` (watts).
pub fn power(velocity: &Twist, force: &Wrench) -> f64 {
    velocity.0.dot(&force.0)
}

/// Translational and rotational stiffness of the elastic wrench.
#[derive(Debug, Clone, Copy)]
pub struct StiffnessGains {
    kp: Mat3,
    kr: Mat3,
}

impl StiffnessGains {
    pub fn new(kp: Mat3, kr: Mat3) -> Result<Self, GeometryError> {
        check_spd(&kp)?;
        check_spd(&kr)?;
        Ok(StiffnessGains { kp, kr })
    }

    pub fn diagonal(kp: Vec3, kr: Vec3) -> Result<Self, GeometryError> {
        Self::new(Mat3::from_diagonal(&kp), Mat3::from_diagonal(&kr))
    }

    pub fn kp(&self) -> &Mat3 {
        &self.kp
    }

    pub fn kr(&self) -> &Mat3 {
        &self.kr
    }
}

pub(crate) fn check_spd(m: &Mat3) -> Result<(), GeometryError> {
    let sym_defect = (m - m.transpose()).norm();
    if sym_defect > 1e-9 {
        return Err(GeometryError::NotPositiveDefinite { min_eig: f64::NAN });
    }
    let eigs = m.symmetric_eigenvalues();
    let min_eig = eigs.min();
    if min_eig <= 0.0 {
        return Err(GeometryError::NotPositiveDefinite { min_eig });
    }
    Ok(())
}

/// Skew matrix of a 3-vector: `hat3(w) u = w x u`.
pub fn hat3(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat3`]. Rejects matrices whose symmetric part exceeds
/// [`SKEW_TOL`]; smaller defects are symmetrized away before extraction.
pub fn vee3(s: &Mat3) -> Result<Vec3, GeometryError> {
    let defect = (s + s.transpose()).norm();
    if defect > SKEW_TOL {
        return Err(GeometryError::NotSkew { defect });
    }
    Ok(vee3_unchecked(s))
}

/// Extraction after symmetrizing `(S - S^T)/2`, for matrices that are skew
/// by construction.
pub(crate) fn vee3_unchecked(s: &Mat3) -> Vec3 {
    let a = (s - s.transpose()) * 0.5;
    Vec3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)])
}

/// se(3) matrix of a twist: `[[hat(omega), v], [0, 0]]`.
pub fn hat6(xi: &Twist) -> Mat4 {
    let mut m = Mat4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&xi.angular()));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.linear());
    m
}

/// Inverse of [`hat6`].
pub fn vee6(m: &Mat4) -> Twist {
    let s = m.fixed_view::<3, 3>(0, 0).into_owned();
    let v = m.fixed_view::<3, 1>(0, 3).into_owned();
    Twist::from_parts(v, vee3_unchecked(&s))
}

/// Below this rotation angle the closed-form exponential coefficients switch
/// to their series expansions.
const SMALL_ANGLE: f64 = 1e-8;

fn rodrigues(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = hat3(w);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        ((theta.sin()) / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Mat3::identity() + k * a + k * k * b
}

/// Group exponential of `xi * dt`, closed form.
pub fn exp_se3(xi: &Twist, dt: f64) -> Pose {
    let w = xi.angular() * dt;
    let v = xi.linear() * dt;
    let theta = w.norm();
    let k = hat3(&w);
    let r = rodrigues(&w);
    let (b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / (theta * theta),
            (theta - theta.sin()) / (theta * theta * theta),
        )
    };
    let translation_map = Mat3::identity() + k * b + k * k * c;
    Pose { rotation: Rotation::new_renormalized(r), position: translation_map * v }
}

/// Adjoint of a pose, `[[R, hat(p) R], [0, R]]` in `[v; omega]` stacking.
pub fn adjoint(g: &Pose) -> Mat6 {
    let r = g.rotation.matrix();
    let pr = hat3(&g.position) * r;
    let mut a = Mat6::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&pr);
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    a
}

/// Applies `adjoint(g)` to a twist without forming the 6x6 matrix.
pub fn adjoint_apply(g: &Pose, xi: &Twist) -> Twist {
    let r = g.rotation.matrix();
    let w = r * xi.angular();
    let v = r * xi.linear() + g.position.cross(&w);
    Twist::from_parts(v, w)
}

/// Dual (co-adjoint) transport of a wrench: `adjoint(g)^T F`.
pub fn coadjoint_transform(g: &Pose, f: &Wrench) -> Wrench {
    let r = g.rotation.matrix();
    let force = r.transpose() * f.linear();
    let torque = r.transpose() * (f.angular() - g.position.cross(&f.linear()));
    Wrench::from_parts(force, torque)
}

/// se(3) adjoint (Lie bracket) matrix of a twist:
/// `ad_xi = [[hat(omega), hat(v)], [0, hat(omega)]]`.
pub fn ad_se3(xi: &Twist) -> Mat6 {
    let wv = hat3(&xi.linear());
    let ww = hat3(&xi.angular());
    let mut a = Mat6::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&ww);
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&wv);
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&ww);
    a
}

/// Rotation logarithm, used only for interpolating waypoint trajectories.
pub(crate) fn log_so3(r: &Mat3) -> Vec3 {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta < 1e-10 {
        return vee3_unchecked(&(r - r.transpose())) * 0.5;
    }
    if (std::f64::consts::PI - theta) < 1e-6 {
        // Near pi the antisymmetric part degenerates; recover the axis from
        // the symmetric part R + I = 2 (I cos + (1-cos) nn^T)-ish.
        let m = (r + Mat3::identity()) * 0.5;
        let mut axis = Vec3::new(m[(0, 0)].max(0.0).sqrt(), m[(1, 1)].max(0.0).sqrt(), m[(2, 2)].max(0.0).sqrt());
        // Fix signs using the largest component.
        let k = axis.imax();
        if axis[k] > 0.0 {
            for i in 0..3 {
                if i != k && m[(k, i)] < 0.0 {
                    axis[i] = -axis[i];
                }
            }
        }
        return axis.normalize() * theta;
    }
    vee3_unchecked(&(r - r.transpose())) * (theta / (2.0 * theta.sin()))
}

/// Left-invariant error function
/// `Psi = tr(I - Rd^T R) + 1/2 |p - pd|^2`, zero iff `g = gd`.
pub fn error_function(g: &Pose, gd: &Pose) -> f64 {
    let rr = gd.rotation_matrix().transpose() * g.rotation_matrix();
    let dp = g.position - gd.position;
    (Mat3::identity() - rr).trace() + 0.5 * dp.norm_squared()
}

/// Geometrically consistent error vector, the body-frame gradient of
/// [`error_function`] in its first argument:
/// `e_G = [R^T (p - pd); (Rd^T R - R^T Rd)^vee]`.
pub fn gcev(g: &Pose, gd: &Pose) -> Twist {
    let r = g.rotation_matrix();
    let rd = gd.rotation_matrix();
    let lin = r.transpose() * (g.position - gd.position);
    let ang = vee3_unchecked(&(rd.transpose() * r - r.transpose() * rd));
    Twist::from_parts(lin, ang)
}

/// Elastic wrench of the SE(3) potential:
/// `f_g = [R^T Rd Kp Rd^T (p - pd); (Kr Rd^T R - R^T Rd Kr)^vee]`.
pub fn elastic_wrench(g: &Pose, gd: &Pose, k: &StiffnessGains) -> Wrench {
    let r = g.rotation_matrix();
    let rd = gd.rotation_matrix();
    let lin = r.transpose() * rd * k.kp() * rd.transpose() * (g.position - gd.position);
    let m = k.kr() * rd.transpose() * r - r.transpose() * rd * k.kr();
    Wrench::from_parts(lin, vee3_unchecked(&m))
}
