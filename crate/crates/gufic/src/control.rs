//! The three controllers and the energy-tank machinery.
//!
//! - [`gic_wrench`]: impedance tracking of a desired pose and transported
//!   desired velocity.
//! - The naive law adds a force-tracking PID on top of the impedance wrench
//!   with no guards; it is not passive and serves as the negative control
//!   for the audit.
//! - [`Gufic`] guards both channels with energy tanks: the force wrench is
//!   scaled by the force-tank state, the desired velocity is scaled by the
//!   impedance-tank state and re-integrated into a modified setpoint
//!   `g_d'`, and the final torque is `T = J_b^T (F_f' + F_i')`.
//!
//! Power bookkeeping inside the tanks uses the raw interaction wrench; the
//! force PID consumes the filtered sensor signal, whose lag would otherwise
//! leak unaccounted energy through the switching logic.

use crate::fields::{
    force_field, velocity_field_at, velocity_field_rate_at, ForceFieldSpec, Trajectory,
};
use crate::geometry::{
    adjoint_apply, elastic_wrench, error_function, exp_se3, power, Mat6, Pose, StiffnessGains,
    Twist, Vec6, Wrench,
};
use crate::robot::OperationalTerms;
use thiserror::Error;

/// Numerical floor of a tank level: realizes `x_t != 0`.
pub const TANK_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("damping matrix must be symmetric positive definite")]
    BadDamping,
    #[error("force PID gains must be non-negative, found ({kp}, {ki}, {kd})")]
    BadPidGains { kp: f64, ki: f64, kd: f64 },
    #[error("tank parameters must satisfy 0 < lower < lower + margin < upper, found lower {lower}, margin {margin}, upper {upper}")]
    BadTankBounds { lower: f64, margin: f64, upper: f64 },
    #[error("tank initial level {initial} outside [{lower}, {upper}]")]
    BadTankInitial { initial: f64, lower: f64, upper: f64 },
}

/// Stiffness plus a symmetric positive definite 6x6 damping matrix.
#[derive(Debug, Clone)]
pub struct ImpedanceGains {
    pub stiffness: StiffnessGains,
    kd: Mat6,
}

impl ImpedanceGains {
    pub fn new(stiffness: StiffnessGains, kd: Mat6) -> Result<Self, ControlError> {
        if (kd - kd.transpose()).norm() > 1e-9 || kd.symmetric_eigenvalues().min() <= 0.0 {
            return Err(ControlError::BadDamping);
        }
        Ok(ImpedanceGains { stiffness, kd })
    }

    pub fn kd(&self) -> &Mat6 {
        &self.kd
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForcePidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Per-channel clamp on the error integral (anti-windup).
    pub integral_limit: f64,
}

impl ForcePidGains {
    pub fn new(kp: f64, ki: f64, kd: f64, integral_limit: f64) -> Result<Self, ControlError> {
        if kp < 0.0 || ki < 0.0 || kd < 0.0 {
            return Err(ControlError::BadPidGains { kp, ki, kd });
        }
        Ok(ForcePidGains { kp, ki, kd, integral_limit })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ForcePidState {
    pub integral: Vec6,
    pub previous_error: Option<Vec6>,
}

/// Force-tracking PID on the error `e_F = -F_sensed - F_d`, with the
/// desired force fed forward:
/// `F_f = -kp e_F - kd d/dt e_F - ki int e_F + F_d`.
pub fn force_pid(
    sensed: &Wrench,
    desired: &Wrench,
    gains: &ForcePidGains,
    state: &mut ForcePidState,
    dt: f64,
) -> Wrench {
    let error = -sensed.0 - desired.0;
    let previous = state.previous_error.unwrap_or(error);
    let derivative = (error - previous) / dt;
    state.integral += (error + previous) * (0.5 * dt);
    for i in 0..6 {
        state.integral[i] = state.integral[i].clamp(-gains.integral_limit, gains.integral_limit);
    }
    state.previous_error = Some(error);
    Wrench(-error * gains.kp - state.integral * gains.ki - derivative * gains.kd + desired.0)
}

#[derive(Debug, Clone, Copy)]
pub struct TankParams {
    pub upper: f64,
    pub lower: f64,
    pub margin: f64,
    pub initial: f64,
}

impl TankParams {
    pub fn new(initial: f64, lower: f64, upper: f64, margin: f64) -> Result<Self, ControlError> {
        if !(0.0 < lower && lower < lower + margin && lower + margin < upper) {
            return Err(ControlError::BadTankBounds { lower, margin, upper });
        }
        if !(lower..=upper).contains(&initial) {
            return Err(ControlError::BadTankInitial { initial, lower, upper });
        }
        Ok(TankParams { upper, lower, margin, initial })
    }
}

/// Tank coordinate `x_t`; the stored energy is `T = x_t^2 / 2`.
#[derive(Debug, Clone, Copy)]
pub struct TankState {
    x: f64,
}

impl TankState {
    pub fn from_level(level: f64) -> Self {
        TankState { x: (2.0 * level.max(TANK_FLOOR)).sqrt() }
    }

    pub fn level(&self) -> f64 {
        0.5 * self.x * self.x
    }

    pub fn coordinate(&self) -> f64 {
        self.x
    }

    fn integrate(&mut self, xdot: f64, dt: f64) {
        self.x += xdot * dt;
        if self.level() < TANK_FLOOR || self.x < 0.0 {
            self.x = (2.0 * TANK_FLOOR).sqrt();
        }
    }
}

/// Smooth low-tank gate: 1 above `lower + margin`, cosine blend inside the
/// margin band, 0 at and below `lower`.
pub fn switching_alpha(level: f64, params: &TankParams) -> f64 {
    if level >= params.lower + params.margin {
        1.0
    } else if level >= params.lower {
        0.5 * (1.0 - ((level - params.lower) / params.margin * std::f64::consts::PI).cos())
    } else {
        0.0
    }
}

/// Derivative of [`switching_alpha`] with respect to the tank level.
pub fn switching_alpha_rate(level: f64, params: &TankParams) -> f64 {
    if level >= params.lower + params.margin || level < params.lower {
        0.0
    } else {
        let phase = (level - params.lower) / params.margin * std::f64::consts::PI;
        0.5 * std::f64::consts::PI / params.margin * phase.sin()
    }
}

/// Switching values in effect during one tank update.
#[derive(Debug, Clone, Copy)]
pub struct TankSwitching {
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    /// Wrench/velocity scale `gamma + alpha (1 - gamma)`.
    pub scale: f64,
    /// Time derivative of the scale along the tank flow; the modified
    /// velocity is `s(t) V_d*`, so its rate carries an `sdot V_d*` term.
    pub scale_rate: f64,
}

/// One explicit-Euler step of the force tank.
///
/// `gamma_f = 1` iff the force wrench extracts energy (`(V^b)^T F_f < 0`),
/// in which case the tank charges by the extracted power; otherwise the
/// attenuated wrench spends tank budget. Returns the modified wrench
/// `F_f' = (gamma_f + alpha_f (1 - gamma_f)) F_f`.
pub fn force_tank_step(
    state: &mut TankState,
    vb: &Twist,
    ff: &Wrench,
    params: &TankParams,
    dt: f64,
) -> (Wrench, TankSwitching) {
    let level = state.level();
    let port_power = power(vb, ff);
    let gamma = if port_power < 0.0 { 1.0 } else { 0.0 };
    let beta = if level <= params.upper { 1.0 } else { 0.0 };
    let alpha = switching_alpha(level, params);
    let scale = gamma + alpha * (1.0 - gamma);
    let xdot = (-beta * gamma * port_power + alpha * (gamma - 1.0) * port_power) / state.x;
    let scale_rate = (1.0 - gamma) * switching_alpha_rate(level, params) * (state.x * xdot);
    state.integrate(xdot, dt);
    (Wrench(ff.0 * scale), TankSwitching { gamma, beta, alpha, scale, scale_rate })
}

/// One explicit-Euler step of the impedance tank.
///
/// The guarded port power is `(V_d*)^T (F_f' + F_e)`; damping dissipation
/// `e_V'^T K_d e_V'` recharges the tank while it is below its cap. Returns
/// the velocity scale `s_i` so that `(V_d*)' = s_i V_d*`.
pub fn impedance_tank_step(
    state: &mut TankState,
    vd_star: &Twist,
    ff_prime: &Wrench,
    fe: &Wrench,
    vb: &Twist,
    kd: &Mat6,
    params: &TankParams,
    dt: f64,
) -> (f64, TankSwitching) {
    let level = state.level();
    let port_power = power(vd_star, &Wrench(ff_prime.0 + fe.0));
    let gamma = if port_power > 0.0 { 1.0 } else { 0.0 };
    let beta = if level <= params.upper { 1.0 } else { 0.0 };
    let alpha = switching_alpha(level, params);
    let scale = gamma + alpha * (1.0 - gamma);
    let ev_prime = Twist(vb.0 - vd_star.0 * scale);
    let damping_recharge = (ev_prime.0.transpose() * kd * ev_prime.0)[0];
    let xdot = (beta * (gamma * port_power + damping_recharge)
        + alpha * (1.0 - gamma) * port_power)
        / state.x;
    let scale_rate = (1.0 - gamma) * switching_alpha_rate(level, params) * (state.x * xdot);
    state.integrate(xdot, dt);
    (scale, TankSwitching { gamma, beta, alpha, scale, scale_rate })
}

/// Impedance wrench tracking `(gd, V_d*, Vdot_d*)`:
/// `F_i = Mt Vdot_d* + Ct V_d* + Gt - f_g(g, gd) - K_d (V^b - V_d*)`.
pub fn gic_wrench(
    g: &Pose,
    gd: &Pose,
    vb: &Twist,
    vd_star: &Twist,
    vd_star_dot: &Twist,
    op: &OperationalTerms,
    gains: &ImpedanceGains,
) -> Wrench {
    let ev = vb.0 - vd_star.0;
    let spring = elastic_wrench(g, gd, &gains.stiffness);
    Wrench(
        op.mt * vd_star_dot.0 + op.ct * vd_star.0 + op.gt.0 - spring.0 - gains.kd * ev,
    )
}

/// Same law against the modified setpoint and tank-scaled velocities.
pub fn modified_gic(
    g: &Pose,
    gd_prime: &Pose,
    vb: &Twist,
    vd_star_prime: &Twist,
    vd_star_dot_prime: &Twist,
    op: &OperationalTerms,
    gains: &ImpedanceGains,
) -> Wrench {
    gic_wrench(g, gd_prime, vb, vd_star_prime, vd_star_dot_prime, op, gains)
}

/// Advances the modified setpoint along the scaled field:
/// `(V_d^b)' = Ad_{g_ed'^-1} (V_d*)'` with `g_ed' = g^-1 g_d'`, then
/// `g_d' <- g_d' exp((V_d^b)' dt)`.
pub fn integrate_setpoint(gd_prime: &Pose, g: &Pose, vd_star_prime: &Twist, dt: f64) -> Pose {
    let g_ed = g.inverse().compose(gd_prime);
    let vd_body = adjoint_apply(&g_ed.inverse(), vd_star_prime);
    gd_prime.compose(&exp_se3(&vd_body, dt))
}

/// Optional contact-loss attenuation of the force law:
/// `rho = exp(-max(0, Psi - psi0)^2 / sigma^2)`.
#[derive(Debug, Clone, Copy)]
pub struct ShapingConfig {
    pub psi0: f64,
    pub sigma: f64,
}

pub fn shaping_rho(g: &Pose, gd_prime: &Pose, config: Option<&ShapingConfig>) -> f64 {
    match config {
        None => 1.0,
        Some(c) => {
            let excess = (error_function(g, gd_prime) - c.psi0).max(0.0);
            (-(excess * excess) / (c.sigma * c.sigma)).exp()
        }
    }
}

/// Per-step tank diagnostics as logged.
#[derive(Debug, Clone, Copy)]
pub struct TankDiagnostics {
    pub force: TankSwitching,
    pub impedance: TankSwitching,
    pub force_level: f64,
    pub impedance_level: f64,
}

impl TankDiagnostics {
    fn saturated(force_level: f64, impedance_level: f64) -> Self {
        let unit = TankSwitching { gamma: 0.0, beta: 1.0, alpha: 1.0, scale: 1.0, scale_rate: 0.0 };
        TankDiagnostics { force: unit, impedance: unit, force_level, impedance_level }
    }
}

/// Everything one control step produces, including the diagnostics that go
/// into the run log.
#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub torque: Vec6,
    pub total_wrench: Wrench,
    pub fi_prime: Wrench,
    /// Force PID output after shaping, before the tank.
    pub ff: Wrench,
    pub ff_prime: Wrench,
    pub fd: Wrench,
    pub vd_star: Twist,
    pub vd_star_prime: Twist,
    pub vd_star_dot: Twist,
    pub ev_prime: Twist,
    pub gd_prime: Pose,
    pub reference: Pose,
    pub rho: f64,
    pub tanks: TankDiagnostics,
}

#[derive(Debug, Clone)]
pub struct GuficState {
    pub force_tank: TankState,
    pub impedance_tank: TankState,
    pub pid: ForcePidState,
    pub gd_prime: Pose,
}

/// The tank-guarded force-impedance controller. With `tanks_enabled =
/// false` both scales are pinned to one and the tank levels frozen, which
/// is exactly the naive law.
#[derive(Debug, Clone)]
pub struct Gufic {
    pub gains: ImpedanceGains,
    pub pid_gains: ForcePidGains,
    pub force_tank_params: TankParams,
    pub impedance_tank_params: TankParams,
    pub zeta: f64,
    pub force_field: ForceFieldSpec,
    pub shaping: Option<ShapingConfig>,
    pub tanks_enabled: bool,
    state: GuficState,
}

impl Gufic {
    pub fn new(
        gains: ImpedanceGains,
        pid_gains: ForcePidGains,
        force_tank_params: TankParams,
        impedance_tank_params: TankParams,
        zeta: f64,
        force_field: ForceFieldSpec,
        shaping: Option<ShapingConfig>,
        tanks_enabled: bool,
        initial_reference: Pose,
    ) -> Self {
        Gufic {
            state: GuficState {
                force_tank: TankState::from_level(force_tank_params.initial),
                impedance_tank: TankState::from_level(impedance_tank_params.initial),
                pid: ForcePidState::default(),
                gd_prime: initial_reference,
            },
            gains,
            pid_gains,
            force_tank_params,
            impedance_tank_params,
            zeta,
            force_field,
            shaping,
            tanks_enabled,
        }
    }

    pub fn state(&self) -> &GuficState {
        &self.state
    }

    /// One 1 kHz step.
    ///
    /// `sensed` is the filtered force/torque signal consumed by the PID;
    /// `raw` is the unfiltered interaction wrench used for the tank power
    /// bookkeeping.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        t: f64,
        dt: f64,
        trajectory: &Trajectory,
        g: &Pose,
        vb: &Twist,
        op: &OperationalTerms,
        sensed: &Wrench,
        raw: &Wrench,
    ) -> ControlOutput {
        let sample = trajectory.sample(t);
        let vd_star = velocity_field_at(&sample, g, self.zeta);
        let vd_star_dot = velocity_field_rate_at(&sample, g, vb, self.zeta);

        let fd = force_field(&self.force_field, g, &sample.pose);
        let pid_out = force_pid(sensed, &fd, &self.pid_gains, &mut self.state.pid, dt);
        let rho = shaping_rho(g, &self.state.gd_prime, self.shaping.as_ref());
        let ff = Wrench(pid_out.0 * rho);

        let (ff_prime, tanks) = if self.tanks_enabled {
            let (ff_prime, force_sw) =
                force_tank_step(&mut self.state.force_tank, vb, &ff, &self.force_tank_params, dt);
            let (_, imp_sw) = impedance_tank_step(
                &mut self.state.impedance_tank,
                &vd_star,
                &ff_prime,
                raw,
                vb,
                self.gains.kd(),
                &self.impedance_tank_params,
                dt,
            );
            (
                ff_prime,
                TankDiagnostics {
                    force: force_sw,
                    impedance: imp_sw,
                    force_level: self.state.force_tank.level(),
                    impedance_level: self.state.impedance_tank.level(),
                },
            )
        } else {
            (
                ff,
                TankDiagnostics::saturated(
                    self.state.force_tank.level(),
                    self.state.impedance_tank.level(),
                ),
            )
        };

        let s_i = tanks.impedance.scale;
        let vd_star_prime = Twist(vd_star.0 * s_i);
        // Full derivative of the modified velocity, including the gate slew.
        let vd_star_dot_prime =
            Twist(vd_star_dot.0 * s_i + vd_star.0 * tanks.impedance.scale_rate);

        self.state.gd_prime = integrate_setpoint(&self.state.gd_prime, g, &vd_star_prime, dt);

        let fi_prime = modified_gic(
            g,
            &self.state.gd_prime,
            vb,
            &vd_star_prime,
            &vd_star_dot_prime,
            op,
            &self.gains,
        );
        let total = Wrench(ff_prime.0 + fi_prime.0);
        let ev_prime = Twist(vb.0 - vd_star_prime.0);

        ControlOutput {
            torque: op.jb.transpose() * total.0,
            total_wrench: total,
            fi_prime,
            ff,
            ff_prime,
            fd,
            vd_star,
            vd_star_prime,
            vd_star_dot,
            ev_prime,
            gd_prime: self.state.gd_prime,
            reference: sample.pose,
            rho,
            tanks,
        }
    }
}

/// The impedance-only baseline: tracks the raw reference `gbar_d(t)` with
/// the transported reference velocity (no descent term, no force loop).
#[derive(Debug, Clone)]
pub struct GicController {
    pub gains: ImpedanceGains,
}

impl GicController {
    pub fn step(
        &self,
        t: f64,
        trajectory: &Trajectory,
        g: &Pose,
        vb: &Twist,
        op: &OperationalTerms,
    ) -> ControlOutput {
        let sample = trajectory.sample(t);
        let vd_star = velocity_field_at(&sample, g, 0.0);
        let vd_star_dot = velocity_field_rate_at(&sample, g, vb, 0.0);
        let fi = gic_wrench(g, &sample.pose, vb, &vd_star, &vd_star_dot, op, &self.gains);
        ControlOutput {
            torque: op.jb.transpose() * fi.0,
            total_wrench: fi,
            fi_prime: fi,
            ff: Wrench::zero(),
            ff_prime: Wrench::zero(),
            fd: Wrench::zero(),
            vd_star,
            vd_star_prime: vd_star,
            vd_star_dot,
            ev_prime: Twist(vb.0 - vd_star.0),
            gd_prime: sample.pose,
            reference: sample.pose,
            rho: 1.0,
            tanks: TankDiagnostics::saturated(0.0, 0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ForceFrame, Trajectory, TrajectoryKind, Waypoint};
    use crate::geometry::{Mat3, Vec3};
    use crate::robot::{operational_terms, JointState};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gains() -> ImpedanceGains {
        ImpedanceGains::new(
            StiffnessGains::diagonal(Vec3::new(2000.0, 2000.0, 10.0), Vec3::repeat(2000.0))
                .unwrap(),
            Mat6::identity() * 500.0,
        )
        .unwrap()
    }

    fn pid_gains() -> ForcePidGains {
        ForcePidGains::new(1.0, 0.5, 4.0, 50.0).unwrap()
    }

    fn tank(initial: f64) -> TankParams {
        TankParams::new(initial, 0.1, 20.0, 0.5).unwrap()
    }

    fn static_trajectory(pose: Pose) -> Trajectory {
        Trajectory::new(TrajectoryKind::Waypoints(vec![
            Waypoint { time: 0.0, pose },
            Waypoint { time: 1.0, pose },
        ]))
        .unwrap()
    }

    fn press_field() -> ForceFieldSpec {
        ForceFieldSpec {
            wrench: Wrench(Vec6::new(0.0, 0.0, 10.0, 0.0, 0.0, 0.0)),
            frame: ForceFrame::Current,
        }
    }

    const TEST_Q: [f64; 6] = [0.3, 0.7, 1.1, 0.4, 0.8, 0.2];

    #[test]
    fn force_pid_zero_error_feeds_forward() {
        let mut state = ForcePidState::default();
        let fd = Wrench(Vec6::new(0.0, 0.0, 10.0, 0.0, 0.0, 0.0));
        let sensed = Wrench(-fd.0);
        let out = force_pid(&sensed, &fd, &pid_gains(), &mut state, 1e-3);
        assert_relative_eq!(out.0, fd.0, epsilon = 1e-12);
    }

    #[test]
    fn force_pid_matches_scalar_hand_computation() {
        let gains = ForcePidGains::new(1.0, 0.5, 0.0, 50.0).unwrap();
        let mut state = ForcePidState::default();
        let fd = Wrench(Vec6::new(0.0, 0.0, 10.0, 0.0, 0.0, 0.0));
        let dt = 1e-3;
        // First step, zero sensed force: e = -10 on channel z.
        let out = force_pid(&Wrench::zero(), &fd, &gains, &mut state, dt);
        let e = -10.0;
        let integral = e * dt;
        let expected = -gains.kp * e - gains.ki * integral + 10.0;
        assert_relative_eq!(out.0[2], expected, epsilon = 1e-12);
        assert_relative_eq!(out.0[0], 0.0, epsilon = 1e-12);
        // Second step with sensed force halfway there.
        let sensed = Wrench(Vec6::new(0.0, 0.0, -5.0, 0.0, 0.0, 0.0));
        let out2 = force_pid(&sensed, &fd, &gains, &mut state, dt);
        let e2 = 5.0 - 10.0;
        let integral2 = integral + 0.5 * (e + e2) * dt;
        let expected2 = -gains.kp * e2 - gains.ki * integral2 + 10.0;
        assert_relative_eq!(out2.0[2], expected2, epsilon = 1e-12);
    }

    #[test]
    fn force_pid_degenerates_to_proportional() {
        let gains = ForcePidGains::new(2.5, 0.0, 0.0, 50.0).unwrap();
        let mut state = ForcePidState::default();
        let fd = Wrench(Vec6::new(1.0, -2.0, 4.0, 0.0, 0.5, 0.0));
        let sensed = Wrench(Vec6::new(0.5, 0.5, -1.0, 0.1, 0.0, -0.2));
        let out = force_pid(&sensed, &fd, &gains, &mut state, 1e-3);
        let e = -sensed.0 - fd.0;
        assert_relative_eq!(out.0, -e * 2.5 + fd.0, epsilon = 1e-12);
    }

    #[test]
    fn force_pid_derivative_uses_backward_difference() {
        let gains = ForcePidGains::new(0.0, 0.0, 4.0, 50.0).unwrap();
        let mut state = ForcePidState::default();
        let dt = 1e-3;
        let fd = Wrench::zero();
        let s1 = Wrench(Vec6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let out1 = force_pid(&s1, &fd, &gains, &mut state, dt);
        // First step has no history: derivative term is zero.
        assert_relative_eq!(out1.0[0], 0.0, epsilon = 1e-12);
        let s2 = Wrench(Vec6::new(2.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let out2 = force_pid(&s2, &fd, &gains, &mut state, dt);
        // e went from -1 to -2: derivative -1000, output -kd * de = +4000.
        assert_relative_eq!(out2.0[0], 4000.0, epsilon = 1e-9);
    }

    #[test]
    fn alpha_boundaries() {
        let p = tank(10.0);
        assert_eq!(switching_alpha(p.lower, &p), 0.0);
        assert_relative_eq!(switching_alpha(p.lower + p.margin / 2.0, &p), 0.5, epsilon = 1e-12);
        assert_eq!(switching_alpha(p.lower + p.margin, &p), 1.0);
        assert_eq!(switching_alpha(p.upper, &p), 1.0);
        assert_eq!(switching_alpha(0.0, &p), 0.0);
    }

    #[test]
    fn force_tank_charges_in_passive_direction() {
        let params = tank(10.0);
        let mut state = TankState::from_level(10.0);
        let dt = 1e-3;
        // Velocity opposing the wrench: (V^b)^T F_f < 0.
        let vb = Twist(Vec6::new(-0.1, 0.0, 0.0, 0.0, 0.0, 0.0));
        let ff = Wrench(Vec6::new(5.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let port = power(&vb, &ff);
        let x0 = state.coordinate();
        let (ff_prime, sw) = force_tank_step(&mut state, &vb, &ff, &params, dt);
        assert_eq!(sw.gamma, 1.0);
        assert_eq!(sw.beta, 1.0);
        assert_eq!(ff_prime.0, ff.0);
        // Hand Euler on x: xdot = -port / x.
        let expected_x = x0 + (-port / x0) * dt;
        assert_relative_eq!(state.coordinate(), expected_x, epsilon = 1e-15);
        assert_relative_eq!(state.level() - 10.0, -port * dt, max_relative = 1e-3);
    }

    #[test]
    fn force_tank_shuts_off_when_depleted() {
        let params = tank(10.0);
        let mut state = TankState::from_level(params.lower);
        let vb = Twist(Vec6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0));
        let ff = Wrench(Vec6::new(5.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let (ff_prime, sw) = force_tank_step(&mut state, &vb, &ff, &params, 1e-3);
        assert_eq!(sw.gamma, 0.0);
        assert_eq!(sw.alpha, 0.0);
        assert_eq!(ff_prime.0, Vec6::zeros());
        // Nothing flows at alpha = 0.
        assert_relative_eq!(state.level(), params.lower, epsilon = 1e-12);
    }

    #[test]
    fn force_tank_freezes_when_full() {
        let params = tank(10.0);
        let over = params.upper + 0.5;
        let mut state = TankState::from_level(over);
        let vb = Twist(Vec6::new(-0.1, 0.0, 0.0, 0.0, 0.0, 0.0));
        let ff = Wrench(Vec6::new(5.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let (ff_prime, sw) = force_tank_step(&mut state, &vb, &ff, &params, 1e-3);
        assert_eq!(sw.beta, 0.0);
        assert_eq!(sw.gamma, 1.0);
        assert_eq!(ff_prime.0, ff.0);
        assert_relative_eq!(state.level(), over, epsilon = 1e-12);
    }

    #[test]
    fn impedance_tank_absorbs_port_and_damping() {
        let params = tank(10.0);
        let mut state = TankState::from_level(10.0);
        let kd = Mat6::identity() * 500.0;
        let dt = 1e-3;
        let vd_star = Twist(Vec6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0));
        let ff_prime = Wrench(Vec6::new(3.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let fe = Wrench(Vec6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let vb = Twist(Vec6::new(0.05, 0.0, 0.0, 0.0, 0.0, 0.0));
        let x0 = state.coordinate();
        let (scale, sw) = impedance_tank_step(
            &mut state, &vd_star, &ff_prime, &fe, &vb, &kd, &params, dt,
        );
        assert_eq!(scale, 1.0);
        assert_eq!(sw.gamma, 1.0);
        let port = 0.1 * 4.0;
        let ev = 0.05 - 0.1;
        let recharge = 500.0 * ev * ev;
        let expected_x = x0 + (port + recharge) / x0 * dt;
        assert_relative_eq!(state.coordinate(), expected_x, epsilon = 1e-15);
    }

    #[test]
    fn impedance_tank_freezes_setpoint_when_depleted() {
        let params = tank(10.0);
        let mut state = TankState::from_level(params.lower);
        let kd = Mat6::identity() * 500.0;
        // Violating direction: negative port power.
        let vd_star = Twist(Vec6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0));
        let ff_plus_fe = Wrench(Vec6::new(-5.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let (scale, sw) = impedance_tank_step(
            &mut state,
            &vd_star,
            &ff_plus_fe,
            &Wrench::zero(),
            &Twist::zero(),
            &kd,
            &params,
            1e-3,
        );
        assert_eq!(sw.gamma, 0.0);
        assert_eq!(sw.alpha, 0.0);
        assert_eq!(scale, 0.0);
        let frozen = integrate_setpoint(
            &Pose::identity(),
            &Pose::identity(),
            &Twist(vd_star.0 * scale),
            1e-3,
        );
        assert_eq!(frozen.position, Vec3::zeros());
    }

    #[test]
    fn impedance_tank_damping_recharge_alone() {
        let params = tank(10.0);
        let mut state = TankState::from_level(10.0);
        let kd = Mat6::identity() * 500.0;
        let dt = 1e-3;
        let vb = Twist(Vec6::new(0.2, 0.0, 0.0, 0.0, 0.0, 0.0));
        let x0 = state.coordinate();
        let (_, sw) = impedance_tank_step(
            &mut state,
            &Twist::zero(),
            &Wrench::zero(),
            &Wrench::zero(),
            &vb,
            &kd,
            &params,
            dt,
        );
        assert_eq!(sw.gamma, 0.0);
        let recharge = 500.0 * 0.2 * 0.2;
        assert_relative_eq!(state.coordinate(), x0 + recharge / x0 * dt, epsilon = 1e-15);
        assert_relative_eq!(state.level() - 10.0, recharge * dt, max_relative = 1e-3);
    }

    #[test]
    fn gic_zero_wrench_at_rest_at_goal_without_gravity() {
        let mut model = crate::testing::arm6();
        model.gravity = Vec3::zeros();
        let q = Vec6::from_row_slice(&TEST_Q);
        let op = operational_terms(&model, &JointState::at_rest(q)).unwrap();
        let g = crate::robot::forward_kinematics(&model, &q);
        let f = gic_wrench(&g, &g, &Twist::zero(), &Twist::zero(), &Twist::zero(), &op, &gains());
        assert_relative_eq!(f.0, Vec6::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn gic_term_isolation_static_setpoint() {
        let model = crate::testing::arm6();
        let q = Vec6::from_row_slice(&TEST_Q);
        let qdot = Vec6::new(0.1, -0.2, 0.15, 0.0, 0.1, -0.05);
        let state = JointState::new(q, qdot);
        let op = operational_terms(&model, &state).unwrap();
        let g = crate::robot::forward_kinematics(&model, &q);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let gd = Pose::new(g.rotation, g.position + Vec3::new(0.02, -0.01, 0.03));
        let _ = &mut rng;
        let vb = Twist(op.jb * qdot);
        let f = gic_wrench(&g, &gd, &vb, &Twist::zero(), &Twist::zero(), &op, &gains());
        let expected =
            op.gt.0 - elastic_wrench(&g, &gd, &gains().stiffness).0 - gains().kd() * vb.0;
        assert_relative_eq!(f.0, expected, epsilon = 1e-12);
    }

    #[test]
    fn gic_wrench_equivariant_under_left_transform() {
        let model = crate::testing::arm6();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let q = Vec6::from_row_slice(&TEST_Q);
        let qdot = Vec6::new(0.1, 0.2, -0.1, 0.3, -0.2, 0.1);
        let state = JointState::new(q, qdot);
        for _ in 0..5 {
            let h = crate::testing::random_pose(&mut rng);
            let moved = model.left_transformed(&h);
            let op0 = operational_terms(&model, &state).unwrap();
            let op1 = operational_terms(&moved, &state).unwrap();
            let g0 = crate::robot::forward_kinematics(&model, &q);
            let g1 = crate::robot::forward_kinematics(&moved, &q);
            let gd0 = Pose::new(g0.rotation, g0.position + Vec3::new(0.03, 0.01, -0.02));
            let gd1 = h.compose(&gd0);
            let vb = Twist(op0.jb * qdot);
            let vd = Twist(Vec6::new(0.05, 0.0, -0.02, 0.01, 0.0, 0.02));
            let vdd = Twist(Vec6::new(0.1, 0.05, 0.0, 0.0, -0.01, 0.0));
            let f0 = gic_wrench(&g0, &gd0, &vb, &vd, &vdd, &op0, &gains());
            let f1 = gic_wrench(&g1, &gd1, &vb, &vd, &vdd, &op1, &gains());
            assert_relative_eq!(f0.0, f1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn modified_gic_reduces_to_gic_at_unit_scale() {
        let model = crate::testing::arm6();
        let q = Vec6::from_row_slice(&TEST_Q);
        let state = JointState::new(q, Vec6::new(0.1, 0.0, -0.1, 0.2, 0.0, 0.1));
        let op = operational_terms(&model, &state).unwrap();
        let g = crate::robot::forward_kinematics(&model, &q);
        let gd = Pose::new(g.rotation, g.position + Vec3::new(0.01, 0.02, -0.01));
        let vb = Twist(op.jb * state.qdot);
        let vd = Twist(Vec6::new(0.02, -0.01, 0.0, 0.01, 0.0, -0.02));
        let vdd = Twist(Vec6::new(0.0, 0.05, -0.02, 0.0, 0.01, 0.0));
        let a = modified_gic(&g, &gd, &vb, &vd, &vdd, &op, &gains());
        let b = gic_wrench(&g, &gd, &vb, &vd, &vdd, &op, &gains());
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn modified_gic_pure_regulation_when_scale_zero() {
        let model = crate::testing::arm6();
        let q = Vec6::from_row_slice(&TEST_Q);
        let state = JointState::new(q, Vec6::new(0.1, -0.05, 0.2, 0.0, 0.1, 0.0));
        let op = operational_terms(&model, &state).unwrap();
        let g = crate::robot::forward_kinematics(&model, &q);
        let gd = Pose::new(g.rotation, g.position + Vec3::new(0.02, 0.0, 0.01));
        let vb = Twist(op.jb * state.qdot);
        let f = modified_gic(&g, &gd, &vb, &Twist::zero(), &Twist::zero(), &op, &gains());
        let expected =
            op.gt.0 - elastic_wrench(&g, &gd, &gains().stiffness).0 - gains().kd() * vb.0;
        assert_relative_eq!(f.0, expected, epsilon = 1e-12);
    }

    #[test]
    fn setpoint_frozen_without_velocity() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let gd = crate::testing::random_pose(&mut rng);
        let g = crate::testing::random_pose(&mut rng);
        let next = integrate_setpoint(&gd, &g, &Twist::zero(), 1e-3);
        assert_eq!(next.position, gd.position);
        assert_eq!(next.rotation.matrix(), gd.rotation.matrix());
    }

    #[test]
    fn setpoint_advances_along_reference_flow() {
        // Perfect tracking: the integrated setpoint follows the trajectory
        // to O(dt^2) per step.
        let traj = Trajectory::new(TrajectoryKind::Circle {
            center: Vec3::new(0.5, 0.0, 0.125),
            radius: 0.1,
            angular_rate: 1.0,
            rotation: crate::geometry::Rotation::new(Mat3::new(
                0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0,
            ))
            .unwrap(),
        })
        .unwrap();
        let dt = 1e-3;
        for t in [0.0, 0.5, 2.0] {
            let s = traj.sample(t);
            let g = s.pose;
            let vd_star = velocity_field_at(&s, &g, 5.0);
            let next = integrate_setpoint(&s.pose, &g, &vd_star, dt);
            let expected = traj.sample(t + dt).pose;
            assert!(
                (next.position - expected.position).norm() < 10.0 * dt * dt,
                "setpoint drift {:.3e}",
                (next.position - expected.position).norm()
            );
        }
    }

    #[test]
    fn setpoint_invariants_after_many_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let g = crate::testing::random_pose(&mut rng);
        let vd = Twist(Vec6::new(0.05, -0.02, 0.01, 0.3, 0.2, -0.4));
        let mut gd = crate::testing::random_pose(&mut rng);
        for _ in 0..1_000_000 {
            gd = integrate_setpoint(&gd, &g, &vd, 1e-3);
        }
        assert!(gd.rotation.orthonormality_drift() <= crate::geometry::ROTATION_TOL);
        assert!(gd.position.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn shaping_default_is_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let g = crate::testing::random_pose(&mut rng);
        let gd = crate::testing::random_pose(&mut rng);
        assert_eq!(shaping_rho(&g, &gd, None), 1.0);
    }

    #[test]
    fn shaping_inside_activation_region() {
        let cfg = ShapingConfig { psi0: 0.5, sigma: 0.2 };
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let g = crate::testing::random_pose(&mut rng);
        assert_eq!(shaping_rho(&g, &g, Some(&cfg)), 1.0);
    }

    #[test]
    fn shaping_one_sigma_past_activation() {
        // Psi = psi0 + sigma gives exp(-1).
        let sigma = 0.3;
        let gd = Pose::identity();
        // Pure translation: Psi = |p|^2 / 2.
        let psi_target: f64 = 0.1 + sigma;
        let g = Pose::new(
            crate::geometry::Rotation::identity(),
            Vec3::new((2.0 * psi_target).sqrt(), 0.0, 0.0),
        );
        let cfg = ShapingConfig { psi0: 0.1, sigma };
        assert_relative_eq!(shaping_rho(&g, &gd, Some(&cfg)), (-1.0f64).exp(), epsilon = 1e-12);
    }

    fn make_gufic(initial_reference: Pose, tanks_enabled: bool, zeta: f64) -> Gufic {
        Gufic::new(
            gains(),
            pid_gains(),
            tank(10.0),
            tank(10.0),
            zeta,
            press_field(),
            None,
            tanks_enabled,
            initial_reference,
        )
    }

    #[test]
    fn gufic_equals_gic_for_free_space_regulation() {
        // Static reference, no contact, no desired force: with charged tanks
        // the guarded law reduces exactly to impedance regulation.
        let model = crate::testing::arm6();
        let q0 = Vec6::from_row_slice(&TEST_Q);
        let start = crate::robot::forward_kinematics(&model, &q0);
        let target = Pose::new(start.rotation, start.position + Vec3::new(0.02, -0.015, 0.03));
        let traj = static_trajectory(target);
        // Isotropic stiffness so the impedance-only law converges in every
        // body direction within the test horizon.
        let iso = ImpedanceGains::new(
            StiffnessGains::diagonal(Vec3::repeat(2000.0), Vec3::repeat(2000.0)).unwrap(),
            Mat6::identity() * 500.0,
        )
        .unwrap();
        let mut gufic = Gufic::new(
            iso.clone(),
            pid_gains(),
            tank(10.0),
            tank(10.0),
            5.0,
            ForceFieldSpec { wrench: Wrench::zero(), frame: ForceFrame::Current },
            None,
            true,
            target,
        );
        let gic = GicController { gains: iso };

        let dt = 1e-3;
        let mut state_a = JointState::at_rest(q0);
        let mut state_b = state_a;
        for k in 0..2500 {
            let t = k as f64 * dt;
            for (state, torque) in [(&mut state_a, 0), (&mut state_b, 1)] {
                let terms = crate::robot::joint_space_terms(&model, state);
                let op = crate::robot::operational_terms_from(&model, state, &terms).unwrap();
                let g = crate::robot::forward_kinematics(&model, &state.q);
                let vb = Twist(op.jb * state.qdot);
                let out = if torque == 0 {
                    // Zero descent gain would be rejected by the public
                    // params type; regulation makes the descent term zero
                    // anyway because the field is evaluated with zeta but
                    // V_d* multiplies against a static reference only
                    // through gcev, which both laws share at zeta = 0.
                    gufic.step(t, dt, &traj, &g, &vb, &op, &Wrench::zero(), &Wrench::zero())
                } else {
                    gic.step(t, &traj, &g, &vb, &op)
                };
                let qddot = crate::robot::forward_dynamics_from(
                    &terms,
                    &op.jb,
                    state,
                    &out.torque,
                    &Wrench::zero(),
                );
                state.qdot += qddot * dt;
                state.q += state.qdot * dt;
            }
        }
        // Both regulate to the same target; after the transient they coincide.
        let ga = crate::robot::forward_kinematics(&model, &state_a.q);
        let gb = crate::robot::forward_kinematics(&model, &state_b.q);
        assert_relative_eq!(error_function(&ga, &target), 0.0, epsilon = 1e-6);
        assert_relative_eq!(error_function(&gb, &target), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn gufic_with_depleted_tanks_is_pure_regulation() {
        let model = crate::testing::arm6();
        let q = Vec6::from_row_slice(&TEST_Q);
        let state = JointState::new(q, Vec6::new(0.1, -0.1, 0.05, 0.0, 0.1, -0.05));
        let terms = crate::robot::joint_space_terms(&model, &state);
        let op = crate::robot::operational_terms_from(&model, &state, &terms).unwrap();
        let g = crate::robot::forward_kinematics(&model, &q);
        let vb = Twist(op.jb * state.qdot);
        let target = Pose::new(g.rotation, g.position + Vec3::new(0.0, 0.0, -0.05));
        let traj = static_trajectory(target);

        let mut gufic = Gufic::new(
            gains(),
            pid_gains(),
            tank(10.0),
            tank(10.0),
            5.0,
            press_field(),
            None,
            true,
            target,
        );
        // Drain both tanks to the floor.
        gufic.state.force_tank = TankState::from_level(TANK_FLOOR);
        gufic.state.impedance_tank = TankState::from_level(TANK_FLOOR);

        // Sensed force chosen so both gammas sit in the violating branch.
        let sensed = Wrench(Vec6::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let out = gufic.step(0.0, 1e-3, &traj, &g, &vb, &op, &sensed, &sensed);
        assert_eq!(out.tanks.force.alpha, 0.0);
        assert_eq!(out.tanks.impedance.alpha, 0.0);
        if out.tanks.force.gamma == 0.0 {
            assert_eq!(out.ff_prime.0, Vec6::zeros());
        }
        if out.tanks.impedance.gamma == 0.0 {
            assert_eq!(out.vd_star_prime.0, Vec6::zeros());
            let expected = op.gt.0
                - elastic_wrench(&g, &out.gd_prime, &gains().stiffness).0
                - gains().kd() * vb.0;
            assert_relative_eq!(out.total_wrench.0 - out.ff_prime.0, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn scaling_identity_preserves_direction() {
        let params = tank(10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        for _ in 0..50 {
            let level = 0.05 + rng.gen::<f64>() * 25.0;
            let mut state = TankState::from_level(level);
            let vb = Twist(Vec6::from_fn(|_, _| rng.gen::<f64>() - 0.5));
            let ff = Wrench(Vec6::from_fn(|_, _| (rng.gen::<f64>() - 0.5) * 20.0));
            let (ff_prime, sw) = force_tank_step(&mut state, &vb, &ff, &params, 1e-3);
            assert!((0.0..=1.0).contains(&sw.scale));
            assert_relative_eq!(ff_prime.0, ff.0 * sw.scale, epsilon = 1e-12);
        }
    }

    #[test]
    fn naive_matches_gufic_while_tanks_saturated_in_free_space() {
        let model = crate::testing::arm6();
        let q0 = Vec6::from_row_slice(&TEST_Q);
        let start = crate::robot::forward_kinematics(&model, &q0);
        let target = Pose::new(start.rotation, start.position + Vec3::new(0.0, 0.05, 0.02));
        let traj = static_trajectory(target);

        let mut guarded = make_gufic(target, true, 5.0);
        let mut naive = make_gufic(target, false, 5.0);

        let dt = 1e-3;
        let mut sa = JointState::at_rest(q0);
        let mut sb = sa;
        for k in 0..500 {
            let t = k as f64 * dt;
            let mut torques = [Vec6::zeros(); 2];
            for (idx, state) in [(0, &mut sa), (1, &mut sb)] {
                let terms = crate::robot::joint_space_terms(&model, state);
                let op = crate::robot::operational_terms_from(&model, state, &terms).unwrap();
                let g = crate::robot::forward_kinematics(&model, &state.q);
                let vb = Twist(op.jb * state.qdot);
                let ctrl = if idx == 0 { &mut guarded } else { &mut naive };
                let out = ctrl.step(t, dt, &traj, &g, &vb, &op, &Wrench::zero(), &Wrench::zero());
                // Tanks stay saturated: scales pinned at one in both runs.
                assert_eq!(out.tanks.force.scale, 1.0);
                assert_eq!(out.tanks.impedance.scale, 1.0);
                torques[idx] = out.torque;
                let qddot = crate::robot::forward_dynamics_from(
                    &terms,
                    &op.jb,
                    state,
                    &out.torque,
                    &Wrench::zero(),
                );
                state.qdot += qddot * dt;
                state.q += state.qdot * dt;
            }
            assert_relative_eq!(torques[0], torques[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn naive_with_zero_gains_is_gravity_compensation_plus_feedforward() {
        let model = crate::testing::arm6();
        let q = Vec6::from_row_slice(&TEST_Q);
        let state = JointState::at_rest(q);
        let op = operational_terms(&model, &state).unwrap();
        let g = crate::robot::forward_kinematics(&model, &q);
        let traj = static_trajectory(g);

        let zero_stiffness =
            StiffnessGains::diagonal(Vec3::repeat(1e-12), Vec3::repeat(1e-12)).unwrap();
        let tiny_kd = Mat6::identity() * 1e-12;
        let mut naive = Gufic::new(
            ImpedanceGains::new(zero_stiffness, tiny_kd).unwrap(),
            ForcePidGains::new(0.0, 0.0, 0.0, 50.0).unwrap(),
            tank(10.0),
            tank(10.0),
            5.0,
            press_field(),
            None,
            false,
            g,
        );
        let out = naive.step(0.0, 1e-3, &traj, &g, &Twist::zero(), &op, &Wrench::zero(), &Wrench::zero());
        // F = G_tilde + F_d; T = J^T F.
        let expected = op.jb.transpose() * (op.gt.0 + press_field().wrench.0);
        assert_relative_eq!(out.torque, expected, epsilon = 1e-9);
    }

    #[test]
    fn parameter_validation() {
        assert!(TankParams::new(10.0, 0.0, 20.0, 0.5).is_err());
        assert!(TankParams::new(10.0, 0.1, 0.4, 0.5).is_err());
        assert!(TankParams::new(30.0, 0.1, 20.0, 0.5).is_err());
        assert!(ForcePidGains::new(-1.0, 0.0, 0.0, 50.0).is_err());
        let bad_kd = Mat6::identity() * -1.0;
        assert!(ImpedanceGains::new(
            StiffnessGains::diagonal(Vec3::repeat(1.0), Vec3::repeat(1.0)).unwrap(),
            bad_kd
        )
        .is_err());
    }
}
