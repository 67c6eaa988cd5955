//! Closed-loop simulation: joint dynamics under penalty contact, the
//! selected controller, and the filtered force/torque sensor, all stepped
//! at one shared rate with semi-implicit Euler integration.
//!
//! Runs are deterministic: no randomness, fixed iteration order, and a
//! fixed-schema log, so repeated runs of one scenario produce byte-identical
//! CSV files.

use crate::audit::{potential_energy, total_storage};
use crate::config::{ControllerKind, Scenario};
use crate::control::{ControlOutput, Gufic, GicController};
use crate::environment::{contact_wrench, FtSensor};
use crate::geometry::{error_function, power, Twist, Wrench};
use crate::robot::{
    forward_dynamics_from, forward_kinematics, inverse_kinematics, joint_space_terms,
    operational_terms_from, JointState, RobotError,
};
use crate::simlog::{LogRow, SimLog};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("inverse kinematics failed for the start pose: {source}")]
    StartPose { source: RobotError },
    #[error("near-singular configuration at step {step} (t = {time:.3} s): {source}")]
    NearSingular { step: usize, time: f64, source: RobotError },
    #[error(transparent)]
    Environment(#[from] crate::environment::EnvironmentError),
}

enum ControllerInstance {
    Guarded(Box<Gufic>),
    Impedance(GicController),
}

impl ControllerInstance {
    fn kd(&self) -> &crate::geometry::Mat6 {
        match self {
            ControllerInstance::Guarded(g) => g.gains.kd(),
            ControllerInstance::Impedance(g) => g.gains.kd(),
        }
    }

    fn stiffness(&self) -> &crate::geometry::StiffnessGains {
        match self {
            ControllerInstance::Guarded(g) => &g.gains.stiffness,
            ControllerInstance::Impedance(g) => &g.gains.stiffness,
        }
    }
}

/// Start pose of a scenario: the reference start offset outward along the
/// surface normal by the configured clearance.
pub fn start_pose(scenario: &Scenario) -> crate::geometry::Pose {
    let reference = scenario.trajectory.sample(0.0).pose;
    match &scenario.surface {
        None => reference,
        Some(surface) => {
            let (_, outward) = surface.penetration(&reference.position);
            crate::geometry::Pose::new(
                reference.rotation,
                reference.position + outward * scenario.start_clearance,
            )
        }
    }
}

/// Joint configuration the run starts from.
pub fn initial_configuration(scenario: &Scenario) -> Result<crate::geometry::Vec6, SimError> {
    match scenario.initial_q {
        Some(q) => Ok(q),
        None => inverse_kinematics(&scenario.robot, &start_pose(scenario), &scenario.ik_seed)
            .map_err(|source| SimError::StartPose { source }),
    }
}

/// Runs the scenario to completion and returns the per-step log.
pub fn simulate(scenario: &Scenario) -> Result<SimLog, SimError> {
    let model = &scenario.robot;
    let dt = scenario.timestep;
    let steps = (scenario.duration / dt).round() as usize;

    let q0 = initial_configuration(scenario)?;
    let mut state = JointState::at_rest(q0);
    let initial_reference = scenario.trajectory.sample(0.0).pose;

    let mut controller = match scenario.controller {
        ControllerKind::Gufic | ControllerKind::Naive => {
            ControllerInstance::Guarded(Box::new(Gufic::new(
                scenario.gains.clone(),
                scenario.pid_gains,
                scenario.force_tank,
                scenario.impedance_tank,
                scenario.zeta,
                scenario.force_field.clone(),
                scenario.shaping,
                scenario.controller == ControllerKind::Gufic,
                initial_reference,
            )))
        }
        ControllerKind::Gic => {
            ControllerInstance::Impedance(GicController { gains: scenario.gic_gains.clone() })
        }
    };

    let mut sensor = FtSensor::new(scenario.ft_cutoff_hz, dt)?;
    let mut rows = Vec::with_capacity(steps);
    let mut supply_integral = 0.0;
    let mut previous_power: Option<f64> = None;

    log::info!(
        "simulating `{}`: controller {}, {} steps at {} ms",
        scenario.name,
        scenario.controller,
        steps,
        dt * 1e3
    );

    for step in 0..steps {
        let t = step as f64 * dt;
        let terms = joint_space_terms(model, &state);
        let op = operational_terms_from(model, &state, &terms)
            .map_err(|source| SimError::NearSingular { step, time: t, source })?;
        let g = forward_kinematics(model, &state.q);
        let vb = Twist(op.jb * state.qdot);

        let fe_true = match &scenario.surface {
            Some(surface) => contact_wrench(surface, &g, &vb, &scenario.contact),
            None => Wrench::zero(),
        };
        let fe_sensed = sensor.step(&fe_true);

        let out: ControlOutput = match &mut controller {
            ControllerInstance::Guarded(gufic) => {
                gufic.step(t, dt, &scenario.trajectory, &g, &vb, &op, &fe_sensed, &fe_true)
            }
            ControllerInstance::Impedance(gic) => {
                gic.step(t, &scenario.trajectory, &g, &vb, &op)
            }
        };

        let supply_power = power(&vb, &fe_true);
        if let Some(prev) = previous_power {
            supply_integral += 0.5 * dt * (prev + supply_power);
        }
        previous_power = Some(supply_power);

        let kinetic = 0.5 * (out.ev_prime.0.transpose() * op.mt * out.ev_prime.0)[0];
        let potential = potential_energy(&g, &out.gd_prime, controller.stiffness());
        let (tank_f, tank_i) = match &controller {
            ControllerInstance::Guarded(_) => {
                (out.tanks.force_level, out.tanks.impedance_level)
            }
            ControllerInstance::Impedance(_) => (0.0, 0.0),
        };
        let storage = total_storage(kinetic, potential, tank_f, tank_i);

        let damping_power =
            (out.ev_prime.0.transpose() * controller.kd() * out.ev_prime.0)[0];
        let term_force_overflow =
            out.tanks.force.gamma * (1.0 - out.tanks.force.beta) * power(&vb, &out.ff);
        let term_damping_cap = (out.tanks.impedance.beta - 1.0) * damping_power;
        let term_port_cap = out.tanks.impedance.gamma
            * (out.tanks.impedance.beta - 1.0)
            * power(&out.vd_star, &Wrench(out.ff_prime.0 + fe_true.0));

        rows.push(LogRow {
            t,
            q: state.q,
            qdot: state.qdot,
            g,
            gd_bar: out.reference,
            gd_prime: out.gd_prime,
            vb,
            vd_star: out.vd_star,
            vd_star_prime: out.vd_star_prime,
            fe_true,
            fe_sensed,
            fd: out.fd,
            ff: out.ff,
            ff_prime: out.ff_prime,
            fi_prime: out.fi_prime,
            tau: out.torque,
            gamma_f: out.tanks.force.gamma,
            beta_f: out.tanks.force.beta,
            alpha_f: out.tanks.force.alpha,
            gamma_i: out.tanks.impedance.gamma,
            beta_i: out.tanks.impedance.beta,
            alpha_i: out.tanks.impedance.alpha,
            tank_force: tank_f,
            tank_impedance: tank_i,
            psi: error_function(&g, &out.gd_prime),
            kinetic,
            potential,
            storage_total: storage,
            supply_power,
            supply_integral,
            term_force_overflow,
            term_damping_cap,
            term_port_cap,
            rho: out.rho,
        });

        let qddot = forward_dynamics_from(&terms, &op.jb, &state, &out.torque, &fe_true);
        state.qdot += qddot * dt;
        state.q += state.qdot * dt;
    }

    Ok(SimLog { rows })
}

/// Runs the scenario twice, as the guarded controller and as the impedance
/// baseline, concurrently.
pub fn compare(scenario: &Scenario) -> Result<(SimLog, SimLog), SimError> {
    let gufic_scenario = scenario.clone().with_controller(ControllerKind::Gufic);
    let gic_scenario = scenario.clone().with_controller(ControllerKind::Gic);
    std::thread::scope(|scope| {
        let a = scope.spawn(move || simulate(&gufic_scenario));
        let b = scope.spawn(move || simulate(&gic_scenario));
        let log_a = a.join().expect("gufic run panicked")?;
        let log_b = b.join().expect("gic run panicked")?;
        Ok((log_a, log_b))
    })
}
