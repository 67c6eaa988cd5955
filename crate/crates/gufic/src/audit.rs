//! Storage functions and the numerical passivity certificate.
//!
//! The closed loop is passive for the channel `(V^b, F_e)` when the total
//! storage `S_tot = 1/2 e_V'^T Mt e_V' + P(g, g_d') + T_f + T_i` never
//! grows faster than the supplied power. The audit checks the integrated
//! form
//!
//! ```text
//! S_tot(t_k) - S_tot(0) <= int_0^{t_k} (V^b)^T F_e dt + tol
//! ```
//!
//! at every logged step, with trapezoidal quadrature on the supply. The
//! integrated form is the same statement as the rate inequality but does
//! not amplify contact-force noise by differencing the storage at 1 kHz.
//!
//! The primary audit consumes the true environment wrench; a secondary
//! margin using the filtered sensor signal is reported for comparison.

use crate::geometry::{power, Pose, StiffnessGains};
use crate::simlog::SimLog;
use std::path::Path;
use thiserror::Error;

/// Default slack absorbing quadrature and explicit-Euler bookkeeping error
/// over a 20 s run.
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("cannot audit an empty log")]
    EmptyLog,
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Error potential of the impedance controller,
/// `P = tr(Kr (I - Rd^T R)) + 1/2 (p - pd)^T Rd Kp Rd^T (p - pd)`.
pub fn potential_energy(g: &Pose, gd: &Pose, k: &StiffnessGains) -> f64 {
    let r = g.rotation_matrix();
    let rd = gd.rotation_matrix();
    let rotational = (k.kr() * (crate::geometry::Mat3::identity() - rd.transpose() * r)).trace();
    let dp = rd.transpose() * (g.position - gd.position);
    rotational + 0.5 * (dp.transpose() * k.kp() * dp)[0]
}

/// `S_tot = S + T_i + T_f`.
pub fn total_storage(kinetic: f64, potential: f64, tank_force: f64, tank_impedance: f64) -> f64 {
    kinetic + potential + tank_force + tank_impedance
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub passed: bool,
    pub tolerance: f64,
    /// Maximum of `S_tot(t) - S_tot(0) - int supply` over the run (J);
    /// passivity holds while this stays at or below the tolerance.
    pub worst_margin: f64,
    pub worst_margin_time: f64,
    pub first_violation_time: Option<f64>,
    pub steps: usize,
    /// Same margin computed against the filtered sensor wrench.
    pub sensed_worst_margin: f64,
    /// Maxima of the three guarded storage-rate terms; each must be
    /// non-positive up to round-off for the tank logic to be sound.
    pub max_term_force_overflow: f64,
    pub max_term_damping_cap: f64,
    pub max_term_port_cap: f64,
}

impl AuditReport {
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "passivity audit: {} ({} steps, tolerance {:.3e} J)\n",
            if self.passed { "PASS" } else { "FAIL" },
            self.steps,
            self.tolerance
        ));
        out.push_str(&format!(
            "worst margin S_tot - S_tot(0) - supply: {:.6e} J at t = {:.3} s\n",
            self.worst_margin, self.worst_margin_time
        ));
        match self.first_violation_time {
            Some(t) => out.push_str(&format!("first violation at t = {t:.3} s\n")),
            None => out.push_str("no violation\n"),
        }
        out.push_str(&format!(
            "secondary margin using filtered sensor wrench: {:.6e} J\n",
            self.sensed_worst_margin
        ));
        out.push_str(&format!(
            "guarded rate terms max (J/s): force-overflow {:.3e}, damping-cap {:.3e}, port-cap {:.3e}\n",
            self.max_term_force_overflow, self.max_term_damping_cap, self.max_term_port_cap
        ));
        out
    }
}

/// Checks the integrated passivity inequality over a finished run.
pub fn passivity_audit(log: &SimLog, tolerance: f64) -> Result<AuditReport, AuditError> {
    if log.rows.is_empty() {
        return Err(AuditError::EmptyLog);
    }
    let s0 = log.rows[0].storage_total;
    let mut supply = 0.0;
    let mut supply_sensed = 0.0;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_time = 0.0;
    let mut worst_sensed = f64::NEG_INFINITY;
    let mut first_violation = None;
    let mut max_t1 = f64::NEG_INFINITY;
    let mut max_t2 = f64::NEG_INFINITY;
    let mut max_t3 = f64::NEG_INFINITY;

    for (k, row) in log.rows.iter().enumerate() {
        if k > 0 {
            let prev = &log.rows[k - 1];
            let dt = row.t - prev.t;
            supply += 0.5 * dt * (row.supply_power + prev.supply_power);
            let sensed_now = power(&row.vb, &row.fe_sensed);
            let sensed_prev = power(&prev.vb, &prev.fe_sensed);
            supply_sensed += 0.5 * dt * (sensed_now + sensed_prev);
        }
        let margin = row.storage_total - s0 - supply;
        if margin > worst {
            worst = margin;
            worst_time = row.t;
        }
        if margin > tolerance && first_violation.is_none() {
            first_violation = Some(row.t);
        }
        let sensed_margin = row.storage_total - s0 - supply_sensed;
        worst_sensed = worst_sensed.max(sensed_margin);
        max_t1 = max_t1.max(row.term_force_overflow);
        max_t2 = max_t2.max(row.term_damping_cap);
        max_t3 = max_t3.max(row.term_port_cap);
    }

    Ok(AuditReport {
        passed: first_violation.is_none(),
        tolerance,
        worst_margin: worst,
        worst_margin_time: worst_time,
        first_violation_time: first_violation,
        steps: log.rows.len(),
        sensed_worst_margin: worst_sensed,
        max_term_force_overflow: max_t1,
        max_term_damping_cap: max_t2,
        max_term_port_cap: max_t3,
    })
}

/// Writes the plain-text report.
pub fn write_report(report: &AuditReport, path: impl AsRef<Path>) -> Result<(), AuditError> {
    let path = path.as_ref();
    std::fs::write(path, report.summary())
        .map_err(|source| AuditError::Io { path: path.display().to_string(), source })
}

/// Per-step margin trace: `t, storage_delta, supply_integral, margin`.
pub fn write_margins_csv(log: &SimLog, path: impl AsRef<Path>) -> Result<(), AuditError> {
    let path = path.as_ref();
    let mut out = String::from("t,storage_delta,supply_integral,margin\n");
    if let Some(first) = log.rows.first() {
        let s0 = first.storage_total;
        let mut supply = 0.0;
        for (k, row) in log.rows.iter().enumerate() {
            if k > 0 {
                let prev = &log.rows[k - 1];
                supply += 0.5 * (row.t - prev.t) * (row.supply_power + prev.supply_power);
            }
            let delta = row.storage_total - s0;
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                row.t,
                delta,
                supply,
                delta - supply
            ));
        }
    }
    std::fs::write(path, out)
        .map_err(|source| AuditError::Io { path: path.display().to_string(), source })
}
