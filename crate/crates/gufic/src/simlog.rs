//! Per-step simulation log: fixed column schema, versioned CSV encoding.
//!
//! Floats are printed with 17 significant digits so the CSV round-trips
//! bit-exactly; two runs of the same scenario produce byte-identical files.

use crate::geometry::{Pose, Twist, Vec3, Vec6, Wrench};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// First line of every log file; the audit rejects anything else.
pub const SCHEMA_VERSION_LINE: &str = "# gufic-log v1";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unknown log schema version: expected `{SCHEMA_VERSION_LINE}`, found `{found}`")]
    UnknownVersion { found: String },
    #[error("log is missing channel `{column}`")]
    MissingChannel { column: String },
    #[error("unexpected column `{found}` where `{expected}` should be")]
    SchemaMismatch { expected: String, found: String },
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct LogRow {
    pub t: f64,
    pub q: Vec6,
    pub qdot: Vec6,
    pub g: Pose,
    pub gd_bar: Pose,
    pub gd_prime: Pose,
    pub vb: Twist,
    pub vd_star: Twist,
    pub vd_star_prime: Twist,
    pub fe_true: Wrench,
    pub fe_sensed: Wrench,
    pub fd: Wrench,
    pub ff: Wrench,
    pub ff_prime: Wrench,
    pub fi_prime: Wrench,
    pub tau: Vec6,
    pub gamma_f: f64,
    pub beta_f: f64,
    pub alpha_f: f64,
    pub gamma_i: f64,
    pub beta_i: f64,
    pub alpha_i: f64,
    pub tank_force: f64,
    pub tank_impedance: f64,
    pub psi: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub storage_total: f64,
    pub supply_power: f64,
    pub supply_integral: f64,
    pub term_force_overflow: f64,
    pub term_damping_cap: f64,
    pub term_port_cap: f64,
    pub rho: f64,
}

const SIX_SUFFIX_TWIST: [&str; 6] = ["vx", "vy", "vz", "wx", "wy", "wz"];
const SIX_SUFFIX_WRENCH: [&str; 6] = ["fx", "fy", "fz", "tx", "ty", "tz"];
const POSE_SUFFIX: [&str; 12] =
    ["r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "px", "py", "pz"];
const SCALAR_COLUMNS: [&str; 14] = [
    "gamma_f",
    "beta_f",
    "alpha_f",
    "gamma_i",
    "beta_i",
    "alpha_i",
    "tank_force",
    "tank_impedance",
    "psi",
    "kinetic",
    "potential",
    "storage_total",
    "supply_power",
    "supply_integral",
];
const TAIL_COLUMNS: [&str; 4] =
    ["term_force_overflow", "term_damping_cap", "term_port_cap", "rho"];

/// Column names in file order.
pub fn columns() -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for i in 0..6 {
        cols.push(format!("q{i}"));
    }
    for i in 0..6 {
        cols.push(format!("qd{i}"));
    }
    for (prefix, _) in POSE_FIELDS {
        for s in POSE_SUFFIX {
            cols.push(format!("{prefix}_{s}"));
        }
    }
    for (prefix, style) in VEC6_FIELDS {
        let suffix = match style {
            Vec6Style::Twist => SIX_SUFFIX_TWIST,
            Vec6Style::Wrench => SIX_SUFFIX_WRENCH,
            Vec6Style::Joint => ["0", "1", "2", "3", "4", "5"],
        };
        for s in suffix {
            cols.push(format!("{prefix}_{s}"));
        }
    }
    for c in SCALAR_COLUMNS {
        cols.push(c.to_string());
    }
    for c in TAIL_COLUMNS {
        cols.push(c.to_string());
    }
    cols
}

#[derive(Clone, Copy)]
enum Vec6Style {
    Twist,
    Wrench,
    Joint,
}

const POSE_FIELDS: [(&str, ()); 3] = [("g", ()), ("gdbar", ()), ("gdp", ())];
const VEC6_FIELDS: [(&str, Vec6Style); 10] = [
    ("vb", Vec6Style::Twist),
    ("vdstar", Vec6Style::Twist),
    ("vdstarp", Vec6Style::Twist),
    ("fe", Vec6Style::Wrench),
    ("fes", Vec6Style::Wrench),
    ("fd", Vec6Style::Wrench),
    ("ff", Vec6Style::Wrench),
    ("ffp", Vec6Style::Wrench),
    ("fip", Vec6Style::Wrench),
    ("tau", Vec6Style::Joint),
];

fn push_pose(values: &mut Vec<f64>, pose: &Pose) {
    let r = pose.rotation_matrix();
    for i in 0..3 {
        for j in 0..3 {
            values.push(r[(i, j)]);
        }
    }
    for i in 0..3 {
        values.push(pose.position[i]);
    }
}

fn pose_from(values: &[f64]) -> Pose {
    let r = crate::geometry::Mat3::from_row_slice(&values[0..9]);
    let p = Vec3::new(values[9], values[10], values[11]);
    Pose::new(crate::geometry::Rotation::new_renormalized(r), p)
}

impl LogRow {
    pub fn to_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(columns().len());
        v.push(self.t);
        v.extend(self.q.iter());
        v.extend(self.qdot.iter());
        push_pose(&mut v, &self.g);
        push_pose(&mut v, &self.gd_bar);
        push_pose(&mut v, &self.gd_prime);
        v.extend(self.vb.0.iter());
        v.extend(self.vd_star.0.iter());
        v.extend(self.vd_star_prime.0.iter());
        v.extend(self.fe_true.0.iter());
        v.extend(self.fe_sensed.0.iter());
        v.extend(self.fd.0.iter());
        v.extend(self.ff.0.iter());
        v.extend(self.ff_prime.0.iter());
        v.extend(self.fi_prime.0.iter());
        v.extend(self.tau.iter());
        v.extend([
            self.gamma_f,
            self.beta_f,
            self.alpha_f,
            self.gamma_i,
            self.beta_i,
            self.alpha_i,
            self.tank_force,
            self.tank_impedance,
            self.psi,
            self.kinetic,
            self.potential,
            self.storage_total,
            self.supply_power,
            self.supply_integral,
            self.term_force_overflow,
            self.term_damping_cap,
            self.term_port_cap,
            self.rho,
        ]);
        v
    }

    pub fn from_values(values: &[f64]) -> Self {
        let mut k = 0usize;
        let mut take = |n: usize| {
            let s = &values[k..k + n];
            k += n;
            s.to_vec()
        };
        let t = take(1)[0];
        let q = Vec6::from_row_slice(&take(6));
        let qdot = Vec6::from_row_slice(&take(6));
        let g = pose_from(&take(12));
        let gd_bar = pose_from(&take(12));
        let gd_prime = pose_from(&take(12));
        let vb = Twist(Vec6::from_row_slice(&take(6)));
        let vd_star = Twist(Vec6::from_row_slice(&take(6)));
        let vd_star_prime = Twist(Vec6::from_row_slice(&take(6)));
        let fe_true = Wrench(Vec6::from_row_slice(&take(6)));
        let fe_sensed = Wrench(Vec6::from_row_slice(&take(6)));
        let fd = Wrench(Vec6::from_row_slice(&take(6)));
        let ff = Wrench(Vec6::from_row_slice(&take(6)));
        let ff_prime = Wrench(Vec6::from_row_slice(&take(6)));
        let fi_prime = Wrench(Vec6::from_row_slice(&take(6)));
        let tau = Vec6::from_row_slice(&take(6));
        let s = take(18);
        LogRow {
            t,
            q,
            qdot,
            g,
            gd_bar,
            gd_prime,
            vb,
            vd_star,
            vd_star_prime,
            fe_true,
            fe_sensed,
            fd,
            ff,
            ff_prime,
            fi_prime,
            tau,
            gamma_f: s[0],
            beta_f: s[1],
            alpha_f: s[2],
            gamma_i: s[3],
            beta_i: s[4],
            alpha_i: s[5],
            tank_force: s[6],
            tank_impedance: s[7],
            psi: s[8],
            kinetic: s[9],
            potential: s[10],
            storage_total: s[11],
            supply_power: s[12],
            supply_integral: s[13],
            term_force_overflow: s[14],
            term_damping_cap: s[15],
            term_port_cap: s[16],
            rho: s[17],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimLog {
    pub rows: Vec<LogRow>,
}

impl SimLog {
    pub fn to_csv_string(&self) -> String {
        let cols = columns();
        let mut out = String::with_capacity(64 + self.rows.len() * cols.len() * 26);
        out.push_str(SCHEMA_VERSION_LINE);
        out.push('\n');
        out.push_str(&cols.join(","));
        out.push('\n');
        for row in &self.rows {
            let values = row.to_values();
            let mut first = true;
            for v in values {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&format!("{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), LogError> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|source| LogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(self.to_csv_string().as_bytes())
            .map_err(|source| LogError::Io { path: path.display().to_string(), source })
    }

    pub fn from_csv_str(text: &str) -> Result<Self, LogError> {
        let mut lines = text.lines();
        let version = lines.next().unwrap_or("").trim();
        if version != SCHEMA_VERSION_LINE {
            return Err(LogError::UnknownVersion { found: version.to_string() });
        }
        let header = lines.next().unwrap_or("");
        let expected = columns();
        let found: Vec<&str> = header.split(',').collect();
        for (i, exp) in expected.iter().enumerate() {
            match found.get(i) {
                None => return Err(LogError::MissingChannel { column: exp.clone() }),
                Some(f) if *f != exp => {
                    return Err(LogError::SchemaMismatch {
                        expected: exp.clone(),
                        found: f.to_string(),
                    })
                }
                _ => {}
            }
        }
        if found.len() != expected.len() {
            return Err(LogError::SchemaMismatch {
                expected: "end of header".to_string(),
                found: found[expected.len()].to_string(),
            });
        }
        let mut rows = Vec::new();
        for (idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut values = Vec::with_capacity(expected.len());
            for (ci, cell) in line.split(',').enumerate() {
                let v: f64 = cell.trim().parse().map_err(|e| LogError::BadRow {
                    row: idx,
                    message: format!("column {}: {e}", expected.get(ci).map(String::as_str).unwrap_or("?")),
                })?;
                values.push(v);
            }
            if values.len() != expected.len() {
                return Err(LogError::BadRow {
                    row: idx,
                    message: format!("expected {} columns, found {}", expected.len(), values.len()),
                });
            }
            rows.push(LogRow::from_values(&values));
        }
        Ok(SimLog { rows })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_str(&text)
    }
}
