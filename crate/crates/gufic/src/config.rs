//! Scenario configuration: JSON schema, validation, and resolution into the
//! runtime types. The schema is documented in `docs/schema.md`.

use crate::control::{ForcePidGains, ImpedanceGains, ShapingConfig, TankParams};
use crate::environment::{ContactParams, SurfaceModel};
use crate::fields::{ForceFieldSpec, ForceFrame, Trajectory, TrajectoryKind, Waypoint};
use crate::geometry::{Mat3, Mat6, Pose, Rotation, StiffnessGains, Vec3, Vec6, Wrench};
use crate::robot::RobotDescription;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("failed to parse {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Robot(#[from] crate::robot::RobotError),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Gufic,
    Gic,
    Naive,
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControllerKind::Gufic => write!(f, "gufic"),
            ControllerKind::Gic => write!(f, "gic"),
            ControllerKind::Naive => write!(f, "naive"),
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gufic" => Ok(ControllerKind::Gufic),
            "gic" => Ok(ControllerKind::Gic),
            "naive" => Ok(ControllerKind::Naive),
            other => Err(format!("unknown controller `{other}` (expected gufic, gic, or naive)")),
        }
    }
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    robot_model: String,
    controller: ControllerKind,
    duration: f64,
    #[serde(default = "default_timestep")]
    timestep: f64,
    #[serde(default)]
    output_dir: Option<String>,
    #[serde(default = "default_clearance")]
    start_clearance: f64,
    #[serde(default)]
    initial_q: Option<[f64; 6]>,
    #[serde(default)]
    ik_seed: Option<[f64; 6]>,
    trajectory: TrajectoryFile,
    #[serde(default)]
    surface: Option<SurfaceFile>,
    #[serde(default)]
    contact: Option<ContactParams>,
    force_field: ForceFieldFile,
    gains: GainsFile,
    #[serde(default)]
    gic_stiffness: Option<StiffnessFile>,
    velocity_field: VelocityFieldFile,
    tanks: TanksFile,
    #[serde(default)]
    shaping: Option<ShapingFile>,
    #[serde(default = "default_ft_filter")]
    ft_filter: FtFilterFile,
}

fn default_timestep() -> f64 {
    1e-3
}

fn default_clearance() -> f64 {
    0.05
}

fn default_ft_filter() -> FtFilterFile {
    FtFilterFile { cutoff_hz: 5.0 }
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum TrajectoryFile {
    Circle {
        center: [f64; 3],
        radius: f64,
        angular_rate: f64,
        rotation: [[f64; 3]; 3],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        theta0: f64,
        theta_rate: f64,
        base_rotation: [[f64; 3]; 3],
    },
    Waypoints {
        samples: Vec<WaypointFile>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WaypointFile {
    time: f64,
    position: [f64; 3],
    rotation: [[f64; 3]; 3],
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SurfaceFile {
    Plane { center: [f64; 3], normal: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ForceFieldFile {
    wrench: [f64; 6],
    #[serde(default = "default_frame")]
    frame: String,
}

fn default_frame() -> String {
    "current".to_string()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StiffnessFile {
    kp: [f64; 3],
    kr: [f64; 3],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DampingFile {
    Scalar(f64),
    Diagonal([f64; 6]),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ForcePidFile {
    kp: f64,
    ki: f64,
    kd: f64,
    #[serde(default = "default_integral_limit")]
    integral_limit: f64,
}

fn default_integral_limit() -> f64 {
    50.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GainsFile {
    stiffness: StiffnessFile,
    damping: DampingFile,
    force_pid: ForcePidFile,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VelocityFieldFile {
    zeta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TankFile {
    initial: f64,
    lower: f64,
    upper: f64,
    margin: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TanksFile {
    force: TankFile,
    impedance: TankFile,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapingFile {
    psi0: f64,
    sigma: f64,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct FtFilterFile {
    cutoff_hz: f64,
}

// ---------------------------------------------------------------------------
// Resolved scenario
// ---------------------------------------------------------------------------

/// A fully validated scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub robot: RobotDescription,
    pub controller: ControllerKind,
    pub duration: f64,
    pub timestep: f64,
    pub output_dir: Option<PathBuf>,
    pub start_clearance: f64,
    pub initial_q: Option<Vec6>,
    pub ik_seed: Vec6,
    pub trajectory: Trajectory,
    pub surface: Option<SurfaceModel>,
    pub contact: ContactParams,
    pub force_field: ForceFieldSpec,
    pub gains: ImpedanceGains,
    pub gic_gains: ImpedanceGains,
    pub pid_gains: ForcePidGains,
    pub zeta: f64,
    pub force_tank: TankParams,
    pub impedance_tank: TankParams,
    pub shaping: Option<ShapingConfig>,
    pub ft_cutoff_hz: f64,
}

fn rotation_from(field: &str, rows: &[[f64; 3]; 3]) -> Result<Rotation, ConfigError> {
    Rotation::new(Mat3::from_row_slice(&rows.concat()))
        .map_err(|e| invalid(field, format!("{e}")))
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: ScenarioFile =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".to_string());
        Self::resolve(file, base, name)
    }

    fn resolve(file: ScenarioFile, base: &Path, name: String) -> Result<Self, ConfigError> {
        if file.timestep <= 0.0 {
            return Err(invalid("timestep", "must be > 0"));
        }
        if file.duration < 0.0 {
            return Err(invalid("duration", "must be >= 0"));
        }
        let model_path = base.join(&file.robot_model);
        if !model_path.exists() {
            return Err(invalid(
                "robot_model",
                format!("file not found: {}", model_path.display()),
            ));
        }
        let robot = RobotDescription::load(&model_path)?;

        let trajectory = match &file.trajectory {
            TrajectoryFile::Circle { center, radius, angular_rate, rotation } => {
                Trajectory::new(TrajectoryKind::Circle {
                    center: Vec3::from_row_slice(center),
                    radius: *radius,
                    angular_rate: *angular_rate,
                    rotation: rotation_from("trajectory.rotation", rotation)?,
                })
            }
            TrajectoryFile::Sphere { center, radius, theta0, theta_rate, base_rotation } => {
                Trajectory::new(TrajectoryKind::SphereArc {
                    center: Vec3::from_row_slice(center),
                    radius: *radius,
                    theta0: *theta0,
                    theta_rate: *theta_rate,
                    base_rotation: rotation_from("trajectory.base_rotation", base_rotation)?,
                })
            }
            TrajectoryFile::Waypoints { samples } => {
                let mut points = Vec::with_capacity(samples.len());
                for (i, w) in samples.iter().enumerate() {
                    points.push(Waypoint {
                        time: w.time,
                        pose: Pose::new(
                            rotation_from(
                                &format!("trajectory.samples[{i}].rotation"),
                                &w.rotation,
                            )?,
                            Vec3::from_row_slice(&w.position),
                        ),
                    });
                }
                Trajectory::new(TrajectoryKind::Waypoints(points))
            }
        }
        .map_err(|e| invalid("trajectory", format!("{e}")))?;

        let surface = match &file.surface {
            None => None,
            Some(SurfaceFile::Plane { center, normal }) => Some(
                SurfaceModel::plane(Vec3::from_row_slice(center), Vec3::from_row_slice(normal))
                    .map_err(|e| invalid("surface.normal", format!("{e}")))?,
            ),
            Some(SurfaceFile::Sphere { center, radius }) => Some(
                SurfaceModel::sphere(Vec3::from_row_slice(center), *radius)
                    .map_err(|e| invalid("surface.radius", format!("{e}")))?,
            ),
        };

        let contact = file.contact.unwrap_or_default();
        contact.validate().map_err(|m| invalid("contact", m))?;

        let frame = match file.force_field.frame.as_str() {
            "current" => ForceFrame::Current,
            "desired" => ForceFrame::Desired,
            other => {
                return Err(invalid(
                    "force_field.frame",
                    format!("unknown frame `{other}` (expected current or desired)"),
                ))
            }
        };
        let force_field = ForceFieldSpec {
            wrench: Wrench(Vec6::from_row_slice(&file.force_field.wrench)),
            frame,
        };

        let stiffness = StiffnessGains::diagonal(
            Vec3::from_row_slice(&file.gains.stiffness.kp),
            Vec3::from_row_slice(&file.gains.stiffness.kr),
        )
        .map_err(|e| invalid("gains.stiffness", format!("{e}")))?;
        let kd = match file.gains.damping {
            DampingFile::Scalar(d) => Mat6::identity() * d,
            DampingFile::Diagonal(d) => Mat6::from_diagonal(&Vec6::from_row_slice(&d)),
        };
        let gains = ImpedanceGains::new(stiffness, kd)
            .map_err(|e| invalid("gains.damping", format!("{e}")))?;
        let gic_gains = match &file.gic_stiffness {
            None => gains.clone(),
            Some(s) => ImpedanceGains::new(
                StiffnessGains::diagonal(Vec3::from_row_slice(&s.kp), Vec3::from_row_slice(&s.kr))
                    .map_err(|e| invalid("gic_stiffness", format!("{e}")))?,
                kd,
            )
            .map_err(|e| invalid("gic_stiffness", format!("{e}")))?,
        };

        let pid = &file.gains.force_pid;
        let pid_gains = ForcePidGains::new(pid.kp, pid.ki, pid.kd, pid.integral_limit)
            .map_err(|e| invalid("gains.force_pid", format!("{e}")))?;

        crate::fields::VelocityFieldParams::new(file.velocity_field.zeta)
            .map_err(|e| invalid("velocity_field.zeta", format!("{e}")))?;

        let force_tank = TankParams::new(
            file.tanks.force.initial,
            file.tanks.force.lower,
            file.tanks.force.upper,
            file.tanks.force.margin,
        )
        .map_err(|e| invalid("tanks.force", format!("{e}")))?;
        let impedance_tank = TankParams::new(
            file.tanks.impedance.initial,
            file.tanks.impedance.lower,
            file.tanks.impedance.upper,
            file.tanks.impedance.margin,
        )
        .map_err(|e| invalid("tanks.impedance", format!("{e}")))?;

        if file.ft_filter.cutoff_hz <= 0.0 {
            return Err(invalid("ft_filter.cutoff_hz", "must be > 0"));
        }

        Ok(Scenario {
            name,
            robot,
            controller: file.controller,
            duration: file.duration,
            timestep: file.timestep,
            output_dir: file.output_dir.map(|d| base.join(d)),
            start_clearance: file.start_clearance,
            initial_q: file.initial_q.map(|q| Vec6::from_row_slice(&q)),
            ik_seed: file
                .ik_seed
                .map(|q| Vec6::from_row_slice(&q))
                .unwrap_or_else(Vec6::zeros),
            trajectory,
            surface,
            contact,
            force_field,
            gains,
            gic_gains,
            pid_gains,
            zeta: file.velocity_field.zeta,
            force_tank,
            impedance_tank,
            shaping: file.shaping.map(|s| ShapingConfig { psi0: s.psi0, sigma: s.sigma }),
            ft_cutoff_hz: file.ft_filter.cutoff_hz,
        })
    }

    pub fn with_controller(mut self, kind: ControllerKind) -> Self {
        self.controller = kind;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
    }

    #[test]
    fn shipped_scenarios_load() {
        for name in ["circle.json", "sphere.json", "sphere_lowtank.json"] {
            let s = Scenario::load(scenario_dir().join(name)).unwrap_or_else(|e| {
                panic!("{name}: {e}");
            });
            assert!(s.timestep > 0.0);
            assert!(s.duration >= s.timestep);
        }
    }

    #[test]
    fn missing_field_is_named() {
        let dir = std::env::temp_dir().join("gufic_config_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(scenario_dir().join("circle.json")).unwrap(),
        )
        .unwrap();
        v["tanks"]["force"].as_object_mut().unwrap().remove("upper");
        let path = dir.join("missing_upper.json");
        std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
        let err = Scenario::load(&path).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("upper"), "error does not name the field: {msg}");
    }

    #[test]
    fn invalid_tank_ordering_is_rejected() {
        let dir = std::env::temp_dir().join("gufic_config_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(scenario_dir().join("circle.json")).unwrap(),
        )
        .unwrap();
        v["tanks"]["impedance"]["lower"] = serde_json::json!(30.0);
        let model = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models/arm6.json");
        v["robot_model"] = serde_json::json!(model.to_str().unwrap());
        let path = dir.join("bad_tank.json");
        std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
        let err = Scenario::load(&path).unwrap_err();
        assert!(format!("{err}").contains("tanks.impedance"));
    }
}
