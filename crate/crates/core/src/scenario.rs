//! Scenario files: robot, gait/command script, planner and simulation
//! settings.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::{GaitError, GaitSpec};
use crate::mpc::plant::random_disturbances;
use crate::mpc::{Disturbance, MpcConfig, SimConfig};
use crate::reference::{MotionCommand, MotionScript};
use crate::robot::{ParamsError, RobotParams, NUM_LEGS};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Robot(#[from] ParamsError),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// One gait segment with its motion command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    /// `stand`, `trot`, `bound`, `hop_diagonal`, `hop_four`, `jump` or
    /// `flight`.
    pub gait: String,
    /// Segment length (s); for `jump` it defaults to `stance + flight`.
    pub duration: Option<f64>,
    /// Ground and air time of a `jump` (s).
    pub stance: Option<f64>,
    pub flight: Option<f64>,
    /// Overrides of a periodic preset.
    pub period: Option<f64>,
    pub duty: Option<f64>,
    pub offsets: Option<[f64; NUM_LEGS]>,
    /// Body height; defaults to the robot's standing height.
    pub height: Option<f64>,
    #[serde(default)]
    pub vx: f64,
    #[serde(default)]
    pub vy: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    pub apex: Option<f64>,
}

impl SegmentSpec {
    fn gait(&self) -> Result<GaitSpec, ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(m);
        let duration = || self.duration.ok_or_else(|| invalid(format!("{} segment needs a duration", self.gait)));
        let spec = match self.gait.as_str() {
            "jump" => {
                let (Some(stance), Some(flight)) = (self.stance, self.flight) else {
                    return Err(invalid("jump segment needs stance and flight".into()));
                };
                if self.duration.is_some_and(|d| (d - stance - flight).abs() > 1e-9) {
                    return Err(invalid("jump duration must equal stance + flight".into()));
                }
                GaitSpec::jump(stance, flight)
            }
            "flight" => GaitSpec::flight(duration()?),
            name => {
                let mut gait =
                    GaitSpec::periodic_preset(name).ok_or_else(|| invalid(format!("unknown gait {name:?}")))?;
                if let Some(p) = self.period {
                    gait.period = p;
                }
                if let Some(d) = self.duty {
                    gait.duty = [d; NUM_LEGS];
                }
                if let Some(o) = self.offsets {
                    gait.offsets = o;
                }
                GaitSpec::periodic(gait, duration()?)
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    fn command(&self, params: &RobotParams) -> MotionCommand {
        MotionCommand {
            height: self.height.unwrap_or(params.standing_height),
            vx: self.vx,
            vy: self.vy,
            yaw_rate: self.yaw_rate,
            apex: self.apex,
        }
    }
}

/// Horizontal velocity impulses drawn from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomDisturbances {
    pub count: usize,
    pub start: f64,
    pub end: f64,
    /// Largest impulse (m/s).
    pub max_speed: f64,
}

/// On-disk layout of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    /// Bundled robot name or a parameter file path relative to the scenario.
    #[serde(default = "default_robot")]
    pub robot: String,
    pub segments: Vec<SegmentSpec>,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub sim: SimConfig,
    pub random_disturbances: Option<RandomDisturbances>,
    /// Output directory, relative to the working directory.
    pub output: Option<String>,
}

fn default_robot() -> String {
    "a1".into()
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub params: RobotParams,
    pub script: MotionScript,
    pub mpc: MpcConfig,
    pub sim: SimConfig,
    pub output: PathBuf,
    scripted: Vec<Disturbance>,
    random: Option<RandomDisturbances>,
}

pub const BUNDLED: [(&str, &str); 5] = [
    ("stand", include_str!("../config/scenarios/stand.toml")),
    ("run_jump_run", include_str!("../config/scenarios/run_jump_run.toml")),
    ("continuous_jump", include_str!("../config/scenarios/continuous_jump.toml")),
    ("mixed_gait_hop", include_str!("../config/scenarios/mixed_gait_hop.toml")),
    ("mini_cheetah_run_jump_run", include_str!("../config/scenarios/mini_cheetah_run_jump_run.toml")),
];

impl Scenario {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text)?;
        Self::from_file(file, base)
    }

    pub fn from_file(file: ScenarioFile, base: &Path) -> Result<Self, ScenarioError> {
        let params = match RobotParams::preset(&file.robot) {
            Some(p) => p,
            None => RobotParams::load(&base.join(&file.robot))?,
        };
        if file.segments.is_empty() {
            return Err(ScenarioError::Invalid("no segments".into()));
        }
        let segments = file
            .segments
            .iter()
            .map(|s| Ok((s.gait()?, s.command(&params))))
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let script = MotionScript::new(&segments, file.mpc.dt)?;
        file.sim.ratio().map_err(ScenarioError::Invalid)?;
        file.mpc.weights.validate().map_err(ScenarioError::Invalid)?;
        file.mpc.solver.cold_options().validate().map_err(ScenarioError::Invalid)?;
        if file.mpc.horizon_steps == 0 || file.mpc.solver.replan_iterations == 0 {
            return Err(ScenarioError::Invalid("horizon and replan iterations must be positive".into()));
        }
        if (1.0 / file.sim.mpc_rate - file.mpc.dt).abs() > 1e-9 {
            return Err(ScenarioError::Invalid("the MPC period must equal the planning step".into()));
        }
        if let Some(r) = &file.random_disturbances {
            if !(r.start < r.end && r.max_speed >= 0.0) {
                return Err(ScenarioError::Invalid("random disturbance window is empty".into()));
            }
        }
        let output = PathBuf::from(file.output.clone().unwrap_or_else(|| format!("out/{}", file.name)));
        let mut scenario = Self {
            name: file.name,
            params,
            script,
            mpc: file.mpc,
            scripted: file.sim.disturbances.clone(),
            sim: file.sim,
            output,
            random: file.random_disturbances,
        };
        scenario.set_seed(scenario.sim.seed);
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn bundled(name: &str) -> Option<Self> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml_str(text, Path::new(".")).expect("bundled scenarios are valid"))
    }

    /// A bundled scenario name or a file path.
    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        match Self::bundled(name_or_path) {
            Some(s) => Ok(s),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    /// Set the run seed and redraw the random disturbances from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        let mut all = self.scripted.clone();
        if let Some(r) = &self.random {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            all.extend(random_disturbances(&mut rng, r.count, r.start, r.end, r.max_speed));
        }
        all.sort_by(|a, b| a.time.total_cmp(&b.time));
        self.sim.disturbances = all;
    }

    pub fn duration(&self) -> f64 {
        self.sim.duration.unwrap_or_else(|| self.script.duration())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_load() {
        for (name, _) in BUNDLED {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(s.name, name);
            assert!(s.duration() > 0.0);
        }
    }

    #[test]
    fn seeds_redraw_random_disturbances() {
        let mut s = Scenario::bundled("mixed_gait_hop").unwrap();
        s.set_seed(1);
        let a = s.sim.disturbances.clone();
        s.set_seed(2);
        assert_ne!(a, s.sim.disturbances);
        s.set_seed(1);
        assert_eq!(a, s.sim.disturbances);
        for d in &a {
            let v = nalgebra::Vector3::from(d.velocity);
            assert!(v.norm() <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_files() {
        let base = Path::new(".");
        assert!(Scenario::from_toml_str("name = 'x'\nsegments = []", base).is_err());
        let bad_gait = "name = 'x'\n[[segments]]\ngait = 'gallop'\nduration = 1.0\n";
        assert!(matches!(Scenario::from_toml_str(bad_gait, base), Err(ScenarioError::Invalid(_))));
        let unknown = "name = 'x'\ncolor = 'red'\n[[segments]]\ngait = 'stand'\nduration = 1.0\n";
        assert!(matches!(Scenario::from_toml_str(unknown, base), Err(ScenarioError::Parse(_))));
        let rates = "name = 'x'\n[sim]\nplant_rate = 450.0\n[[segments]]\ngait = 'stand'\nduration = 1.0\n";
        assert!(Scenario::from_toml_str(rates, base).is_err());
        let jump = "name = 'x'\n[[segments]]\ngait = 'jump'\nstance = 0.2\n";
        assert!(Scenario::from_toml_str(jump, base).is_err());
    }
}
