//! Scenario files: TOML documents declaring the alphabet, the reactive
//! specification, behavior bindings, barriers, scripted events and rates.
//!
//! ```toml
//! name = "stir"
//! formula = "G (h -> s) & G (!h -> F p)"
//! controllable = ["s", "p"]
//! uncontrollable = ["h"]
//! duration = 10.0
//! initial_position = [0.08, 0.0, 0.0]
//! initial_behavior = "s"
//!
//! [behaviors.s]
//! kind = "limit_cycle"
//! center = [0.0, 0.0, 0.0]
//! radius = 0.08
//! rate = 3.0
//!
//! [behaviors.p]
//! kind = "reach"
//! target = [0.3, 0.2, 0.0]
//!
//! [[events]]
//! t = 5.0
//! set = { h = false }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::automaton::{translate, BuchiAutomaton};
use crate::dslib::{NominalDs, Vec3, DEFAULT_SNAP_RADIUS};
use crate::formula::{parse_formula, validate_rtl, Alphabet, AtomKind, RtlSpec, Valuation};
use crate::hoa::parse_hoa;
use crate::motionplanner::{
    Barrier, Behavior, ClfSpec, GammaProfile, MotionConfig, ReachTask, StaticCbf, DEFAULT_BOX_SHARPNESS, DEFAULT_CBF_GAIN, DEFAULT_CLF_GAIN,
    DEFAULT_LAMBDA, DEFAULT_MIX_DURATION, DEFAULT_REACH_GAIN,
};

pub const DEFAULT_TASK_HZ: u32 = 200;
pub const DEFAULT_MOTION_HZ: u32 = 1000;
pub const DEFAULT_VELOCITY_TOLERANCE: f64 = 0.02;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_UNIFORM_SPEED: f64 = 0.25;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid { path: path.into(), message: message.into() })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    formula: String,
    controllable: Vec<String>,
    uncontrollable: Vec<String>,
    automaton: Option<String>,
    duration: f64,
    initial_position: [f64; 3],
    initial_behavior: Option<String>,
    #[serde(default)]
    live: bool,
    task_hz: Option<u32>,
    motion_hz: Option<u32>,
    #[serde(default)]
    motion: RawMotion,
    #[serde(default)]
    sensing: RawSensing,
    #[serde(default)]
    behaviors: BTreeMap<String, RawBehavior>,
    #[serde(default)]
    barriers: Vec<RawBarrier>,
    #[serde(default)]
    events: Vec<RawEvent>,
    #[serde(default)]
    disturbances: Vec<RawDisturbance>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMotion {
    lambda: Option<f64>,
    clf_gain: Option<f64>,
    clf_matrix: Option<[[f64; 3]; 3]>,
    reach_gain: Option<f64>,
    mix_duration: Option<f64>,
    snap_radius: Option<f64>,
    reach_static_barriers: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensing {
    velocity_tolerance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawBehavior {
    LimitCycle { center: [f64; 3], radius: f64, rate: f64, normal: Option<[f64; 3]>, gain: Option<f64> },
    LinePatrol { start: [f64; 3], end: [f64; 3], speed: f64, sweep: f64, normal: Option<[f64; 3]>, gain: Option<f64> },
    PointAttractor { target: [f64; 3], gain: Option<f64> },
    Reach { target: [f64; 3], epsilon: Option<f64>, v_u: Option<f64>, profile: Option<String> },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawBarrier {
    Halfspace { name: String, normal: [f64; 3], offset: f64, gain: Option<f64> },
    Sphere { name: String, center: [f64; 3], radius: f64, gain: Option<f64> },
    Box { name: String, lower: [f64; 3], upper: [f64; 3], sharpness: Option<f64>, gain: Option<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    t: f64,
    set: BTreeMap<String, bool>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawDisturbance {
    Impulse { t: f64, displacement: [f64; 3] },
    Hold { t: f64, duration: f64 },
    RandomImpulse { t: f64, magnitude: f64 },
}

/// Scripted change of uncontrollable atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEvent {
    pub t: f64,
    pub set: Vec<(usize, bool)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Disturbance {
    /// Displaces the robot instantaneously.
    Impulse { t: f64, displacement: Vec3 },
    /// Freezes the robot for `duration` seconds.
    Hold { t: f64, duration: f64 },
    /// Impulse of fixed length in a direction drawn from the run seed.
    RandomImpulse { t: f64, magnitude: f64 },
}

impl Disturbance {
    pub fn time(&self) -> f64 {
        match self {
            Disturbance::Impulse { t, .. } | Disturbance::Hold { t, .. } | Disturbance::RandomImpulse { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    pub velocity_tolerance: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig { velocity_tolerance: DEFAULT_VELOCITY_TOLERANCE }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub spec: RtlSpec,
    pub automaton: BuchiAutomaton,
    /// Binding of every controllable atom, indexed by atom id.
    pub behaviors: Vec<Option<Behavior>>,
    pub motion: MotionConfig,
    pub sensing: SensorConfig,
    pub events: Vec<ScriptEvent>,
    pub disturbances: Vec<Disturbance>,
    pub initial_position: Vec3,
    pub initial_behavior: Option<usize>,
    pub duration: f64,
    pub task_hz: u32,
    pub motion_hz: u32,
    pub live: bool,
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn check_finite(path: &str, values: &[f64]) -> Result<(), ScenarioError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        invalid(path, "must be finite")
    }
}

fn check_positive(path: &str, value: f64) -> Result<f64, ScenarioError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        invalid(path, format!("must be positive, got {value}"))
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text, path.parent())
    }

    /// Parses a scenario; `base_dir` resolves a relative `automaton` path.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        Self::from_raw(raw, base_dir)
    }

    fn from_raw(raw: RawScenario, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let alphabet = Alphabet::new(&raw.controllable, &raw.uncontrollable).or_else(|e| invalid("controllable", e.to_string()))?;
        let formula = parse_formula(&raw.formula, &alphabet).or_else(|e| invalid("formula", e.to_string()))?;
        let spec = validate_rtl(&formula, &alphabet).or_else(|e| invalid("formula", e.to_string()))?;
        let automaton = match &raw.automaton {
            Some(file) => {
                let path = base_dir.map(|d| d.join(file)).unwrap_or_else(|| PathBuf::from(file));
                let text = std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
                let a = parse_hoa(&text).or_else(|e| invalid("automaton", e.to_string()))?;
                a.with_alphabet(&alphabet).or_else(|e| invalid("automaton", e.to_string()))?
            }
            None => translate(&formula, &alphabet).or_else(|e| invalid("formula", e.to_string()))?,
        };

        let task_hz = raw.task_hz.unwrap_or(DEFAULT_TASK_HZ);
        let motion_hz = raw.motion_hz.unwrap_or(DEFAULT_MOTION_HZ);
        if task_hz == 0 {
            return invalid("task_hz", "must be positive");
        }
        if motion_hz == 0 || motion_hz % task_hz != 0 {
            return invalid("motion_hz", format!("must be a positive multiple of task_hz ({task_hz})"));
        }
        if !(raw.duration >= 0.0 && raw.duration.is_finite()) {
            return invalid("duration", "must be a nonnegative number of seconds");
        }
        check_finite("initial_position", &raw.initial_position)?;

        let motion = Self::motion_config(&raw)?;
        let sensing = SensorConfig {
            velocity_tolerance: check_positive("sensing.velocity_tolerance", raw.sensing.velocity_tolerance.unwrap_or(DEFAULT_VELOCITY_TOLERANCE))?,
        };

        let mut behaviors = vec![None; alphabet.len()];
        for (name, b) in &raw.behaviors {
            let path = format!("behaviors.{name}");
            let Some(id) = alphabet.lookup(name) else {
                return invalid(path, "no such proposition");
            };
            if alphabet.kind(id) != AtomKind::Controllable {
                return invalid(path, "behaviors bind controllable propositions only");
            }
            behaviors[id] = Some(Self::behavior(&path, b)?);
        }
        for id in alphabet.controllable() {
            if behaviors[id].is_none() {
                return invalid(format!("behaviors.{}", alphabet.name(id)), "missing binding for controllable proposition");
            }
        }

        let initial_behavior = match &raw.initial_behavior {
            None => None,
            Some(name) => match alphabet.lookup(name) {
                Some(id) if alphabet.kind(id) == AtomKind::Controllable => Some(id),
                _ => return invalid("initial_behavior", format!("`{name}` is not a controllable proposition")),
            },
        };

        let mut events = Vec::with_capacity(raw.events.len());
        let mut last = f64::NEG_INFINITY;
        for (i, e) in raw.events.iter().enumerate() {
            let path = format!("events[{i}]");
            if !(e.t >= 0.0 && e.t.is_finite()) {
                return invalid(format!("{path}.t"), "must be a nonnegative time");
            }
            if e.t < last {
                return invalid(format!("{path}.t"), "event times must be nondecreasing");
            }
            last = e.t;
            let mut set = Vec::new();
            for (name, value) in &e.set {
                match alphabet.lookup(name) {
                    Some(id) if alphabet.kind(id) == AtomKind::Uncontrollable => set.push((id, *value)),
                    _ => return invalid(format!("{path}.set.{name}"), "not an uncontrollable proposition"),
                }
            }
            events.push(ScriptEvent { t: e.t, set });
        }

        let mut disturbances = Vec::with_capacity(raw.disturbances.len());
        for (i, d) in raw.disturbances.iter().enumerate() {
            let path = format!("disturbances[{i}]");
            let d = match d {
                RawDisturbance::Impulse { t, displacement } => {
                    check_finite(&format!("{path}.displacement"), displacement)?;
                    Disturbance::Impulse { t: *t, displacement: vec3(*displacement) }
                }
                RawDisturbance::Hold { t, duration } => Disturbance::Hold { t: *t, duration: check_positive(&format!("{path}.duration"), *duration)? },
                RawDisturbance::RandomImpulse { t, magnitude } => {
                    Disturbance::RandomImpulse { t: *t, magnitude: check_positive(&format!("{path}.magnitude"), *magnitude)? }
                }
            };
            if !(d.time() >= 0.0 && d.time().is_finite()) {
                return invalid(format!("{path}.t"), "must be a nonnegative time");
            }
            disturbances.push(d);
        }
        disturbances.sort_by(|a, b| a.time().total_cmp(&b.time()));

        Ok(Scenario {
            name: raw.name.clone().unwrap_or_else(|| "scenario".to_string()),
            spec,
            automaton,
            behaviors,
            motion,
            sensing,
            events,
            disturbances,
            initial_position: vec3(raw.initial_position),
            initial_behavior,
            duration: raw.duration,
            task_hz,
            motion_hz,
            live: raw.live,
        })
    }

    fn motion_config(raw: &RawScenario) -> Result<MotionConfig, ScenarioError> {
        let m = &raw.motion;
        let clf_gain = check_positive("motion.clf_gain", m.clf_gain.unwrap_or(DEFAULT_CLF_GAIN))?;
        let clf = match m.clf_matrix {
            None => ClfSpec::identity(clf_gain),
            Some(rows) => ClfSpec::new(nalgebra::Matrix3::from_fn(|r, c| rows[r][c]), clf_gain),
        }
        .or_else(|e| invalid("motion.clf_matrix", e.to_string()))?;
        let mut barriers = Vec::new();
        for (i, b) in raw.barriers.iter().enumerate() {
            let path = format!("barriers[{i}]");
            let (name, barrier, gain) = match b {
                RawBarrier::Halfspace { name, normal, offset, gain } => (name, Barrier::Halfspace { normal: vec3(*normal), offset: *offset }, gain),
                RawBarrier::Sphere { name, center, radius, gain } => (name, Barrier::SphereKeepout { center: vec3(*center), radius: *radius }, gain),
                RawBarrier::Box { name, lower, upper, sharpness, gain } => (
                    name,
                    Barrier::Box { lower: vec3(*lower), upper: vec3(*upper), sharpness: sharpness.unwrap_or(DEFAULT_BOX_SHARPNESS) },
                    gain,
                ),
            };
            if barriers.iter().any(|c: &StaticCbf| &c.name == name) {
                return invalid(format!("{path}.name"), format!("duplicate barrier `{name}`"));
            }
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return invalid(format!("{path}.name"), "must be a nonempty identifier");
            }
            let cbf = StaticCbf::new(name.clone(), barrier, gain.unwrap_or(DEFAULT_CBF_GAIN)).or_else(|e| invalid(path.clone(), e.to_string()))?;
            if cbf.value(&vec3(raw.initial_position)) < 0.0 {
                return invalid(path, "initial position violates the barrier");
            }
            barriers.push(cbf);
        }
        let config = MotionConfig {
            lambda: check_positive("motion.lambda", m.lambda.unwrap_or(DEFAULT_LAMBDA))?,
            clf,
            barriers,
            reach_gain: check_positive("motion.reach_gain", m.reach_gain.unwrap_or(DEFAULT_REACH_GAIN))?,
            mix_duration: check_positive("motion.mix_duration", m.mix_duration.unwrap_or(DEFAULT_MIX_DURATION))?,
            snap_radius: check_positive("motion.snap_radius", m.snap_radius.unwrap_or(DEFAULT_SNAP_RADIUS))?,
            reach_static_barriers: m.reach_static_barriers.unwrap_or(false),
        };
        Ok(config)
    }

    fn behavior(path: &str, b: &RawBehavior) -> Result<Behavior, ScenarioError> {
        let ds = |r: Result<NominalDs, crate::dslib::DsError>| r.or_else(|e| invalid(path, e.to_string()));
        Ok(match b {
            RawBehavior::LimitCycle { center, radius, rate, normal, gain } => Behavior::Nominal(ds(NominalDs::planar_limit_cycle(
                vec3(*center),
                *radius,
                *rate,
                vec3(normal.unwrap_or([0.0, 0.0, 1.0])),
                gain.unwrap_or(2.0),
            ))?),
            RawBehavior::LinePatrol { start, end, speed, sweep, normal, gain } => Behavior::Nominal(ds(NominalDs::line_patrol(
                vec3(*start),
                vec3(*end),
                *speed,
                *sweep,
                vec3(normal.unwrap_or([0.0, 0.0, 1.0])),
                gain.unwrap_or(2.0),
            ))?),
            RawBehavior::PointAttractor { target, gain } => Behavior::Nominal(ds(NominalDs::point_attractor(vec3(*target), gain.unwrap_or(1.0)))?),
            RawBehavior::Reach { target, epsilon, v_u, profile } => {
                check_finite(&format!("{path}.target"), target)?;
                let profile = match profile.as_deref().unwrap_or("exponential") {
                    "linear" => GammaProfile::Linear,
                    "exponential" => GammaProfile::Exponential,
                    other => return invalid(format!("{path}.profile"), format!("unknown profile `{other}` (linear, exponential)")),
                };
                Behavior::Reach(ReachTask {
                    target: vec3(*target),
                    epsilon: check_positive(&format!("{path}.epsilon"), epsilon.unwrap_or(DEFAULT_EPSILON))?,
                    v_u: check_positive(&format!("{path}.v_u"), v_u.unwrap_or(DEFAULT_UNIFORM_SPEED))?,
                    profile,
                })
            }
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.spec.alphabet
    }

    pub fn ticks_per_task(&self) -> u64 {
        u64::from(self.motion_hz / self.task_hz)
    }

    pub fn dt(&self) -> f64 {
        1.0 / f64::from(self.motion_hz)
    }

    /// Number of motion ticks in the run.
    pub fn total_ticks(&self) -> u64 {
        (self.duration * f64::from(self.motion_hz) + 1e-9).floor() as u64
    }

    /// Uncontrollable valuation after applying every event with time ≤ `t`.
    pub fn sigma_u_at(&self, t: f64) -> Valuation {
        let mut v = Valuation::EMPTY;
        for e in self.events.iter().take_while(|e| e.t <= t + 1e-9) {
            for &(id, value) in &e.set {
                v = v.with(id, value);
            }
        }
        v
    }

    /// Reach tasks bound to controllable atoms.
    pub fn reach_tasks(&self) -> impl Iterator<Item = (usize, &ReachTask)> {
        self.behaviors.iter().enumerate().filter_map(|(i, b)| match b {
            Some(Behavior::Reach(task)) => Some((i, task)),
            _ => None,
        })
    }
}
