//! Dual-rate closed loop: the task planner runs every `motion_hz / task_hz`
//! motion ticks on sensed propositions, the motion planner integrates the
//! robot at `motion_hz`.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dslib::Vec3;
use crate::formula::Valuation;
use crate::motionplanner::{Behavior, MotionError, MotionPlanner, MotionSample};
use crate::scenario::{Disturbance, Scenario};
use crate::taskplanner::{PlannerError, TaskPlanner};
use crate::trace::{Trace, TraceRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("task planner at t = {t} s: {source}")]
    Planner { t: f64, source: PlannerError },
    #[error("motion planner at t = {t} s: {source}")]
    Motion { t: f64, source: MotionError },
}

/// A run that stopped early, with the trace recorded up to the failure.
#[derive(Debug)]
pub struct SimFailure {
    pub error: SimError,
    pub trace: Trace,
    pub stats: SimStats,
}

/// Operator input, applied at the next task tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    SetUncontrollable { atom: usize, value: bool },
    Impulse(Vec3),
    Hold(f64),
}

/// Wall-clock cost of the planners.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimStats {
    pub task_steps: u64,
    pub task_time: Duration,
    pub task_max: Duration,
    pub motion_steps: u64,
    pub motion_time: Duration,
    pub motion_max: Duration,
}

impl SimStats {
    pub fn task_mean(&self) -> Duration {
        self.task_time.checked_div(self.task_steps.max(1) as u32).unwrap_or_default()
    }

    pub fn motion_mean(&self) -> Duration {
        self.motion_time.checked_div(self.motion_steps.max(1) as u32).unwrap_or_default()
    }
}

/// What happened during one motion tick, beyond the trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickEvents {
    pub replanned: bool,
    /// Behavior switch `(from, to)` commanded at this tick.
    pub switched: Option<(Option<usize>, Option<usize>)>,
    /// Controllable atoms sensed true at once.
    pub one_hot_violation: bool,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    task: TaskPlanner,
    motion: MotionPlanner,
    disturbances: Vec<Disturbance>,
    next_disturbance: usize,
    next_event: usize,
    holds: Vec<(f64, f64)>,
    commands: VecDeque<Command>,
    k: u64,
    x: Vec3,
    prev_x: Vec3,
    prev_velocity: Vec3,
    sigma_u: Valuation,
    sigma_c: Valuation,
    state: usize,
    behavior: Option<usize>,
    latched: bool,
    stats: SimStats,
}

/// Direction uniform on the unit sphere, by rejection from the cube.
fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

impl Simulator {
    /// `seed` draws the directions of random impulses; everything else is
    /// deterministic.
    pub fn new(scenario: Scenario, seed: u64) -> Result<Self, SimError> {
        let motion = MotionPlanner::new(scenario.motion.clone(), scenario.behaviors.clone()).map_err(|source| SimError::Motion { t: 0.0, source })?;
        let task = TaskPlanner::new(scenario.automaton.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut holds = Vec::new();
        let disturbances = scenario
            .disturbances
            .iter()
            .filter_map(|d| match *d {
                Disturbance::RandomImpulse { t, magnitude } => Some(Disturbance::Impulse { t, displacement: random_direction(&mut rng) * magnitude }),
                Disturbance::Hold { t, duration } => {
                    holds.push((t, t + duration));
                    None
                }
                other => Some(other),
            })
            .collect();
        let x = scenario.initial_position;
        let prev_velocity = match scenario.initial_behavior.and_then(|b| scenario.behaviors[b].as_ref()) {
            Some(Behavior::Nominal(ds)) => ds.eval(&x),
            _ => Vec3::zeros(),
        };
        let state = task.state();
        Ok(Simulator {
            scenario,
            task,
            motion,
            disturbances,
            next_disturbance: 0,
            next_event: 0,
            holds,
            commands: VecDeque::new(),
            k: 0,
            x,
            prev_x: x,
            prev_velocity,
            sigma_u: Valuation::EMPTY,
            sigma_c: Valuation::EMPTY,
            state,
            behavior: None,
            latched: false,
            stats: SimStats::default(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn task_planner(&self) -> &TaskPlanner {
        &self.task
    }

    pub fn motion_planner(&self) -> &MotionPlanner {
        &self.motion
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn tick_index(&self) -> u64 {
        self.k
    }

    pub fn time(&self) -> f64 {
        self.k as f64 / f64::from(self.scenario.motion_hz)
    }

    pub fn position(&self) -> Vec3 {
        self.x
    }

    pub fn sigma_u(&self) -> Valuation {
        self.sigma_u
    }

    pub fn behavior(&self) -> Option<usize> {
        self.behavior
    }

    pub fn is_finished(&self) -> bool {
        self.k >= self.scenario.total_ticks()
    }

    pub fn empty_trace(&self) -> Trace {
        Trace::new(self.scenario.alphabet().clone(), self.scenario.motion.barriers.iter().map(|b| b.name.clone()).collect())
    }

    /// Queues an operator command for the next task tick.
    pub fn push_command(&mut self, command: Command) {
        self.commands.push_back(command);
    }

    fn held(&self, t: f64) -> bool {
        self.holds.iter().any(|&(a, b)| t >= a - 1e-9 && t < b - 1e-9)
    }

    /// Controllable propositions from the last applied velocity and the reach
    /// latch, reduced to at most one true atom (the active one wins).
    fn sense(&self) -> (Valuation, bool) {
        let alphabet = self.scenario.alphabet();
        let tol = self.scenario.sensing.velocity_tolerance;
        let mut sensed = Valuation::EMPTY;
        for id in alphabet.controllable() {
            let on = match &self.scenario.behaviors[id] {
                Some(Behavior::Nominal(ds)) => (self.prev_velocity - ds.eval(&self.prev_x)).norm() <= tol,
                Some(Behavior::Reach(_)) => self.latched && self.behavior == Some(id),
                None => false,
            };
            sensed = sensed.with(id, on);
        }
        let many = sensed.count(alphabet.controllable_mask()) > 1;
        if many {
            let keep = match self.behavior {
                Some(b) if sensed.get(b) => b,
                _ => sensed.true_atoms().next().expect("at least two atoms are true"),
            };
            sensed = Valuation::from_true([keep]);
        }
        (sensed, many)
    }

    fn drain_inputs(&mut self, t: f64) {
        while let Some(e) = self.scenario.events.get(self.next_event).filter(|e| e.t <= t + 1e-9) {
            for &(atom, value) in &e.set {
                self.sigma_u = self.sigma_u.with(atom, value);
            }
            self.next_event += 1;
        }
        while let Some(c) = self.commands.pop_front() {
            match c {
                Command::SetUncontrollable { atom, value } => self.sigma_u = self.sigma_u.with(atom, value),
                Command::Impulse(d) => self.x += d,
                Command::Hold(duration) => self.holds.push((t, t + duration)),
            }
        }
    }

    /// Advances one motion tick and returns its trace record.
    pub fn step(&mut self) -> Result<(TraceRecord, TickEvents), SimError> {
        let t = self.time();
        let dt = self.scenario.dt();
        while let Some(Disturbance::Impulse { displacement, .. }) =
            self.disturbances.get(self.next_disturbance).filter(|d| d.time() <= t + 1e-9)
        {
            self.x += *displacement;
            self.next_disturbance += 1;
        }

        let planner_tick = self.k % self.scenario.ticks_per_task() == 0;
        let mut events = TickEvents { replanned: false, switched: None, one_hot_violation: false };
        if planner_tick {
            self.drain_inputs(t);
            let (sigma_c, many) = self.sense();
            self.sigma_c = sigma_c;
            events.one_hot_violation = many;
            let started = Instant::now();
            let choice = self.task.step(sigma_c, self.sigma_u).map_err(|source| SimError::Planner { t, source })?;
            let spent = started.elapsed();
            self.stats.task_steps += 1;
            self.stats.task_time += spent;
            self.stats.task_max = self.stats.task_max.max(spent);
            self.state = choice.automaton_state;
            events.replanned = choice.replanned;
            if choice.behavior != self.behavior {
                self.motion.switch_to(choice.behavior, &self.x, t, dt).map_err(|source| SimError::Motion { t, source })?;
                events.switched = Some((self.behavior, choice.behavior));
                self.behavior = choice.behavior;
                self.latched = false;
            }
        }

        let held = self.held(t);
        let started = Instant::now();
        let (next, sample) = self.motion.tick(&self.x, t, dt, held).map_err(|source| SimError::Motion { t, source })?;
        let spent = started.elapsed();
        self.stats.motion_steps += 1;
        self.stats.motion_time += spent;
        self.stats.motion_max = self.stats.motion_max.max(spent);

        let record = self.record(t, planner_tick, events.replanned, &sample);
        self.prev_x = self.x;
        self.prev_velocity = sample.velocity;
        self.x = next;
        self.k += 1;
        self.update_latch(self.time());
        Ok((record, events))
    }

    fn update_latch(&mut self, t: f64) {
        let Some(Some(Behavior::Reach(task))) = self.behavior.map(|b| &self.scenario.behaviors[b]) else {
            return;
        };
        let in_time = self.motion.reach_cbf().is_none_or(|cbf| cbf.is_degenerate() || t <= cbf.t_deadline + 1e-9);
        if in_time && (self.x - task.target).norm() <= task.epsilon {
            self.latched = true;
        }
    }

    fn record(&self, t: f64, planner_tick: bool, replanned: bool, s: &MotionSample) -> TraceRecord {
        TraceRecord {
            t,
            x: self.x,
            xdot_ref: s.velocity,
            sigma_c: self.sigma_c,
            sigma_u: self.sigma_u,
            state: self.state,
            behavior: self.behavior,
            planner_tick,
            replanned,
            barriers: s.barrier_values.clone(),
            reach_value: s.reach_value,
            reach_deadline: s.reach_deadline,
            clf_value: s.clf_value,
            eta: s.eta,
            status: s.status,
            fallback: s.fallback,
            beta: s.beta,
        }
    }
}

/// Runs a scripted scenario to completion.
pub fn run(scenario: &Scenario, seed: u64) -> Result<(Trace, SimStats), Box<SimFailure>> {
    let mut sim = match Simulator::new(scenario.clone(), seed) {
        Ok(sim) => sim,
        Err(error) => {
            let trace = Trace::new(scenario.alphabet().clone(), scenario.motion.barriers.iter().map(|b| b.name.clone()).collect());
            return Err(Box::new(SimFailure { error, trace, stats: SimStats::default() }));
        }
    };
    let mut trace = sim.empty_trace();
    trace.records.reserve(scenario.total_ticks() as usize);
    while !sim.is_finished() {
        match sim.step() {
            Ok((record, _)) => trace.records.push(record),
            Err(error) => return Err(Box::new(SimFailure { error, trace, stats: sim.stats })),
        }
    }
    Ok((trace, sim.stats))
}
