//! Trace monitors: reach-task satisfaction, automaton replay over the sensed
//! proposition stream, barrier minima and Lyapunov recovery. All checks are
//! pure functions of the trace.
//!
//! Büchi acceptance cannot be decided on a finite trace. The run check
//! reports a violation when the set of automaton states consistent with the
//! stream becomes empty, and otherwise uses a proxy: an accepting state must
//! be possible at least once between consecutive environment changes and
//! within the last `2·|Q|` planner ticks.

use std::fmt::Write as _;

use thiserror::Error;

use crate::automaton::BuchiAutomaton;
use crate::dslib::Vec3;
use crate::formula::Valuation;
use crate::scenario::{Disturbance, Scenario};
use crate::trace::Trace;

pub const DEFAULT_BARRIER_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_CLF_THRESHOLD: f64 = 1e-3;
const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonitorError {
    #[error("window [{a}, {b}] s is outside the trace [{start}, {end}] s")]
    WindowOutsideTrace { a: f64, b: f64, start: f64, end: f64 },
    #[error("trace ends at {end} s but the scenario runs for {expected} s")]
    Truncated { end: f64, expected: f64 },
}

/// Result of checking `F_[a,b] ‖x − x*‖ ≤ ε` on the trace samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachCheck {
    pub satisfied: bool,
    /// First sample inside the ball.
    pub time: Option<f64>,
    /// `ε − min ‖x − x*‖` over the window.
    pub margin: f64,
}

pub fn check_reach(trace: &Trace, target: &Vec3, epsilon: f64, a: f64, b: f64) -> Result<ReachCheck, MonitorError> {
    let (Some(first), Some(last)) = (trace.records.first(), trace.records.last()) else {
        return Err(MonitorError::WindowOutsideTrace { a, b, start: f64::NAN, end: f64::NAN });
    };
    if a < first.t - TIME_TOL || b > last.t + TIME_TOL || a > b {
        return Err(MonitorError::WindowOutsideTrace { a, b, start: first.t, end: last.t });
    }
    let mut min = f64::INFINITY;
    let mut time = None;
    for r in trace.records.iter().filter(|r| r.t >= a - TIME_TOL && r.t <= b + TIME_TOL) {
        let d = (r.x - target).norm();
        min = min.min(d);
        if time.is_none() && d <= epsilon {
            time = Some(r.t);
        }
    }
    Ok(ReachCheck { satisfied: time.is_some(), time, margin: epsilon - min })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReachOutcome {
    Satisfied,
    Violated,
    /// Another behavior took over before the deadline.
    Preempted,
    /// The trace ends before the deadline.
    Pending,
}

impl ReachOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            ReachOutcome::Satisfied => "satisfied",
            ReachOutcome::Violated => "violated",
            ReachOutcome::Preempted => "preempted",
            ReachOutcome::Pending => "pending",
        }
    }
}

/// One activation of a reach behavior.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachVerdict {
    pub atom: usize,
    pub start: f64,
    /// Anchored deadline, if the task got past its blend.
    pub deadline: Option<f64>,
    pub outcome: ReachOutcome,
    pub check: ReachCheck,
}

/// Reach target and tolerance bound to a controllable atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachGoal {
    pub atom: usize,
    pub target: Vec3,
    pub epsilon: f64,
}

/// Checks every activation of a reach behavior over the window from its
/// start to its deadline (or to its end, if preempted earlier).
pub fn check_reach_tasks(trace: &Trace, goals: &[ReachGoal]) -> Vec<ReachVerdict> {
    let mut verdicts = Vec::new();
    let records = &trace.records;
    let mut i = 0;
    while i < records.len() {
        let behavior = records[i].behavior;
        let mut j = i;
        while j < records.len() && records[j].behavior == behavior {
            j += 1;
        }
        if let Some(goal) = goals.iter().find(|g| Some(g.atom) == behavior) {
            let start = records[i].t;
            let end = records[j - 1].t;
            let deadline = records[i..j].iter().map(|r| r.reach_deadline).find(|d| d.is_finite());
            let window_end = deadline.map_or(end, |d| d.min(end));
            let check = check_reach(trace, &goal.target, goal.epsilon, start, window_end).expect("window lies inside the trace");
            let reaches_deadline = deadline.is_some_and(|d| end >= d - TIME_TOL);
            let outcome = if check.satisfied {
                ReachOutcome::Satisfied
            } else if reaches_deadline {
                ReachOutcome::Violated
            } else if j == records.len() {
                ReachOutcome::Pending
            } else {
                ReachOutcome::Preempted
            };
            verdicts.push(ReachVerdict { atom: goal.atom, start, deadline, outcome, check });
        }
        i = j;
    }
    verdicts
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    NoViolation,
    /// More than one controllable proposition sensed at this planner tick.
    NotOneHot { tick: usize },
    /// No automaton state is consistent with the stream after this tick.
    ViolatedAt { tick: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub status: RunStatus,
    pub ticks: usize,
    /// Planner ticks at which an accepting state is possible.
    pub accepting_ticks: usize,
    /// Segments of constant environment valuation, as `[start, end)` ticks.
    pub segments: Vec<(usize, usize)>,
    /// Segments without an accepting tick.
    pub unsatisfied_segments: Vec<usize>,
    pub final_window: usize,
    pub final_window_accepting: bool,
}

impl RunReport {
    pub fn proxy_holds(&self) -> bool {
        self.status == RunStatus::NoViolation && self.unsatisfied_segments.is_empty() && (self.ticks == 0 || self.final_window_accepting)
    }
}

/// Replays `(σ_c, σ_u)` planner-tick letters on `a` by subset tracking.
pub fn check_run(a: &BuchiAutomaton, stream: &[(Valuation, Valuation)]) -> RunReport {
    let alphabet = a.alphabet();
    let n = a.num_states();
    let final_window = 2 * n;
    let mut report = RunReport {
        status: RunStatus::NoViolation,
        ticks: stream.len(),
        accepting_ticks: 0,
        segments: Vec::new(),
        unsatisfied_segments: Vec::new(),
        final_window,
        final_window_accepting: false,
    };
    if let Some(tick) = stream.iter().position(|(c, _)| c.count(alphabet.controllable_mask()) > 1) {
        report.status = RunStatus::NotOneHot { tick };
        return report;
    }
    let mut current = vec![false; n];
    current[a.initial()] = true;
    let mut accepting = Vec::with_capacity(stream.len());
    for (tick, &(c, u)) in stream.iter().enumerate() {
        let letter = c.restrict(alphabet.controllable_mask()).union(u.restrict(alphabet.uncontrollable_mask()));
        let mut next = vec![false; n];
        for q in (0..n).filter(|&q| current[q]) {
            for s in a.successors(q, letter) {
                next[s] = true;
            }
        }
        if !next.contains(&true) {
            report.status = RunStatus::ViolatedAt { tick };
            return report;
        }
        let hit = (0..n).any(|q| next[q] && a.is_accepting(q));
        accepting.push(hit);
        current = next;
    }
    report.accepting_ticks = accepting.iter().filter(|&&b| b).count();
    let mut start = 0;
    for tick in 1..=stream.len() {
        let u_mask = alphabet.uncontrollable_mask();
        if tick == stream.len() || stream[tick].1.restrict(u_mask) != stream[start].1.restrict(u_mask) {
            report.segments.push((start, tick));
            start = tick;
        }
    }
    report.unsatisfied_segments = report
        .segments
        .iter()
        .enumerate()
        .filter(|(_, &(s, e))| !accepting[s..e].contains(&true))
        .map(|(i, _)| i)
        .collect();
    report.final_window_accepting = accepting[accepting.len().saturating_sub(final_window)..].contains(&true);
    report
}

/// Letters seen by the task planner, one per planner tick.
pub fn planner_stream(trace: &Trace) -> Vec<(Valuation, Valuation)> {
    trace.records.iter().filter(|r| r.planner_tick).map(|r| (r.sigma_c, r.sigma_u)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierMin {
    pub name: String,
    pub min: f64,
    pub time: f64,
}

/// Minimum of each static barrier column, then of the reach barrier (over
/// samples where one is active) under the name `reach`.
pub fn check_barriers(trace: &Trace) -> Vec<BarrierMin> {
    let mut out: Vec<BarrierMin> =
        trace.barrier_names.iter().map(|n| BarrierMin { name: n.clone(), min: f64::INFINITY, time: f64::NAN }).collect();
    let mut reach = BarrierMin { name: "reach".to_string(), min: f64::INFINITY, time: f64::NAN };
    for r in &trace.records {
        for (m, &b) in out.iter_mut().zip(&r.barriers) {
            if b < m.min {
                m.min = b;
                m.time = r.t;
            }
        }
        if r.reach_value < reach.min {
            reach.min = r.reach_value;
            reach.time = r.t;
        }
    }
    out.push(reach);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recovery {
    pub disturbance: f64,
    /// First time after the disturbance with `V < threshold`.
    pub recovered_at: Option<f64>,
}

pub fn check_clf_recovery(trace: &Trace, threshold: f64, disturbances: &[f64]) -> Vec<Recovery> {
    disturbances
        .iter()
        .map(|&t0| Recovery {
            disturbance: t0,
            recovered_at: trace.records.iter().find(|r| r.t > t0 + TIME_TOL && r.clf_value < threshold).map(|r| r.t),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorConfig {
    pub barrier_tolerance: f64,
    pub clf_threshold: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { barrier_tolerance: DEFAULT_BARRIER_TOLERANCE, clf_threshold: DEFAULT_CLF_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub records: usize,
    pub duration: f64,
    pub run: RunReport,
    pub reach: Vec<ReachVerdict>,
    pub barriers: Vec<BarrierMin>,
    pub recoveries: Vec<Recovery>,
    pub fallback_ticks: usize,
    pub config: MonitorConfig,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.run.proxy_holds()
            && self.reach.iter().all(|v| v.outcome != ReachOutcome::Violated)
            && self.barriers.iter().all(|b| !(b.min < -self.config.barrier_tolerance))
    }

    /// `key: value` lines, one fact per line, ending with `verdict`.
    pub fn render(&self, trace: &Trace) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "records: {}", self.records);
        let _ = writeln!(out, "duration_s: {}", self.duration);
        let status = match self.run.status {
            RunStatus::NoViolation => "no-violation".to_string(),
            RunStatus::NotOneHot { tick } => format!("not-one-hot at planner tick {tick}"),
            RunStatus::ViolatedAt { tick } => format!("violated at planner tick {tick}"),
        };
        let _ = writeln!(out, "run_status: {status}");
        let _ = writeln!(out, "planner_ticks: {}", self.run.ticks);
        let _ = writeln!(out, "accepting_ticks: {}", self.run.accepting_ticks);
        let _ = writeln!(
            out,
            "acceptance_segments: {}/{}",
            self.run.segments.len() - self.run.unsatisfied_segments.len(),
            self.run.segments.len()
        );
        let _ = writeln!(out, "acceptance_final_window: {} ticks, {}", self.run.final_window, if self.run.final_window_accepting { "visited" } else { "missed" });
        for (i, v) in self.reach.iter().enumerate() {
            let deadline = v.deadline.map_or("none".to_string(), |d| d.to_string());
            let at = v.check.time.map_or("none".to_string(), |t| t.to_string());
            let _ = writeln!(
                out,
                "reach[{i}]: {} {} start={} deadline={deadline} at={at} margin={}",
                trace.alphabet.name(v.atom),
                v.outcome.as_str(),
                v.start,
                v.check.margin
            );
        }
        for b in &self.barriers {
            let _ = writeln!(out, "barrier_min[{}]: {} at={}", b.name, b.min, b.time);
        }
        for (i, r) in self.recoveries.iter().enumerate() {
            let after = r.recovered_at.map_or("never".to_string(), |t| (t - r.disturbance).to_string());
            let _ = writeln!(out, "clf_recovery[{i}]: disturbance={} recovered_after={after}", r.disturbance);
        }
        let _ = writeln!(out, "fallback_ticks: {}", self.fallback_ticks);
        let _ = writeln!(out, "verdict: {}", if self.passed() { "pass" } else { "fail" });
        out
    }
}

pub fn reach_goals(scenario: &Scenario) -> Vec<ReachGoal> {
    scenario.reach_tasks().map(|(atom, t)| ReachGoal { atom, target: t.target, epsilon: t.epsilon }).collect()
}

/// Impulse times of the scenario (scripted and seeded).
pub fn impulse_times(scenario: &Scenario) -> Vec<f64> {
    scenario
        .disturbances
        .iter()
        .filter_map(|d| match d {
            Disturbance::Impulse { t, .. } | Disturbance::RandomImpulse { t, .. } => Some(*t),
            Disturbance::Hold { .. } => None,
        })
        .collect()
}

/// Every check of a full scenario run. Fails if the trace stops short of
/// the scenario duration.
pub fn monitor(trace: &Trace, scenario: &Scenario, config: MonitorConfig) -> Result<MonitorReport, MonitorError> {
    let expected = scenario.total_ticks() as usize;
    if trace.records.len() < expected {
        let end = trace.records.last().map_or(0.0, |r| r.t);
        return Err(MonitorError::Truncated { end, expected: scenario.duration });
    }
    Ok(MonitorReport {
        records: trace.records.len(),
        duration: trace.duration(),
        run: check_run(&scenario.automaton, &planner_stream(trace)),
        reach: check_reach_tasks(trace, &reach_goals(scenario)),
        barriers: check_barriers(trace),
        recoveries: check_clf_recovery(trace, config.clf_threshold, &impulse_times(scenario)),
        fallback_ticks: trace.records.iter().filter(|r| r.fallback).count(),
        config,
    })
}
