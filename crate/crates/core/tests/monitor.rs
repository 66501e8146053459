mod common;

use proptest::prelude::*;
use rand::Rng;
use rtlplan::dslib::Vec3;
use rtlplan::formula::{Alphabet, Valuation};
use rtlplan::monitor::{
    check_barriers, check_clf_recovery, check_reach, check_run, monitor, planner_stream, MonitorConfig, MonitorError, ReachOutcome, RunStatus,
};
use rtlplan::qpsolver::QpStatus;
use rtlplan::sim::run;
use rtlplan::taskplanner::TaskPlanner;
use rtlplan::trace::{Trace, TraceRecord};

use common::{random_automaton, rng, scenario};

fn record(t: f64, x: Vec3) -> TraceRecord {
    TraceRecord {
        t,
        x,
        xdot_ref: Vec3::zeros(),
        sigma_c: Valuation::EMPTY,
        sigma_u: Valuation::EMPTY,
        state: 0,
        behavior: None,
        planner_tick: true,
        replanned: false,
        barriers: vec![],
        reach_value: f64::NAN,
        reach_deadline: f64::NAN,
        clf_value: f64::NAN,
        eta: 0.0,
        status: QpStatus::Optimal,
        fallback: false,
        beta: 1.0,
    }
}

fn path_trace(points: &[Vec3]) -> Trace {
    let mut trace = Trace::new(Alphabet::new(&["s"], &["h"]).unwrap(), vec![]);
    trace.records = points.iter().enumerate().map(|(k, &x)| record(k as f64 * 0.01, x)).collect();
    trace
}

#[test]
fn passing_through_the_target_gives_full_margin() {
    let target = Vec3::new(0.5, 0.0, 0.0);
    let points: Vec<Vec3> = (0..=100).map(|k| Vec3::new(k as f64 * 0.01, 0.0, 0.0)).collect();
    let c = check_reach(&path_trace(&points), &target, 0.05, 0.0, 1.0).unwrap();
    assert!(c.satisfied);
    assert_eq!(c.time, Some(0.45));
    assert!((c.margin - 0.05).abs() < 1e-12);
}

#[test]
fn standing_off_by_two_epsilon_is_violated() {
    let target = Vec3::zeros();
    let c = check_reach(&path_trace(&[Vec3::new(0.1, 0.0, 0.0); 20]), &target, 0.05, 0.0, 0.19).unwrap();
    assert!(!c.satisfied);
    assert!((c.margin + 0.05).abs() < 1e-12);
}

#[test]
fn window_must_lie_in_the_trace() {
    let trace = path_trace(&[Vec3::zeros(); 10]);
    assert!(matches!(check_reach(&trace, &Vec3::zeros(), 0.05, 0.0, 0.5), Err(MonitorError::WindowOutsideTrace { .. })));
    assert!(check_reach(&trace, &Vec3::zeros(), 0.05, 0.0, 0.09).is_ok());
}

proptest! {
    #[test]
    fn reach_check_agrees_with_a_second_scan(seed in any::<u64>(), eps in 0.01f64..0.3, a in 0usize..40, len in 1usize..40) {
        let mut r = rng(seed);
        let points: Vec<Vec3> = (0..80).map(|_| Vec3::new(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5), 0.0)).collect();
        let trace = path_trace(&points);
        let b = (a + len).min(79);
        let target = Vec3::new(0.1, -0.1, 0.0);
        let c = check_reach(&trace, &target, eps, a as f64 * 0.01, b as f64 * 0.01).unwrap();
        // index-based scan, independent of the time filter
        let dists: Vec<f64> = points[a..=b].iter().map(|p| ((p.x - 0.1).powi(2) + (p.y + 0.1).powi(2)).sqrt()).collect();
        let first = dists.iter().position(|&d| d <= eps);
        prop_assert_eq!(c.satisfied, first.is_some());
        prop_assert_eq!(c.time, first.map(|i| (a + i) as f64 * 0.01));
        let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!((c.margin - (eps - min)).abs() < 1e-12);
    }
}

#[test]
fn stir_stream_has_no_violation_and_accepts_while_stirring() {
    let sc = scenario("stir");
    let (trace, _) = run(&sc, 0).unwrap();
    let stream = planner_stream(&trace);
    let report = check_run(&sc.automaton, &stream);
    assert_eq!(report.status, RunStatus::NoViolation);
    assert!(report.proxy_holds());
    // the self-loop at the accepting state is taken on every tick before the toggle
    assert!(report.accepting_ticks >= 1000);
}

#[test]
fn simultaneous_behaviors_are_flagged_before_replay() {
    let sc = scenario("stir");
    let a = sc.alphabet();
    let (s, p, h) = (a.lookup("s").unwrap(), a.lookup("p").unwrap(), a.lookup("h").unwrap());
    let stream = vec![(Valuation::from_true([s]), Valuation::from_true([h])), (Valuation::from_true([s, p]), Valuation::from_true([h]))];
    assert_eq!(check_run(&sc.automaton, &stream).status, RunStatus::NotOneHot { tick: 1 });
}

#[test]
fn stream_leaving_the_language_is_a_violation() {
    let sc = scenario("stir");
    let a = sc.alphabet();
    let (p, h) = (a.lookup("p").unwrap(), a.lookup("h").unwrap());
    // hot but pressing instead of stirring
    let stream = vec![(Valuation::from_true([p]), Valuation::from_true([h]))];
    assert_eq!(check_run(&sc.automaton, &stream).status, RunStatus::ViolatedAt { tick: 0 });
}

#[test]
fn planner_streams_never_violate() {
    let mut r = rng(41);
    let alphabet = Alphabet::new(&["a", "b"], &["u", "v"]).unwrap();
    let mut checked = 0;
    for _ in 0..300 {
        let states = r.gen_range(1..=6);
        let automaton = random_automaton(&mut r, states, &alphabet);
        let mut planner = TaskPlanner::new(automaton.clone());
        let mut sensed = Valuation::EMPTY;
        let mut stream = Vec::new();
        let mut sigma_u = Valuation::EMPTY;
        for _ in 0..40 {
            if r.gen_bool(0.2) {
                sigma_u = Valuation(r.gen_range(0..4) << 2);
            }
            match planner.step(sensed, sigma_u) {
                Ok(choice) if !choice.recovered => {
                    stream.push((sensed, sigma_u));
                    sensed = choice.behavior.map_or(Valuation::EMPTY, |b| Valuation::from_true([b]));
                }
                _ => break,
            }
        }
        let report = check_run(&automaton, &stream);
        assert_eq!(report.status, RunStatus::NoViolation);
        checked += stream.len();
    }
    assert!(checked > 1000, "only {checked} ticks exercised");
}

#[test]
fn barrier_minima_and_recovery() {
    let mut trace = path_trace(&[Vec3::zeros(); 5]);
    trace.barrier_names = vec!["floor".into()];
    for (k, r) in trace.records.iter_mut().enumerate() {
        r.barriers = vec![[0.3, 0.1, -0.2, 0.4, 0.5][k]];
        r.clf_value = [0.0, 0.5, 0.01, 1e-4, 1e-5][k];
        r.reach_value = if k == 3 { -1e-7 } else { f64::NAN };
    }
    let mins = check_barriers(&trace);
    assert_eq!((mins[0].name.as_str(), mins[0].min, mins[0].time), ("floor", -0.2, 0.02));
    assert_eq!((mins[1].name.as_str(), mins[1].min), ("reach", -1e-7));
    let rec = check_clf_recovery(&trace, 1e-3, &[0.01]);
    assert_eq!(rec[0].recovered_at, Some(0.03));
    assert_eq!(check_clf_recovery(&trace, 1e-6, &[0.01])[0].recovered_at, None);
}

#[test]
fn bundled_scenarios_pass_and_reports_are_pure() {
    for name in ["stir", "whiteboard"] {
        let sc = scenario(name);
        let (trace, _) = run(&sc, 0).unwrap();
        let a = monitor(&trace, &sc, MonitorConfig::default()).unwrap();
        let b = monitor(&trace, &sc, MonitorConfig::default()).unwrap();
        assert_eq!(a.render(&trace), b.render(&trace));
        assert!(a.passed(), "{name}:\n{}", a.render(&trace));
        assert!(a.reach.iter().all(|v| v.outcome == ReachOutcome::Satisfied && v.check.margin > 0.0));
        assert!(a.render(&trace).ends_with("verdict: pass\n"));
    }
}

#[test]
fn truncated_trace_is_rejected() {
    let sc = scenario("stir");
    let (mut trace, _) = run(&sc, 0).unwrap();
    trace.records.truncate(4000);
    assert!(matches!(monitor(&trace, &sc, MonitorConfig::default()), Err(MonitorError::Truncated { .. })));
}
