//! Seeded generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rtlplan::automaton::BuchiAutomaton;
use rtlplan::dslib::Vec3;
use rtlplan::formula::{Formula, LassoWord, Valuation};
use rtlplan::motionplanner::{Behavior, GammaProfile, MotionConfig, MotionPlanner, ReachTask};
use rtlplan::qpsolver::QpProblem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random formula over atoms `0..atoms` with operator depth at most `depth`.
pub fn random_formula(rng: &mut impl Rng, atoms: usize, depth: usize) -> Formula {
    if depth == 0 || rng.gen_bool(0.2) {
        return if rng.gen_bool(0.1) { Formula::True } else { Formula::Atom(rng.gen_range(0..atoms)) };
    }
    let sub = |rng: &mut _| random_formula(rng, atoms, depth - 1);
    match rng.gen_range(0..8) {
        0 => Formula::not(sub(rng)),
        1 => Formula::and(sub(rng), sub(rng)),
        2 => Formula::or(sub(rng), sub(rng)),
        3 => Formula::until(sub(rng), sub(rng)),
        4 => Formula::implies(sub(rng), sub(rng)),
        5 => Formula::eventually(sub(rng)),
        6 => Formula::globally(sub(rng)),
        _ => Formula::globally(Formula::eventually(sub(rng))),
    }
}

/// Random propositional formula over the given atom ids.
pub fn random_guard(rng: &mut impl Rng, atoms: &[usize], depth: usize) -> Formula {
    if depth == 0 || rng.gen_bool(0.3) {
        return match rng.gen_range(0..10) {
            0 => Formula::True,
            1 => Formula::falsity(),
            _ => Formula::Atom(atoms[rng.gen_range(0..atoms.len())]),
        };
    }
    match rng.gen_range(0..3) {
        0 => Formula::not(random_guard(rng, atoms, depth - 1)),
        1 => Formula::and(random_guard(rng, atoms, depth - 1), random_guard(rng, atoms, depth - 1)),
        _ => Formula::or(random_guard(rng, atoms, depth - 1), random_guard(rng, atoms, depth - 1)),
    }
}

pub fn random_word(rng: &mut impl Rng, atoms: usize, max_prefix: usize, max_cycle: usize) -> LassoWord {
    let letter = |rng: &mut _| Valuation(Rng::gen_range(rng, 0..1u64 << atoms));
    let prefix = (0..rng.gen_range(0..=max_prefix)).map(|_| letter(rng)).collect();
    let cycle = (0..rng.gen_range(1..=max_cycle)).map(|_| letter(rng)).collect();
    LassoWord::new(prefix, cycle)
}

/// Random automaton with `states` states and up to three edges per state.
pub fn random_automaton(
    rng: &mut impl Rng,
    states: usize,
    alphabet: &rtlplan::formula::Alphabet,
) -> rtlplan::automaton::BuchiAutomaton {
    use rtlplan::automaton::{BuchiAutomaton, Transition};
    let atoms: Vec<usize> = (0..alphabet.len()).collect();
    let transitions = (0..states)
        .map(|_| {
            (0..rng.gen_range(0..=3))
                .map(|_| Transition { guard: random_guard(rng, &atoms, 3), target: rng.gen_range(0..states) })
                .collect()
        })
        .collect();
    let accepting = (0..states).map(|_| rng.gen_bool(0.4)).collect();
    BuchiAutomaton::new(alphabet.clone(), 0, transitions, accepting).unwrap()
}

/// A bundled scenario from the workspace `scenarios/` directory.
pub fn scenario(name: &str) -> rtlplan::scenario::Scenario {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scn"));
    rtlplan::scenario::Scenario::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Enumerates every active set, solves its KKT system and keeps the one that
/// is primal and dual feasible. Returns None if no candidate is feasible.
pub fn qp_oracle(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let n = p.dimension();
    let m = p.num_constraints();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let set: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > n {
            continue;
        }
        let k = set.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        for i in 0..n {
            rhs[i] = -p.linear[i];
        }
        for (c, &i) in set.iter().enumerate() {
            for r in 0..n {
                kkt[(r, n + c)] = -p.a[(i, r)];
                kkt[(n + c, r)] = p.a[(i, r)];
            }
            rhs[n + c] = p.b[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        let u = sol.rows(n, k);
        if u.iter().any(|&x| x < -1e-9) || p.slacks(&z).iter().any(|&s| s < -1e-9) {
            continue;
        }
        let f = p.objective(&z);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((z, f));
        }
    }
    best
}

pub fn random_qp(r: &mut impl Rng, n: usize, m: usize, feasible: bool) -> QpProblem {
    let mfac = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let hessian = mfac.transpose() * &mfac + DMatrix::identity(n, n) * 0.1;
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    let linear = DVector::from_fn(n, |_, _| r.gen_range(-3.0..3.0));
    let a = DMatrix::from_fn(m, n, |_, _| r.gen_range(-1.0..1.0));
    let b = if feasible {
        let z0 = DVector::from_fn(n, |_, _| r.gen_range(-2.0..2.0));
        &a * z0 - DVector::from_fn(m, |_, _| r.gen_range(0.0..1.0))
    } else {
        DVector::from_fn(m, |_, _| r.gen_range(-2.0..2.0))
    };
    QpProblem::new(hessian, linear, a, b)
}

/// Edges by enumerating every controllable valuation and keeping those with
/// at most one true bit.
pub fn brute_force_edges(a: &BuchiAutomaton, sigma_u: Valuation) -> BTreeSet<(usize, usize, Valuation)> {
    let alphabet = a.alphabet();
    let c: Vec<usize> = alphabet.controllable().collect();
    let mut edges = BTreeSet::new();
    for bits in 0u32..1 << c.len() {
        if bits.count_ones() > 1 {
            continue;
        }
        let pc = Valuation::from_true(c.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, &a)| a));
        let letter = pc.union(sigma_u);
        for q in 0..a.num_states() {
            for t in a.transitions(q) {
                if t.guard.holds(letter) {
                    edges.insert((q, t.target, pc));
                }
            }
        }
    }
    edges
}

pub const DT: f64 = 1e-3;

pub fn reach_planner(target: Vec3, profile: GammaProfile) -> MotionPlanner {
    let task = ReachTask { target, epsilon: 0.05, v_u: 0.25, profile };
    MotionPlanner::new(MotionConfig::default(), vec![Some(Behavior::Reach(task))]).unwrap()
}

/// Runs a reach task from `x0`; returns (first time within ε, min B, deadline).
pub fn run_reach(x0: Vec3, target: Vec3, profile: GammaProfile) -> (Option<f64>, f64, f64) {
    let mut planner = reach_planner(target, profile);
    let mut x = x0;
    planner.switch_to(Some(0), &x, 0.0, DT).unwrap();
    let mut reached = None;
    let mut min_b = f64::INFINITY;
    let mut deadline = f64::NAN;
    for k in 0..12_000 {
        let t = k as f64 * DT;
        let (next, sample) = planner.tick(&x, t, DT, false).unwrap();
        if sample.reach_value.is_finite() {
            min_b = min_b.min(sample.reach_value);
            deadline = sample.reach_deadline;
        }
        if reached.is_none() && (x - target).norm() <= 0.05 {
            reached = Some(t);
        }
        if t > deadline + 0.5 {
            break;
        }
        x = next;
    }
    (reached, min_b, deadline)
}
