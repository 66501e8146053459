use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use rtlplan::qpsolver::{solve, QpProblem, QpSolver, QpStatus};

mod common;

use common::{qp_oracle, random_qp};

fn kkt_residual(p: &QpProblem, z: &DVector<f64>, u: &DVector<f64>) -> f64 {
    (&p.hessian * z + &p.linear - p.a.transpose() * u).amax()
}

#[test]
fn matches_active_set_enumeration() {
    let mut r = common::rng(11);
    let mut infeasible = 0;
    for _ in 0..600 {
        let n = r.gen_range(1..=4);
        let m = r.gen_range(0..=7);
        let feasible = r.gen_bool(0.6);
        let p = random_qp(&mut r, n, m, feasible);
        let s = solve(&p).unwrap();
        match qp_oracle(&p) {
            Some((z, f)) => {
                assert_eq!(s.status, QpStatus::Optimal, "{p:?}");
                assert!((&s.z - &z).amax() < 1e-6, "solver {} oracle {}", s.z, z);
                assert!((p.objective(&s.z) - f).abs() < 1e-7 * (1.0 + f.abs()));
            }
            None => {
                infeasible += 1;
                assert_eq!(s.status, QpStatus::Infeasible, "{p:?} gave {s:?}");
            }
        }
    }
    assert!(infeasible > 10, "too few infeasible samples: {infeasible}");
}

#[test]
fn warm_start_agrees_with_cold_start_on_perturbed_sequences() {
    let mut r = common::rng(12);
    for _ in 0..100 {
        let mut p = random_qp(&mut r, 4, 5, true);
        let mut solver = QpSolver::new();
        for _ in 0..20 {
            for v in p.b.iter_mut() {
                *v += r.gen_range(-0.05..0.05);
            }
            let warm = solver.solve(&p).unwrap();
            let cold = solve(&p).unwrap();
            assert_eq!(warm.status, cold.status);
            if cold.status == QpStatus::Optimal {
                assert!((&warm.z - &cold.z).amax() < 1e-8);
            }
        }
    }
}

proptest! {
    #[test]
    fn optimal_solutions_satisfy_kkt(seed in any::<u64>(), n in 1usize..=8, m in 0usize..=16) {
        let mut r = common::rng(seed);
        let p = random_qp(&mut r, n, m, true);
        let s = solve(&p).unwrap();
        prop_assert_eq!(s.status, QpStatus::Optimal);
        let slacks = p.slacks(&s.z);
        prop_assert!(slacks.iter().all(|&x| x > -1e-8), "violated: {}", slacks);
        prop_assert!(s.multipliers.iter().all(|&u| u >= -1e-10));
        prop_assert!(kkt_residual(&p, &s.z, &s.multipliers) < 1e-7);
        for i in 0..m {
            prop_assert!((s.multipliers[i] * slacks[i]).abs() < 1e-7, "complementarity at {}", i);
        }
    }

    #[test]
    fn cost_scaling_leaves_minimizer_unchanged(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut r = common::rng(seed);
        let p = random_qp(&mut r, 3, 4, true);
        let q = QpProblem::new(&p.hessian * scale, &p.linear * scale, p.a.clone(), p.b.clone());
        let (s, t) = (solve(&p).unwrap(), solve(&q).unwrap());
        prop_assert!((&s.z - &t.z).amax() < 1e-7);
    }

    #[test]
    fn tightening_never_lowers_the_optimum(seed in any::<u64>(), extra in 0.0f64..1.0) {
        let mut r = common::rng(seed);
        let p = random_qp(&mut r, 3, 4, true);
        let mut q = p.clone();
        q.b[0] += extra;
        let (s, t) = (solve(&p).unwrap(), solve(&q).unwrap());
        if t.status == QpStatus::Optimal {
            prop_assert!(p.objective(&t.z) >= p.objective(&s.z) - 1e-9);
        }
    }
}
