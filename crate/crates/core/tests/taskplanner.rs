mod common;

use std::collections::BTreeSet;

use rand::Rng;
use rtlplan::automaton::BuchiAutomaton;
use rtlplan::formula::{Alphabet, Valuation};
use rtlplan::taskplanner::{build_graph, shortest_accepting_path, TaskPlanner, Witness};

use common::{brute_force_edges, random_automaton, rng};

fn alphabet(c: usize, u: usize) -> Alphabet {
    let cs: Vec<String> = (0..c).map(|i| format!("c{i}")).collect();
    let us: Vec<String> = (0..u).map(|i| format!("u{i}")).collect();
    Alphabet::new(&cs, &us).unwrap()
}

fn random_sigma_u(r: &mut impl Rng, a: &Alphabet) -> Valuation {
    Valuation::from_true(a.uncontrollable().filter(|_| r.gen_bool(0.5)))
}

#[test]
fn pruned_graph_matches_enumeration() {
    let mut r = rng(21);
    for _ in 0..300 {
        let (nc, nu) = (r.gen_range(1..=2), r.gen_range(0..=2));
        let sigma = alphabet(nc, nu);
        let states = r.gen_range(1..=6);
        let a = random_automaton(&mut r, states, &sigma);
        let su = random_sigma_u(&mut r, &sigma);
        let g = build_graph(&a, su);
        let mut got = BTreeSet::new();
        for (q, out) in g.edges.iter().enumerate() {
            for e in out {
                assert!(!e.witnesses.is_empty());
                for w in &e.witnesses {
                    got.insert((q, e.target, w.valuation()));
                }
            }
        }
        assert_eq!(got, brute_force_edges(&a, su));
    }
}

/// All-pairs distances by Floyd-Warshall, independent of the BFS helpers.
fn distances(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, out) in adj.iter().enumerate() {
        d[i][i] = 0;
        for &j in out {
            d[i][j] = d[i][j].min(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
            }
        }
    }
    d
}

#[test]
fn planned_paths_are_shortest() {
    let mut r = rng(22);
    let inf = usize::MAX / 4;
    for _ in 0..300 {
        let sigma = alphabet(2, 2);
        let states = r.gen_range(1..=6);
        let a = random_automaton(&mut r, states, &sigma);
        let g = build_graph(&a, random_sigma_u(&mut r, &sigma));
        let adj = g.adjacency();
        let d = distances(&adj);
        let n = adj.len();
        // q is on a cycle iff some successor reaches it back
        let cyclic: Vec<bool> = (0..n).map(|q| adj[q].iter().any(|&w| d[w][q] < inf)).collect();
        let goals: Vec<usize> = (0..n).filter(|&q| a.is_accepting(q) && cyclic[q]).collect();
        let best = goals.iter().map(|&q| d[0][q]).min().filter(|&x| x < inf);
        match shortest_accepting_path(&g, 0, a.accepting()) {
            None => assert_eq!(best, None),
            Some(path) => {
                assert_eq!(Some(path.len() - 2), best);
                for w in path.windows(2) {
                    assert!(g.edge(w[0], w[1]).is_some());
                }
                let goal = path[path.len() - 2];
                let hold = path[path.len() - 1];
                assert!(goals.contains(&goal));
                assert!(hold == goal || d[hold][goal] < inf);
            }
        }
    }
}

#[test]
fn identical_inputs_give_identical_plans() {
    let mut r = rng(23);
    let sigma = alphabet(2, 2);
    for _ in 0..50 {
        let a = random_automaton(&mut r, 5, &sigma);
        let inputs: Vec<(Valuation, Valuation)> = (0..40)
            .map(|_| {
                let w = [Witness::Idle, Witness::Behavior(0), Witness::Behavior(1)][r.gen_range(0..3)];
                (w.valuation(), random_sigma_u(&mut r, &sigma))
            })
            .collect();
        let run = |a: &BuchiAutomaton| {
            let mut p = TaskPlanner::new(a.clone());
            inputs.iter().map(|&(c, u)| p.step(c, u)).collect::<Vec<_>>()
        };
        assert_eq!(run(&a), run(&a));
    }
}
