//! Online task planner: keeps the automaton state, plans a shortest path to
//! an accepting cycle under the current environment valuation, and picks the
//! behavior to execute along that path.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::automaton::BuchiAutomaton;
use crate::formula::{Alphabet, Formula, Valuation};
use crate::graph;

/// A controllable valuation with at most one true atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Witness {
    /// Every controllable proposition false.
    Idle,
    /// Exactly this controllable atom true.
    Behavior(usize),
}

impl Witness {
    pub fn valuation(self) -> Valuation {
        match self {
            Witness::Idle => Valuation::EMPTY,
            Witness::Behavior(i) => Valuation::EMPTY.with(i, true),
        }
    }

    pub fn behavior(self) -> Option<usize> {
        match self {
            Witness::Idle => None,
            Witness::Behavior(i) => Some(i),
        }
    }

    pub fn render(self, alphabet: &Alphabet) -> String {
        match self {
            Witness::Idle => "-".to_string(),
            Witness::Behavior(i) => alphabet.name(i).to_string(),
        }
    }
}

/// All-false first, then each controllable atom in declaration order.
pub fn candidates(alphabet: &Alphabet) -> Vec<Witness> {
    std::iter::once(Witness::Idle).chain(alphabet.controllable().map(Witness::Behavior)).collect()
}

fn letter(witness: Witness, sigma_u: Valuation, alphabet: &Alphabet) -> Valuation {
    witness.valuation().union(sigma_u.restrict(alphabet.uncontrollable_mask()))
}

/// Preferred controllable valuation satisfying `guard` under `sigma_u`.
///
/// The all-false valuation wins whenever it satisfies the guard (least
/// action); otherwise the lowest-indexed satisfying one-hot valuation. `None`
/// when no candidate satisfies the guard.
pub fn extract_behavior(guard: &Formula, sigma_u: Valuation, alphabet: &Alphabet) -> Option<Witness> {
    candidates(alphabet).into_iter().find(|&w| guard.holds(letter(w, sigma_u, alphabet)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunedEdge {
    pub target: usize,
    /// Satisfying candidates in preference order; never empty.
    pub witnesses: Vec<Witness>,
}

/// Automaton transition graph restricted to one environment valuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunedGraph {
    pub sigma_u: Valuation,
    pub edges: Vec<Vec<PrunedEdge>>,
}

impl PrunedGraph {
    pub fn num_states(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&PrunedEdge> {
        self.edges[from].iter().find(|e| e.target == to)
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        self.edges.iter().map(|out| out.iter().map(|e| e.target).collect()).collect()
    }
}

pub fn build_graph(a: &BuchiAutomaton, sigma_u: Valuation) -> PrunedGraph {
    let alphabet = a.alphabet();
    let cands = candidates(alphabet);
    let sigma_u = sigma_u.restrict(alphabet.uncontrollable_mask());
    let edges = (0..a.num_states())
        .map(|q| {
            let mut by_target: BTreeMap<usize, Vec<Witness>> = BTreeMap::new();
            for t in a.transitions(q) {
                for &w in &cands {
                    if t.guard.holds(letter(w, sigma_u, alphabet)) {
                        let ws = by_target.entry(t.target).or_default();
                        if !ws.contains(&w) {
                            ws.push(w);
                        }
                    }
                }
            }
            by_target
                .into_iter()
                .map(|(target, mut witnesses)| {
                    witnesses.sort();
                    PrunedEdge { target, witnesses }
                })
                .collect()
        })
        .collect();
    PrunedGraph { sigma_u, edges }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlannerError {
    #[error("no transition from state {state} is enabled by {letter}")]
    NoEnabledTransition { state: usize, letter: String },
    #[error("no accepting cycle is reachable from state {state} under {sigma_u}")]
    NoAcceptingPath { state: usize, sigma_u: String },
}

/// Shortest path from `start` to the nearest accepting state lying on a cycle
/// of `g`, followed by the first transition of a shortest cycle through that
/// state. Returns `None` if no such state is reachable.
pub fn shortest_accepting_path(g: &PrunedGraph, start: usize, accepting: &[bool]) -> Option<Vec<usize>> {
    let adj = g.adjacency();
    let comps = graph::strongly_connected(&adj);
    let mut path = graph::bfs_path(&adj, start, |q| accepting[q] && comps.on_cycle(q))?;
    let goal = *path.last().expect("bfs path is nonempty");
    let hold = adj[goal]
        .iter()
        .copied()
        .filter_map(|w| {
            let back = if w == goal { 0 } else { graph::bfs_distances(&adj, w)[goal] };
            (back != usize::MAX).then_some((back, w))
        })
        .min()
        .map(|(_, w)| w)
        .expect("goal lies on a cycle");
    path.push(hold);
    Some(path)
}

/// Output of one planner step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BehaviorChoice {
    /// Controllable atom to realize, or `None` for "all controllable false".
    pub behavior: Option<usize>,
    pub automaton_state: usize,
    pub replanned: bool,
    /// The sensed valuation enabled no transition and the planned valuation
    /// was substituted.
    pub recovered: bool,
}

#[derive(Debug, Clone)]
pub struct TaskPlanner {
    automaton: BuchiAutomaton,
    state: usize,
    previous: usize,
    path: Vec<usize>,
    witnesses: Vec<Witness>,
    progress: usize,
    last_sigma_u: Option<Valuation>,
    graph: Option<PrunedGraph>,
    /// Distance from each state to an accepting cycle in `graph`.
    goal_distance: Vec<usize>,
    step: u64,
}

impl TaskPlanner {
    pub fn new(automaton: BuchiAutomaton) -> Self {
        let initial = automaton.initial();
        TaskPlanner {
            automaton,
            state: initial,
            previous: initial,
            path: Vec::new(),
            witnesses: Vec::new(),
            progress: 0,
            last_sigma_u: None,
            graph: None,
            goal_distance: Vec::new(),
            step: 0,
        }
    }

    pub fn automaton(&self) -> &BuchiAutomaton {
        &self.automaton
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn path(&self) -> &[usize] {
        &self.path
    }

    pub fn progress(&self) -> usize {
        self.progress
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// The controllable valuation planned for the current transition.
    pub fn planned_witness(&self) -> Option<Witness> {
        self.witnesses.get(self.progress).copied()
    }

    /// Successor of `from` under `letter`: the planned one if enabled, else
    /// the one closest to an accepting cycle (lowest index on ties). Tableau
    /// automata guess obligations nondeterministically, and a careless pick
    /// commits the robot to behaviors the environment never asked for.
    fn advance(&self, from: usize, letter: Valuation) -> Option<usize> {
        let planned = (self.path.get(self.progress) == Some(&from)).then(|| self.path.get(self.progress + 1)).flatten();
        let enabled: Vec<usize> = self.automaton.successors(from, letter).collect();
        if let Some(&p) = planned {
            if enabled.contains(&p) {
                return Some(p);
            }
        }
        enabled.into_iter().min_by_key(|&q| (self.goal_distance.get(q).copied().unwrap_or(usize::MAX), q))
    }

    fn ensure_graph(&mut self, sigma_u: Valuation) {
        if self.graph.as_ref().is_none_or(|g| g.sigma_u != sigma_u) {
            let g = build_graph(&self.automaton, sigma_u);
            let adj = g.adjacency();
            let comps = graph::strongly_connected(&adj);
            let goals: Vec<bool> = (0..adj.len()).map(|q| self.automaton.is_accepting(q) && comps.on_cycle(q)).collect();
            self.goal_distance = graph::distances_to(&adj, &goals);
            self.graph = Some(g);
        }
    }

    fn replan(&mut self, sigma_u: Valuation) -> Result<(), PlannerError> {
        self.ensure_graph(sigma_u);
        let g = self.graph.as_ref().expect("graph built above");
        let path = shortest_accepting_path(g, self.state, self.automaton.accepting()).ok_or_else(|| {
            PlannerError::NoAcceptingPath {
                state: self.state,
                sigma_u: sigma_u.render(self.automaton.alphabet(), self.automaton.alphabet().uncontrollable_mask()),
            }
        })?;
        self.witnesses = path
            .windows(2)
            .map(|w| g.edge(w[0], w[1]).expect("path follows graph edges").witnesses[0])
            .collect();
        self.path = path;
        self.progress = 0;
        Ok(())
    }

    /// One planner tick with sensed controllable and environment valuations.
    pub fn step(&mut self, sigma_c: Valuation, sigma_u: Valuation) -> Result<BehaviorChoice, PlannerError> {
        let sigma_u = sigma_u.restrict(self.automaton.alphabet().uncontrollable_mask());
        self.ensure_graph(sigma_u);
        let alphabet = self.automaton.alphabet();
        let sensed = sigma_c.restrict(alphabet.controllable_mask()).union(sigma_u);
        let mut recovered = false;
        let next = match self.advance(self.previous, sensed) {
            Some(q) => q,
            None => {
                let fallback = self.planned_witness().map(|w| letter(w, sigma_u, alphabet));
                match fallback.and_then(|l| self.advance(self.previous, l)) {
                    Some(q) => {
                        recovered = true;
                        q
                    }
                    None => {
                        return Err(PlannerError::NoEnabledTransition {
                            state: self.previous,
                            letter: sensed.render(alphabet, alphabet.full_mask()),
                        })
                    }
                }
            }
        };
        self.state = next;

        let env_changed = self.last_sigma_u != Some(sigma_u);
        let mut replanned = false;
        if self.step == 0 || env_changed || recovered {
            self.replan(sigma_u)?;
            replanned = true;
        } else if self.state != self.previous {
            if self.path.get(self.progress + 1) == Some(&self.state) {
                self.progress += 1;
            } else {
                self.replan(sigma_u)?;
                replanned = true;
            }
        }
        if self.progress + 1 >= self.path.len() {
            self.replan(sigma_u)?;
            replanned = true;
        }

        self.last_sigma_u = Some(sigma_u);
        self.previous = self.state;
        self.step += 1;
        Ok(BehaviorChoice {
            behavior: self.planned_witness().and_then(Witness::behavior),
            automaton_state: self.state,
            replanned,
            recovered,
        })
    }

    /// Line-oriented listing of the pruned graph and the current plan.
    pub fn dump(&self) -> String {
        let alphabet = self.automaton.alphabet();
        let mut out = String::new();
        let _ = writeln!(out, "state {} step {} progress {}", self.state, self.step, self.progress);
        if let Some(g) = &self.graph {
            let _ = writeln!(out, "sigma_u {}", g.sigma_u.render(alphabet, alphabet.uncontrollable_mask()));
            for (q, out_edges) in g.edges.iter().enumerate() {
                for e in out_edges {
                    let ws: Vec<String> = e.witnesses.iter().map(|w| w.render(alphabet)).collect();
                    let mark = if self.automaton.is_accepting(e.target) { " *" } else { "" };
                    let _ = writeln!(out, "edge {q} -> {}{mark} [{}]", e.target, ws.join(","));
                }
            }
        }
        let path: Vec<String> = self.path.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "path {}", path.join(" "));
        let ws: Vec<String> = self.witnesses.iter().map(|w| w.render(alphabet)).collect();
        let _ = writeln!(out, "plan {}", ws.join(" "));
        out
    }
}
