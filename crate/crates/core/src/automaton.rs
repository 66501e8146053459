//! Büchi automata over an [`Alphabet`], LTL translation and lasso acceptance.
//!
//! Translation runs a tableau expansion on the negation normal form of the
//! formula. Maximal propositional subformulas are kept whole and tabulated
//! over the formula's atoms, so guards are exact truth tables until the very
//! end, where they are rendered back into compact formulas.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::formula::{Alphabet, Formula, LassoWord, Valuation};
use crate::graph;
use crate::guard::{GuardTable, MAX_TABLE_ATOMS};

pub const DEFAULT_STATE_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub guard: Formula,
    pub target: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutomatonError {
    #[error("automaton has no states")]
    NoStates,
    #[error("state {0} is out of range")]
    StateOutOfRange(usize),
    #[error("guard on state {state} is not propositional")]
    TemporalGuard { state: usize },
    #[error("guard on state {state} mentions an atom outside the alphabet")]
    GuardOutsideAlphabet { state: usize },
    #[error("proposition `{0}` is not in the target alphabet")]
    MissingAtom(String),
    #[error("acceptance set {set} has {len} entries for {states} states")]
    AcceptanceSize { set: usize, len: usize, states: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranslateError {
    #[error("translation exceeded the state cap of {cap}")]
    Capacity { cap: usize },
    #[error("formula mentions {count} propositions; at most {MAX_TABLE_ATOMS} are supported")]
    TooManyAtoms { count: usize },
}

fn check_structure(alphabet: &Alphabet, initial: usize, transitions: &[Vec<Transition>]) -> Result<(), AutomatonError> {
    let n = transitions.len();
    if n == 0 {
        return Err(AutomatonError::NoStates);
    }
    if initial >= n {
        return Err(AutomatonError::StateOutOfRange(initial));
    }
    for (state, out) in transitions.iter().enumerate() {
        for t in out {
            if t.target >= n {
                return Err(AutomatonError::StateOutOfRange(t.target));
            }
            if !t.guard.is_propositional() {
                return Err(AutomatonError::TemporalGuard { state });
            }
            if t.guard.support() & !alphabet.full_mask() != 0 {
                return Err(AutomatonError::GuardOutsideAlphabet { state });
            }
        }
    }
    Ok(())
}

/// State-based Büchi automaton with propositional edge guards. Runs may be
/// nondeterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct BuchiAutomaton {
    alphabet: Alphabet,
    initial: usize,
    transitions: Vec<Vec<Transition>>,
    accepting: Vec<bool>,
}

impl BuchiAutomaton {
    pub fn new(
        alphabet: Alphabet,
        initial: usize,
        transitions: Vec<Vec<Transition>>,
        accepting: Vec<bool>,
    ) -> Result<Self, AutomatonError> {
        check_structure(&alphabet, initial, &transitions)?;
        if accepting.len() != transitions.len() {
            return Err(AutomatonError::AcceptanceSize { set: 0, len: accepting.len(), states: transitions.len() });
        }
        Ok(BuchiAutomaton { alphabet, initial, transitions, accepting })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn num_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn is_accepting(&self, state: usize) -> bool {
        self.accepting[state]
    }

    pub fn accepting(&self) -> &[bool] {
        &self.accepting
    }

    pub fn transitions(&self, state: usize) -> &[Transition] {
        &self.transitions[state]
    }

    pub fn edge_count(&self) -> usize {
        self.transitions.iter().map(Vec::len).sum()
    }

    /// Targets of the transitions from `state` enabled by `letter`, in edge order.
    pub fn successors(&self, state: usize, letter: Valuation) -> impl Iterator<Item = usize> + '_ {
        self.transitions[state].iter().filter(move |t| t.guard.holds(letter)).map(|t| t.target)
    }

    /// Whether some run over `w` visits an accepting state infinitely often.
    pub fn accepts_lasso(&self, w: &LassoWord) -> bool {
        lasso_accepts(self.initial, &self.transitions, &[&self.accepting], w)
    }

    /// The same automaton with atoms re-indexed against another alphabet,
    /// matching propositions by name.
    pub fn with_alphabet(&self, target: &Alphabet) -> Result<BuchiAutomaton, AutomatonError> {
        let map: Vec<usize> = self
            .alphabet
            .atoms()
            .iter()
            .map(|a| target.lookup(&a.name).ok_or_else(|| AutomatonError::MissingAtom(a.name.clone())))
            .collect::<Result<_, _>>()?;
        let transitions = self
            .transitions
            .iter()
            .map(|out| out.iter().map(|t| Transition { guard: remap(&t.guard, &map), target: t.target }).collect())
            .collect();
        BuchiAutomaton::new(target.clone(), self.initial, transitions, self.accepting.clone())
    }
}

fn remap(f: &Formula, map: &[usize]) -> Formula {
    use Formula::*;
    match f {
        True => True,
        Atom(i) => Atom(map[*i]),
        Not(g) => Formula::not(remap(g, map)),
        And(a, b) => Formula::and(remap(a, map), remap(b, map)),
        Or(a, b) => Formula::or(remap(a, map), remap(b, map)),
        Implies(a, b) => Formula::implies(remap(a, map), remap(b, map)),
        Until(a, b) => Formula::until(remap(a, map), remap(b, map)),
        Eventually(g) => Formula::eventually(remap(g, map)),
        Globally(g) => Formula::globally(remap(g, map)),
    }
}

/// Büchi automaton with several state-based acceptance sets, each of which
/// must be visited infinitely often.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedBuchi {
    alphabet: Alphabet,
    initial: usize,
    transitions: Vec<Vec<Transition>>,
    acceptance: Vec<Vec<bool>>,
}

impl GeneralizedBuchi {
    pub fn new(
        alphabet: Alphabet,
        initial: usize,
        transitions: Vec<Vec<Transition>>,
        acceptance: Vec<Vec<bool>>,
    ) -> Result<Self, AutomatonError> {
        check_structure(&alphabet, initial, &transitions)?;
        for (set, members) in acceptance.iter().enumerate() {
            if members.len() != transitions.len() {
                return Err(AutomatonError::AcceptanceSize { set, len: members.len(), states: transitions.len() });
            }
        }
        Ok(GeneralizedBuchi { alphabet, initial, transitions, acceptance })
    }

    pub fn num_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn acceptance_sets(&self) -> &[Vec<bool>] {
        &self.acceptance
    }

    pub fn accepts_lasso(&self, w: &LassoWord) -> bool {
        let sets: Vec<&[bool]> = self.acceptance.iter().map(Vec::as_slice).collect();
        lasso_accepts(self.initial, &self.transitions, &sets, w)
    }
}

/// Product of the automaton with the lasso's position graph; accepts iff a
/// reachable cyclic component meets every acceptance set.
fn lasso_accepts(initial: usize, transitions: &[Vec<Transition>], sets: &[&[bool]], w: &LassoWord) -> bool {
    let positions = w.len();
    let node = |q: usize, i: usize| q * positions + i;
    let mut adj = vec![Vec::new(); transitions.len() * positions];
    for (q, out) in transitions.iter().enumerate() {
        for i in 0..positions {
            let letter = w.at(i);
            for t in out {
                if t.guard.holds(letter) {
                    adj[node(q, i)].push(node(t.target, w.succ(i)));
                }
            }
        }
    }
    let reach = graph::reachable_from(&adj, node(initial, 0));
    let comps = graph::strongly_connected(&adj);
    let mut hits = vec![vec![false; sets.len()]; comps.count];
    for v in (0..adj.len()).filter(|&v| reach[v]) {
        let q = v / positions;
        for (k, set) in sets.iter().enumerate() {
            if set[q] {
                hits[comps.of[v]][k] = true;
            }
        }
    }
    (0..adj.len())
        .filter(|&v| reach[v] && comps.cyclic[comps.of[v]])
        .any(|v| hits[comps.of[v]].iter().all(|&h| h))
}

// ---------------------------------------------------------------------------
// Structural passes shared by translation and degeneralization
// ---------------------------------------------------------------------------

/// Working representation during construction: guards of any type, one or
/// more acceptance sets.
#[derive(Debug, Clone)]
struct Raw<G> {
    initial: usize,
    edges: Vec<Vec<(G, usize)>>,
    acceptance: Vec<Vec<bool>>,
}

impl<G: Clone> Raw<G> {
    /// Counter construction. The counter advances from `c` when the current
    /// state is in set `c`; states in set 0 with counter 0 are accepting.
    fn degeneralize(&self, cap: usize) -> Result<Raw<G>, TranslateError> {
        let k = self.acceptance.len();
        if k <= 1 {
            let accepting = match k {
                0 => vec![true; self.edges.len()],
                _ => self.acceptance[0].clone(),
            };
            return Ok(Raw { initial: self.initial, edges: self.edges.clone(), acceptance: vec![accepting] });
        }
        let mut ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut order = vec![(self.initial, 0)];
        ids.insert((self.initial, 0), 0);
        let mut edges = Vec::new();
        let mut head = 0;
        while head < order.len() {
            let (q, c) = order[head];
            head += 1;
            let next_c = if self.acceptance[c][q] { (c + 1) % k } else { c };
            let mut out = Vec::new();
            for (g, t) in &self.edges[q] {
                let key = (*t, next_c);
                let id = match ids.get(&key) {
                    Some(&id) => id,
                    None => {
                        if order.len() >= cap {
                            return Err(TranslateError::Capacity { cap });
                        }
                        ids.insert(key, order.len());
                        order.push(key);
                        order.len() - 1
                    }
                };
                out.push((g.clone(), id));
            }
            edges.push(out);
        }
        let accepting = order.iter().map(|&(q, c)| c == 0 && self.acceptance[0][q]).collect();
        Ok(Raw { initial: 0, edges, acceptance: vec![accepting] })
    }
}

impl Raw<GuardTable> {
    fn adjacency(&self) -> Vec<Vec<usize>> {
        self.edges.iter().map(|out| out.iter().map(|(_, t)| *t).collect()).collect()
    }

    /// Removes states that are unreachable or cannot reach an accepting cycle.
    fn trim(&self) -> Raw<GuardTable> {
        let accepting = &self.acceptance[0];
        let adj = self.adjacency();
        let comps = graph::strongly_connected(&adj);
        let good: Vec<bool> = (0..adj.len()).map(|q| accepting[q] && comps.on_cycle(q)).collect();
        let productive = graph::can_reach(&adj, &good);
        let reach = graph::reachable_from(&adj, self.initial);
        let keep: Vec<bool> = (0..adj.len()).map(|q| productive[q] && reach[q]).collect();
        if !keep[self.initial] {
            return Raw { initial: 0, edges: vec![Vec::new()], acceptance: vec![vec![false]] };
        }
        let mut new_id = vec![usize::MAX; adj.len()];
        let mut next = 0;
        for q in 0..adj.len() {
            if keep[q] {
                new_id[q] = next;
                next += 1;
            }
        }
        let edges = (0..adj.len())
            .filter(|&q| keep[q])
            .map(|q| self.edges[q].iter().filter(|(_, t)| keep[*t]).map(|(g, t)| (g.clone(), new_id[*t])).collect())
            .collect();
        let acceptance = vec![(0..adj.len()).filter(|&q| keep[q]).map(|q| accepting[q]).collect()];
        Raw { initial: new_id[self.initial], edges, acceptance }
    }

    /// Quotient by the coarsest acceptance-respecting bisimulation.
    fn merge_bisimilar(&self) -> Raw<GuardTable> {
        let n = self.edges.len();
        let accepting = &self.acceptance[0];
        let mut class: Vec<usize> = (0..n).map(|q| usize::from(accepting[q])).collect();
        let mut classes = normalize(&mut class);
        loop {
            let signatures: Vec<(usize, Vec<(usize, GuardTable)>)> =
                (0..n).map(|q| (class[q], grouped_edges(&self.edges[q], &class).into_iter().collect())).collect();
            let mut ids: HashMap<&(usize, Vec<(usize, GuardTable)>), usize> = HashMap::new();
            let mut refined = vec![0; n];
            for q in 0..n {
                let len = ids.len();
                refined[q] = *ids.entry(&signatures[q]).or_insert(len);
            }
            let count = ids.len();
            class = refined;
            if count == classes {
                break;
            }
            classes = count;
        }
        let mut rep = vec![usize::MAX; classes];
        for q in (0..n).rev() {
            rep[class[q]] = q;
        }
        let edges = rep.iter().map(|&q| grouped_edges(&self.edges[q], &class).into_iter().map(|(t, g)| (g, t)).collect()).collect();
        let acceptance = vec![rep.iter().map(|&q| accepting[q]).collect()];
        Raw { initial: class[self.initial], edges, acceptance }
    }

    /// Breadth-first renumbering from the initial state, edges sorted by target.
    fn renumber(&self) -> Raw<GuardTable> {
        let n = self.edges.len();
        let mut new_id = vec![usize::MAX; n];
        let mut order = vec![self.initial];
        new_id[self.initial] = 0;
        let mut head = 0;
        while head < order.len() {
            let q = order[head];
            head += 1;
            let mut targets: Vec<usize> = self.edges[q].iter().map(|(_, t)| *t).collect();
            targets.sort_unstable();
            for t in targets {
                if new_id[t] == usize::MAX {
                    new_id[t] = order.len();
                    order.push(t);
                }
            }
        }
        let edges = order
            .iter()
            .map(|&q| {
                let mut out: Vec<(GuardTable, usize)> = self.edges[q].iter().map(|(g, t)| (g.clone(), new_id[*t])).collect();
                out.sort_by_key(|(_, t)| *t);
                out
            })
            .collect();
        let acceptance = vec![order.iter().map(|&q| self.acceptance[0][q]).collect()];
        Raw { initial: 0, edges, acceptance }
    }

    fn into_automaton(self, alphabet: &Alphabet) -> BuchiAutomaton {
        let transitions = self
            .edges
            .into_iter()
            .map(|out| {
                out.into_iter()
                    .filter(|(g, _)| !g.is_false())
                    .map(|(g, target)| Transition { guard: g.to_formula(), target })
                    .collect()
            })
            .collect();
        let accepting = self.acceptance.into_iter().next().expect("single acceptance set");
        BuchiAutomaton::new(alphabet.clone(), self.initial, transitions, accepting).expect("translation builds a well-formed automaton")
    }
}

fn normalize(class: &mut [usize]) -> usize {
    let mut ids = HashMap::new();
    for c in class.iter_mut() {
        let len = ids.len();
        *c = *ids.entry(*c).or_insert(len);
    }
    ids.len()
}

fn grouped_edges(out: &[(GuardTable, usize)], class: &[usize]) -> BTreeMap<usize, GuardTable> {
    let mut grouped: BTreeMap<usize, GuardTable> = BTreeMap::new();
    for (g, t) in out {
        grouped.entry(class[*t]).and_modify(|acc| *acc = acc.or(g)).or_insert_with(|| g.clone());
    }
    grouped.retain(|_, g| !g.is_false());
    grouped
}

/// Collapses a generalized Büchi automaton to a single acceptance set with the
/// counter construction. Only states reachable from the initial state are kept.
pub fn degeneralize(g: &GeneralizedBuchi) -> BuchiAutomaton {
    let raw = Raw {
        initial: g.initial,
        edges: g.transitions.iter().map(|out| out.iter().map(|t| (t.guard.clone(), t.target)).collect()).collect(),
        acceptance: g.acceptance.clone(),
    };
    let bound = g.num_states() * g.acceptance.len().max(1);
    let single = raw.degeneralize(bound.max(1)).expect("counter construction stays within its bound");
    let transitions = single
        .edges
        .into_iter()
        .map(|out| out.into_iter().map(|(guard, target)| Transition { guard, target }).collect())
        .collect();
    let accepting = single.acceptance.into_iter().next().expect("single acceptance set");
    BuchiAutomaton::new(g.alphabet.clone(), single.initial, transitions, accepting).expect("degeneralization preserves well-formedness")
}

// ---------------------------------------------------------------------------
// Tableau translation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    Prop(GuardTable),
    And(usize, usize),
    Or(usize, usize),
    Until(usize, usize),
    Release(usize, usize),
}

struct Arena {
    vars: Vec<usize>,
    nodes: Vec<Node>,
    ids: HashMap<Node, usize>,
    /// Index of each Until node among all Until nodes, for acceptance marks.
    until_index: HashMap<usize, usize>,
}

impl Arena {
    fn intern(&mut self, node: Node) -> usize {
        if let Some(&id) = self.ids.get(&node) {
            return id;
        }
        let id = self.nodes.len();
        if let Node::Until(..) = node {
            let k = self.until_index.len();
            self.until_index.insert(id, k);
        }
        self.nodes.push(node.clone());
        self.ids.insert(node, id);
        id
    }

    fn prop(&mut self, f: &Formula) -> usize {
        let t = GuardTable::from_formula(f, &self.vars);
        self.intern(Node::Prop(t))
    }

    fn constant(&mut self, value: bool) -> usize {
        let t = GuardTable::constant(&self.vars, value);
        self.intern(Node::Prop(t))
    }

    fn and(&mut self, a: usize, b: usize) -> usize {
        match (&self.nodes[a], &self.nodes[b]) {
            (Node::Prop(x), Node::Prop(y)) => {
                let t = x.and(y);
                self.intern(Node::Prop(t))
            }
            _ => self.intern(Node::And(a.min(b), a.max(b))),
        }
    }

    fn or(&mut self, a: usize, b: usize) -> usize {
        match (&self.nodes[a], &self.nodes[b]) {
            (Node::Prop(x), Node::Prop(y)) => {
                let t = x.or(y);
                self.intern(Node::Prop(t))
            }
            _ => self.intern(Node::Or(a.min(b), a.max(b))),
        }
    }

    /// Negation normal form of `f` (or of its negation when `negate`).
    fn nnf(&mut self, f: &Formula, negate: bool) -> usize {
        use Formula::*;
        if f.is_propositional() {
            return if negate { self.prop(&Formula::not(f.clone())) } else { self.prop(f) };
        }
        match (f, negate) {
            (Not(g), _) => self.nnf(g, !negate),
            (And(a, b), false) | (Or(a, b), true) => {
                let (x, y) = (self.nnf(a, negate), self.nnf(b, negate));
                self.and(x, y)
            }
            (Or(a, b), false) | (And(a, b), true) => {
                let (x, y) = (self.nnf(a, negate), self.nnf(b, negate));
                self.or(x, y)
            }
            (Implies(a, b), false) => {
                let (x, y) = (self.nnf(a, true), self.nnf(b, false));
                self.or(x, y)
            }
            (Implies(a, b), true) => {
                let (x, y) = (self.nnf(a, false), self.nnf(b, true));
                self.and(x, y)
            }
            (Until(a, b), false) => {
                let (x, y) = (self.nnf(a, false), self.nnf(b, false));
                self.intern(Node::Until(x, y))
            }
            (Until(a, b), true) => {
                let (x, y) = (self.nnf(a, true), self.nnf(b, true));
                self.intern(Node::Release(x, y))
            }
            (Eventually(g), false) | (Globally(g), true) => {
                let t = self.constant(true);
                let y = self.nnf(g, negate);
                self.intern(Node::Until(t, y))
            }
            (Globally(g), false) | (Eventually(g), true) => {
                let ff = self.constant(false);
                let y = self.nnf(g, negate);
                self.intern(Node::Release(ff, y))
            }
            (True | Atom(_), _) => unreachable!("propositional formulas handled above"),
        }
    }
}

/// One way of discharging a set of obligations in the current step.
#[derive(Clone)]
struct Branch {
    guard: GuardTable,
    next: BTreeSet<usize>,
    postponed: u64,
}

fn expand(arena: &Arena, todo: &mut Vec<usize>, done: &mut BTreeSet<usize>, branch: Branch, out: &mut Vec<Branch>) {
    let Some(id) = todo.pop() else {
        out.push(branch);
        return;
    };
    if !done.insert(id) {
        expand(arena, todo, done, branch, out);
        return;
    }
    let fork = |todo: &mut Vec<usize>, done: &mut BTreeSet<usize>, push: &[usize], branch: Branch, out: &mut Vec<Branch>| {
        let mut todo = todo.clone();
        let mut done = done.clone();
        todo.extend_from_slice(push);
        expand(arena, &mut todo, &mut done, branch, out);
    };
    match &arena.nodes[id] {
        Node::Prop(t) => {
            let guard = branch.guard.and(t);
            if !guard.is_false() {
                fork(todo, done, &[], Branch { guard, ..branch }, out);
            }
        }
        Node::And(a, b) => fork(todo, done, &[*a, *b], branch, out),
        Node::Or(a, b) => {
            fork(todo, done, &[*a], branch.clone(), out);
            fork(todo, done, &[*b], branch, out);
        }
        Node::Until(a, b) => {
            fork(todo, done, &[*b], branch.clone(), out);
            let mut later = branch;
            later.next.insert(id);
            later.postponed |= 1 << arena.until_index[&id];
            fork(todo, done, &[*a], later, out);
        }
        Node::Release(a, b) => {
            fork(todo, done, &[*a, *b], branch.clone(), out);
            let mut later = branch;
            later.next.insert(id);
            fork(todo, done, &[*b], later, out);
        }
    }
}

/// Translates an LTL formula into a Büchi automaton accepting exactly the
/// words that satisfy it at time 0.
pub fn translate(f: &Formula, alphabet: &Alphabet) -> Result<BuchiAutomaton, TranslateError> {
    translate_with_cap(f, alphabet, DEFAULT_STATE_CAP)
}

pub fn translate_with_cap(f: &Formula, alphabet: &Alphabet, cap: usize) -> Result<BuchiAutomaton, TranslateError> {
    let vars: Vec<usize> = Valuation(f.support()).true_atoms().collect();
    if vars.len() > MAX_TABLE_ATOMS {
        return Err(TranslateError::TooManyAtoms { count: vars.len() });
    }
    let mut arena = Arena { vars: vars.clone(), nodes: Vec::new(), ids: HashMap::new(), until_index: HashMap::new() };
    let root = arena.nnf(f, false);
    let untils = arena.until_index.len();
    if untils > 63 {
        return Err(TranslateError::Capacity { cap });
    }
    let all_marks: u64 = (1u64 << untils) - 1;

    // States are (obligations, marks of the incoming step). The initial state
    // carries every mark; it has no incoming step, and acceptance only
    // concerns states visited infinitely often.
    type StateKey = (BTreeSet<usize>, u64);
    let mut ids: HashMap<StateKey, usize> = HashMap::new();
    let mut states: Vec<StateKey> = Vec::new();
    let initial: StateKey = (BTreeSet::from([root]), all_marks);
    ids.insert(initial.clone(), 0);
    states.push(initial);
    let mut edges: Vec<Vec<(GuardTable, usize)>> = Vec::new();
    let mut expansions: HashMap<BTreeSet<usize>, Vec<Branch>> = HashMap::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(q) = queue.pop_front() {
        let obligations = states[q].0.clone();
        let branches = expansions
            .entry(obligations.clone())
            .or_insert_with(|| {
                let mut out = Vec::new();
                let mut todo: Vec<usize> = obligations.iter().rev().copied().collect();
                let start = Branch { guard: GuardTable::constant(&vars, true), next: BTreeSet::new(), postponed: 0 };
                expand(&arena, &mut todo, &mut BTreeSet::new(), start, &mut out);
                out
            })
            .clone();
        let mut grouped: BTreeMap<usize, GuardTable> = BTreeMap::new();
        for b in branches {
            let key = (b.next, all_marks & !b.postponed);
            let target = match ids.get(&key) {
                Some(&id) => id,
                None => {
                    if states.len() >= cap {
                        return Err(TranslateError::Capacity { cap });
                    }
                    let id = states.len();
                    ids.insert(key.clone(), id);
                    states.push(key);
                    queue.push_back(id);
                    id
                }
            };
            grouped.entry(target).and_modify(|g| *g = g.or(&b.guard)).or_insert(b.guard);
        }
        if edges.len() <= q {
            edges.resize(q + 1, Vec::new());
        }
        edges[q] = grouped.into_iter().map(|(t, g)| (g, t)).collect();
    }
    edges.resize(states.len(), Vec::new());
    let acceptance = (0..untils).map(|i| states.iter().map(|(_, marks)| marks >> i & 1 == 1).collect()).collect();
    let generalized = Raw { initial: 0, edges, acceptance };
    let single = generalized.degeneralize(cap)?;
    Ok(single.trim().merge_bisimilar().renumber().into_automaton(alphabet))
}
