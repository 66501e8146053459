//! Propositional guards as truth tables over a fixed list of atoms.

use std::collections::BTreeSet;

use crate::formula::{Formula, Valuation};

/// Largest number of atoms a table may range over.
pub const MAX_TABLE_ATOMS: usize = 16;

/// Above this many relevant atoms, rendering falls back to Shannon expansion
/// instead of computing prime implicants.
const PRIME_IMPLICANT_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GuardTable {
    vars: Vec<usize>,
    bits: Vec<u64>,
}

fn words_for(vars: usize) -> usize {
    ((1usize << vars) + 63) / 64
}

impl GuardTable {
    pub fn constant(vars: &[usize], value: bool) -> Self {
        assert!(vars.len() <= MAX_TABLE_ATOMS);
        let mut t = GuardTable { vars: vars.to_vec(), bits: vec![0; words_for(vars.len())] };
        if value {
            for row in 0..t.rows() {
                t.set(row);
            }
        }
        t
    }

    /// Tabulates a propositional formula whose support lies within `vars`.
    pub fn from_formula(f: &Formula, vars: &[usize]) -> Self {
        let mut t = GuardTable::constant(vars, false);
        for row in 0..t.rows() {
            if f.holds(t.valuation_of(row)) {
                t.set(row);
            }
        }
        t
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn rows(&self) -> usize {
        1 << self.vars.len()
    }

    fn set(&mut self, row: usize) {
        self.bits[row / 64] |= 1 << (row % 64);
    }

    pub fn row(&self, row: usize) -> bool {
        self.bits[row / 64] >> (row % 64) & 1 == 1
    }

    /// Valuation corresponding to a table row (bit i of the row is `vars[i]`).
    pub fn valuation_of(&self, row: usize) -> Valuation {
        Valuation::from_true(self.vars.iter().enumerate().filter(|(i, _)| row >> i & 1 == 1).map(|(_, &v)| v))
    }

    pub fn row_of(&self, v: Valuation) -> usize {
        self.vars.iter().enumerate().fold(0, |acc, (i, &a)| acc | (usize::from(v.get(a)) << i))
    }

    pub fn eval(&self, v: Valuation) -> bool {
        self.row(self.row_of(v))
    }

    pub fn and(&self, other: &GuardTable) -> GuardTable {
        debug_assert_eq!(self.vars, other.vars);
        GuardTable { vars: self.vars.clone(), bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a & b).collect() }
    }

    pub fn or(&self, other: &GuardTable) -> GuardTable {
        debug_assert_eq!(self.vars, other.vars);
        GuardTable { vars: self.vars.clone(), bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a | b).collect() }
    }

    pub fn is_false(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn is_true(&self) -> bool {
        (0..self.rows()).all(|r| self.row(r))
    }

    /// Positions (within `vars`) the table actually depends on.
    fn relevant(&self) -> Vec<usize> {
        (0..self.vars.len())
            .filter(|&i| (0..self.rows()).any(|r| r >> i & 1 == 0 && self.row(r) != self.row(r | 1 << i)))
            .collect()
    }

    /// Renders the table as a compact formula: a sum of prime implicants for
    /// small supports, Shannon expansion otherwise.
    pub fn to_formula(&self) -> Formula {
        if self.is_false() {
            return Formula::falsity();
        }
        let relevant = self.relevant();
        if relevant.is_empty() {
            return Formula::True;
        }
        // Project onto the relevant positions; irrelevant ones are fixed to 0.
        let n = relevant.len();
        let minterms: Vec<u32> = (0..1u32 << n)
            .filter(|&m| {
                let row = relevant.iter().enumerate().fold(0, |acc, (i, &p)| acc | ((m as usize >> i & 1) << p));
                self.row(row)
            })
            .collect();
        let atoms: Vec<usize> = relevant.iter().map(|&p| self.vars[p]).collect();
        if n <= PRIME_IMPLICANT_LIMIT {
            let cover = minimal_cover(&minterms, n);
            disjunction(cover.iter().map(|c| c.to_formula(&atoms)).collect())
        } else {
            let set: BTreeSet<u32> = minterms.into_iter().collect();
            shannon(&set, &atoms, 0, 0)
        }
    }
}

/// A product term: bits in `care` are fixed to the corresponding bit of `value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Cube {
    care: u32,
    value: u32,
}

impl Cube {
    fn covers(self, m: u32) -> bool {
        m & self.care == self.value
    }

    fn literals(self) -> u32 {
        self.care.count_ones()
    }

    fn to_formula(self, atoms: &[usize]) -> Formula {
        let lits: Vec<Formula> = (0..atoms.len())
            .filter(|&i| self.care >> i & 1 == 1)
            .map(|i| {
                let a = Formula::Atom(atoms[i]);
                if self.value >> i & 1 == 1 {
                    a
                } else {
                    Formula::not(a)
                }
            })
            .collect();
        lits.into_iter().reduce(Formula::and).unwrap_or(Formula::True)
    }
}

fn prime_implicants(minterms: &[u32], n: usize) -> Vec<Cube> {
    let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut level: BTreeSet<Cube> = minterms.iter().map(|&m| Cube { care: full, value: m }).collect();
    let mut primes = BTreeSet::new();
    while !level.is_empty() {
        let mut next = BTreeSet::new();
        let mut merged = BTreeSet::new();
        for &c in &level {
            for bit in 0..n {
                let b = 1u32 << bit;
                if c.care & b == 0 || c.value & b != 0 {
                    continue;
                }
                let partner = Cube { care: c.care, value: c.value | b };
                if level.contains(&partner) {
                    next.insert(Cube { care: c.care & !b, value: c.value });
                    merged.insert(c);
                    merged.insert(partner);
                }
            }
        }
        primes.extend(level.difference(&merged).copied());
        level = next;
    }
    primes.into_iter().collect()
}

fn minimal_cover(minterms: &[u32], n: usize) -> Vec<Cube> {
    let primes = prime_implicants(minterms, n);
    let mut uncovered: BTreeSet<u32> = minterms.iter().copied().collect();
    let mut chosen = Vec::new();
    // Essential primes first.
    for &m in minterms {
        let covering: Vec<Cube> = primes.iter().copied().filter(|p| p.covers(m)).collect();
        if covering.len() == 1 && !chosen.contains(&covering[0]) {
            chosen.push(covering[0]);
        }
    }
    for c in &chosen {
        uncovered.retain(|&m| !c.covers(m));
    }
    // Greedy for the rest: most new minterms, then fewest literals.
    while !uncovered.is_empty() {
        let best = primes
            .iter()
            .copied()
            .filter(|p| !chosen.contains(p))
            .max_by(|a, b| {
                let ca = uncovered.iter().filter(|&&m| a.covers(m)).count();
                let cb = uncovered.iter().filter(|&&m| b.covers(m)).count();
                ca.cmp(&cb).then(b.literals().cmp(&a.literals())).then(b.cmp(a))
            })
            .expect("prime implicants cover every minterm");
        uncovered.retain(|&m| !best.covers(m));
        chosen.push(best);
    }
    // Present terms in a stable order: lexicographic over (atom, polarity).
    chosen.sort_by_key(|c| {
        (0..n).filter(|&i| c.care >> i & 1 == 1).map(|i| (i, c.value >> i & 1 == 0)).collect::<Vec<_>>()
    });
    chosen
}

fn disjunction(terms: Vec<Formula>) -> Formula {
    terms.into_iter().reduce(Formula::or).unwrap_or_else(Formula::falsity)
}

fn shannon(minterms: &BTreeSet<u32>, atoms: &[usize], depth: usize, prefix: u32) -> Formula {
    let n = atoms.len();
    let width = n - depth;
    let span = 1u32 << width;
    let lo = prefix;
    let count = minterms.range(lo..lo + span).count() as u32;
    if count == 0 {
        return Formula::falsity();
    }
    if count == span {
        return Formula::True;
    }
    // Minterm bit (n-1-depth) is branched on; minterms are ordered with the
    // highest bit most significant, so branch on the top remaining bit.
    let bit = n - 1 - depth;
    let atom = Formula::Atom(atoms[bit]);
    let low = shannon(minterms, atoms, depth + 1, prefix);
    let high = shannon(minterms, atoms, depth + 1, prefix | 1 << bit);
    let falsity = Formula::falsity();
    match (low == falsity, high == falsity) {
        (true, _) => and_simplified(atom, high),
        (_, true) => and_simplified(Formula::not(atom), low),
        _ => Formula::or(and_simplified(Formula::not(atom.clone()), low), and_simplified(atom, high)),
    }
}

fn and_simplified(lit: Formula, rest: Formula) -> Formula {
    if rest == Formula::True {
        lit
    } else {
        Formula::and(lit, rest)
    }
}
