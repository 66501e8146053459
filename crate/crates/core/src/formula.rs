//! Temporal formulas over controllable and uncontrollable propositions.
//!
//! Concrete grammar (lowest to highest precedence):
//!
//! ```text
//! formula := implies
//! implies := or ( "->" implies )?
//! or      := and ( "|" and )*
//! and     := until ( "&" until )*
//! until   := unary ( "U" until )?
//! unary   := "!" unary | "G" unary | "F" unary | atom
//! atom    := "true" | "false" | ident | "(" formula ")"
//! ```
//!
//! `->` and `U` associate to the right. Identifiers are case-sensitive and
//! may not be one of the keywords `G`, `F`, `U`, `true`, `false`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub const MAX_ATOMS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomKind {
    Controllable,
    Uncontrollable,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub name: String,
    pub kind: AtomKind,
}

/// Ordered set of declared propositions. Index order is declaration order,
/// controllable atoms first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alphabet {
    atoms: Vec<Atom>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlphabetError {
    #[error("atom name is empty")]
    Empty,
    #[error("`{0}` is not a valid identifier")]
    InvalidName(String),
    #[error("`{0}` is a reserved keyword")]
    Reserved(String),
    #[error("atom `{0}` declared more than once")]
    Duplicate(String),
    #[error("alphabet exceeds {MAX_ATOMS} atoms")]
    TooLarge,
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "G" | "F" | "U" | "true" | "false")
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Alphabet {
    pub fn new<S: AsRef<str>>(controllable: &[S], uncontrollable: &[S]) -> Result<Self, AlphabetError> {
        let mut alphabet = Alphabet::default();
        for name in controllable {
            alphabet.push(name.as_ref(), AtomKind::Controllable)?;
        }
        for name in uncontrollable {
            alphabet.push(name.as_ref(), AtomKind::Uncontrollable)?;
        }
        Ok(alphabet)
    }

    pub fn push(&mut self, name: &str, kind: AtomKind) -> Result<usize, AlphabetError> {
        if name.is_empty() {
            return Err(AlphabetError::Empty);
        }
        if is_keyword(name) {
            return Err(AlphabetError::Reserved(name.to_string()));
        }
        if !is_ident(name) {
            return Err(AlphabetError::InvalidName(name.to_string()));
        }
        if self.index.contains_key(name) {
            return Err(AlphabetError::Duplicate(name.to_string()));
        }
        if self.atoms.len() == MAX_ATOMS {
            return Err(AlphabetError::TooLarge);
        }
        let id = self.atoms.len();
        self.atoms.push(Atom { name: name.to_string(), kind });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, id: usize) -> &Atom {
        &self.atoms[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.atoms[id].name
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn kind(&self, id: usize) -> AtomKind {
        self.atoms[id].kind
    }

    /// Indices of the controllable atoms, in declaration order.
    pub fn controllable(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids_of(AtomKind::Controllable)
    }

    pub fn uncontrollable(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids_of(AtomKind::Uncontrollable)
    }

    fn ids_of(&self, kind: AtomKind) -> impl Iterator<Item = usize> + '_ {
        self.atoms.iter().enumerate().filter(move |(_, a)| a.kind == kind).map(|(i, _)| i)
    }

    pub fn controllable_mask(&self) -> u64 {
        self.controllable().fold(0, |m, i| m | (1 << i))
    }

    pub fn uncontrollable_mask(&self) -> u64 {
        self.uncontrollable().fold(0, |m, i| m | (1 << i))
    }

    pub fn full_mask(&self) -> u64 {
        if self.atoms.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.atoms.len()) - 1
        }
    }
}

/// Truth assignment over an alphabet, one bit per atom index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Valuation(pub u64);

impl Valuation {
    pub const EMPTY: Valuation = Valuation(0);

    pub fn from_true<I: IntoIterator<Item = usize>>(ids: I) -> Self {
        Valuation(ids.into_iter().fold(0, |m, i| m | (1 << i)))
    }

    pub fn get(self, id: usize) -> bool {
        self.0 >> id & 1 == 1
    }

    pub fn with(self, id: usize, value: bool) -> Self {
        if value {
            Valuation(self.0 | (1 << id))
        } else {
            Valuation(self.0 & !(1 << id))
        }
    }

    pub fn restrict(self, mask: u64) -> Self {
        Valuation(self.0 & mask)
    }

    pub fn union(self, other: Valuation) -> Self {
        Valuation(self.0 | other.0)
    }

    pub fn count(self, mask: u64) -> u32 {
        (self.0 & mask).count_ones()
    }

    pub fn true_atoms(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| self.get(i))
    }

    /// Renders the true atoms as `a+b`, or `-` when none are true.
    pub fn render(self, alphabet: &Alphabet, mask: u64) -> String {
        let names: Vec<&str> = self.restrict(mask).true_atoms().map(|i| alphabet.name(i)).collect();
        if names.is_empty() {
            "-".to_string()
        } else {
            names.join("+")
        }
    }

    pub fn parse_rendered(text: &str, alphabet: &Alphabet) -> Result<Self, String> {
        if text == "-" {
            return Ok(Valuation::EMPTY);
        }
        let mut v = Valuation::EMPTY;
        for name in text.split('+') {
            let id = alphabet.lookup(name).ok_or_else(|| format!("unknown atom `{name}`"))?;
            v = v.with(id, true);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    Atom(usize),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
    Eventually(Box<Formula>),
    Globally(Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(id: usize) -> Self {
        Formula::Atom(id)
    }

    pub fn falsity() -> Self {
        Formula::Not(Box::new(Formula::True))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn until(a: Formula, b: Formula) -> Self {
        Formula::Until(Box::new(a), Box::new(b))
    }

    pub fn eventually(f: Formula) -> Self {
        Formula::Eventually(Box::new(f))
    }

    pub fn globally(f: Formula) -> Self {
        Formula::Globally(Box::new(f))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    /// Rewrites into the core syntax `{true, atom, !, &, U}`.
    pub fn desugar(&self) -> Formula {
        use Formula::*;
        match self {
            True => True,
            Atom(i) => Atom(*i),
            Not(f) => Formula::not(f.desugar()),
            And(a, b) => Formula::and(a.desugar(), b.desugar()),
            Or(a, b) => Formula::not(Formula::and(Formula::not(a.desugar()), Formula::not(b.desugar()))),
            Until(a, b) => Formula::until(a.desugar(), b.desugar()),
            Eventually(f) => Formula::until(True, f.desugar()),
            Globally(f) => Formula::not(Formula::until(True, Formula::not(f.desugar()))),
            Implies(a, b) => Formula::not(Formula::and(a.desugar(), Formula::not(b.desugar()))),
        }
    }

    pub fn is_core(&self) -> bool {
        use Formula::*;
        match self {
            True | Atom(_) => true,
            Not(f) => f.is_core(),
            And(a, b) | Until(a, b) => a.is_core() && b.is_core(),
            Or(..) | Eventually(_) | Globally(_) | Implies(..) => false,
        }
    }

    /// True when the formula has no temporal operator.
    pub fn is_propositional(&self) -> bool {
        use Formula::*;
        match self {
            True | Atom(_) => true,
            Not(f) => f.is_propositional(),
            And(a, b) | Or(a, b) | Implies(a, b) => a.is_propositional() && b.is_propositional(),
            Until(..) | Eventually(_) | Globally(_) => false,
        }
    }

    /// Bit mask of the atoms occurring in the formula.
    pub fn support(&self) -> u64 {
        use Formula::*;
        match self {
            True => 0,
            Atom(i) => 1 << i,
            Not(f) | Eventually(f) | Globally(f) => f.support(),
            And(a, b) | Or(a, b) | Until(a, b) | Implies(a, b) => a.support() | b.support(),
        }
    }

    pub fn depth(&self) -> usize {
        use Formula::*;
        match self {
            True | Atom(_) => 0,
            Not(f) | Eventually(f) | Globally(f) => 1 + f.depth(),
            And(a, b) | Or(a, b) | Until(a, b) | Implies(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Evaluates a propositional formula under a valuation.
    ///
    /// Panics if the formula contains temporal operators.
    pub fn holds(&self, v: Valuation) -> bool {
        use Formula::*;
        match self {
            True => true,
            Atom(i) => v.get(*i),
            Not(f) => !f.holds(v),
            And(a, b) => a.holds(v) && b.holds(v),
            Or(a, b) => a.holds(v) || b.holds(v),
            Implies(a, b) => !a.holds(v) || b.holds(v),
            Until(..) | Eventually(_) | Globally(_) => panic!("holds() called on a temporal formula"),
        }
    }

    pub fn display<'a>(&'a self, alphabet: &'a Alphabet) -> FormulaDisplay<'a> {
        FormulaDisplay { formula: self, alphabet }
    }
}

pub struct FormulaDisplay<'a> {
    formula: &'a Formula,
    alphabet: &'a Alphabet,
}

impl FormulaDisplay<'_> {
    fn write(&self, f: &Formula, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Formula::*;
        match f {
            True => write!(out, "true"),
            Atom(i) => write!(out, "{}", self.alphabet.name(*i)),
            Not(g) if **g == True => write!(out, "false"),
            Not(g) => {
                write!(out, "!")?;
                self.paren(g, out)
            }
            Eventually(g) => {
                write!(out, "F ")?;
                self.paren(g, out)
            }
            Globally(g) => {
                write!(out, "G ")?;
                self.paren(g, out)
            }
            And(a, b) => self.binary(a, "&", b, out),
            Or(a, b) => self.binary(a, "|", b, out),
            Until(a, b) => self.binary(a, "U", b, out),
            Implies(a, b) => self.binary(a, "->", b, out),
        }
    }

    fn binary(&self, a: &Formula, op: &str, b: &Formula, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.paren(a, out)?;
        write!(out, " {op} ")?;
        self.paren(b, out)
    }

    fn paren(&self, f: &Formula, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match f {
            Formula::True | Formula::Atom(_) => self.write(f, out),
            Formula::Not(g) if matches!(**g, Formula::True | Formula::Atom(_)) => self.write(f, out),
            _ => {
                write!(out, "(")?;
                self.write(f, out)?;
                write!(out, ")")
            }
        }
    }
}

impl fmt::Display for FormulaDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.formula, f)
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty formula")]
    Empty,
    #[error("unexpected character `{ch}` at column {col}")]
    UnexpectedChar { ch: char, col: usize },
    #[error("unexpected {found} at column {col}, expected {expected}")]
    Unexpected { found: String, expected: &'static str, col: usize },
    #[error("undeclared proposition `{name}` at column {col}")]
    Undeclared { name: String, col: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    True,
    False,
    Not,
    And,
    Or,
    Arrow,
    Globally,
    Eventually,
    Until,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::True => "`true`".into(),
            Tok::False => "`false`".into(),
            Tok::Not => "`!`".into(),
            Tok::And => "`&`".into(),
            Tok::Or => "`|`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Globally => "`G`".into(),
            Tok::Eventually => "`F`".into(),
            Tok::Until => "`U`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '!' => toks.push((Tok::Not, col)),
            '&' => toks.push((Tok::And, col)),
            '|' => toks.push((Tok::Or, col)),
            '(' => toks.push((Tok::LParen, col)),
            ')' => toks.push((Tok::RParen, col)),
            '-' if chars.get(i + 1) == Some(&'>') => {
                toks.push((Tok::Arrow, col));
                i += 1;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = match word.as_str() {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "G" => Tok::Globally,
                    "F" => Tok::Eventually,
                    "U" => Tok::Until,
                    _ => Tok::Ident(word),
                };
                toks.push((tok, col));
                continue;
            }
            _ => return Err(ParseError::UnexpectedChar { ch: c, col }),
        }
        i += 1;
    }
    toks.push((Tok::End, chars.len() + 1));
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    alphabet: &'a Alphabet,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn col(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        ParseError::Unexpected { found: self.peek().describe(), expected, col: self.col() }
    }

    fn implies(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.or()?;
        if *self.peek() == Tok::Arrow {
            self.bump();
            let rhs = self.implies()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.until()?;
        while *self.peek() == Tok::And {
            self.bump();
            lhs = Formula::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.unary()?;
        if *self.peek() == Tok::Until {
            self.bump();
            let rhs = self.until()?;
            return Ok(Formula::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Tok::Not => {
                self.bump();
                Ok(Formula::not(self.unary()?))
            }
            Tok::Globally => {
                self.bump();
                Ok(Formula::globally(self.unary()?))
            }
            Tok::Eventually => {
                self.bump();
                Ok(Formula::eventually(self.unary()?))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula, ParseError> {
        match self.peek().clone() {
            Tok::True => {
                self.bump();
                Ok(Formula::True)
            }
            Tok::False => {
                self.bump();
                Ok(Formula::falsity())
            }
            Tok::Ident(name) => {
                let col = self.col();
                self.bump();
                self.alphabet
                    .lookup(&name)
                    .map(Formula::Atom)
                    .ok_or(ParseError::Undeclared { name, col })
            }
            Tok::LParen => {
                self.bump();
                let inner = self.implies()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.bump();
                Ok(inner)
            }
            _ => Err(self.unexpected("a formula")),
        }
    }
}

/// Parses formula text, resolving identifiers against `alphabet`.
pub fn parse_formula(text: &str, alphabet: &Alphabet) -> Result<Formula, ParseError> {
    let toks = lex(text)?;
    if toks.len() == 1 {
        return Err(ParseError::Empty);
    }
    let mut parser = Parser { toks, pos: 0, alphabet };
    let f = parser.implies()?;
    if *parser.peek() != Tok::End {
        return Err(parser.unexpected("end of input"));
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// RTL fragment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClauseKind {
    /// LTL over controllable atoms only.
    Behavior,
    /// `G(φ -> Ψ)` with φ over uncontrollable atoms.
    EnvironmentReaction,
    /// `G(ψ -> Ψ)` with ψ over controllable atoms.
    BehaviorReaction,
    /// `φ -> Ψ` without the enclosing `G`, constraining only the first instant.
    InitialReaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtlClause {
    pub formula: Formula,
    pub kind: ClauseKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtlSpec {
    pub formula: Formula,
    pub alphabet: Alphabet,
    pub conjuncts: Vec<RtlClause>,
}

impl RtlSpec {
    pub fn controllable(&self) -> Vec<usize> {
        self.alphabet.controllable().collect()
    }

    pub fn uncontrollable(&self) -> Vec<usize> {
        self.alphabet.uncontrollable().collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("not a reactive specification: `{subformula}` {reason}")]
pub struct RtlError {
    pub subformula: String,
    pub reason: String,
}

fn flatten_and<'f>(f: &'f Formula, out: &mut Vec<&'f Formula>) {
    if let Formula::And(a, b) = f {
        flatten_and(a, out);
        flatten_and(b, out);
    } else {
        out.push(f);
    }
}

struct RtlChecker<'a> {
    alphabet: &'a Alphabet,
    c_mask: u64,
    u_mask: u64,
}

impl RtlChecker<'_> {
    fn error(&self, f: &Formula, reason: &str) -> RtlError {
        RtlError { subformula: f.display(self.alphabet).to_string(), reason: reason.to_string() }
    }

    fn over_controllable(&self, f: &Formula) -> bool {
        f.support() & !self.c_mask == 0
    }

    fn over_uncontrollable(&self, f: &Formula) -> bool {
        f.support() & !self.u_mask == 0
    }

    fn trigger_kind(&self, lhs: &Formula) -> Result<ClauseKind, RtlError> {
        if self.over_uncontrollable(lhs) && lhs.support() != 0 {
            Ok(ClauseKind::EnvironmentReaction)
        } else if self.over_controllable(lhs) {
            Ok(ClauseKind::BehaviorReaction)
        } else {
            Err(self.error(lhs, "mixes controllable and uncontrollable propositions in a trigger"))
        }
    }

    fn check(&self, f: &Formula) -> Result<ClauseKind, RtlError> {
        match f {
            Formula::And(a, b) => {
                self.check(a)?;
                self.check(b)?;
                Ok(ClauseKind::Behavior)
            }
            Formula::Globally(inner) => match inner.as_ref() {
                Formula::Implies(lhs, rhs) => {
                    let kind = self.trigger_kind(lhs)?;
                    self.check(rhs)?;
                    Ok(kind)
                }
                _ if self.over_controllable(f) => Ok(ClauseKind::Behavior),
                _ => Err(self.error(f, "uses uncontrollable propositions outside a trigger")),
            },
            Formula::Implies(lhs, rhs) if !self.over_controllable(f) => {
                self.trigger_kind(lhs)?;
                self.check(rhs)?;
                Ok(ClauseKind::InitialReaction)
            }
            _ if self.over_controllable(f) => Ok(ClauseKind::Behavior),
            _ => Err(self.error(f, "uses uncontrollable propositions outside a trigger")),
        }
    }
}

/// Checks that `f` belongs to the reactive fragment and splits it into
/// top-level clauses.
pub fn validate_rtl(f: &Formula, alphabet: &Alphabet) -> Result<RtlSpec, RtlError> {
    let checker = RtlChecker {
        alphabet,
        c_mask: alphabet.controllable_mask(),
        u_mask: alphabet.uncontrollable_mask(),
    };
    let mut parts = Vec::new();
    flatten_and(f, &mut parts);
    let conjuncts = parts
        .into_iter()
        .map(|part| {
            checker.check(part).map(|kind| RtlClause { formula: part.clone(), kind })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RtlSpec { formula: f.clone(), alphabet: alphabet.clone(), conjuncts })
}

// ---------------------------------------------------------------------------
// Lasso semantics
// ---------------------------------------------------------------------------

/// Ultimately periodic word `prefix · cycle^ω`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LassoWord {
    pub prefix: Vec<Valuation>,
    pub cycle: Vec<Valuation>,
}

impl LassoWord {
    pub fn new(prefix: Vec<Valuation>, cycle: Vec<Valuation>) -> Self {
        assert!(!cycle.is_empty(), "lasso cycle must be nonempty");
        LassoWord { prefix, cycle }
    }

    /// Number of distinct positions.
    pub fn len(&self) -> usize {
        self.prefix.len() + self.cycle.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Position following `i` in the lasso graph.
    pub fn succ(&self, i: usize) -> usize {
        if i + 1 < self.len() {
            i + 1
        } else {
            self.prefix.len()
        }
    }

    /// Folds an arbitrary time index onto a lasso position.
    pub fn position(&self, t: usize) -> usize {
        if t < self.prefix.len() {
            t
        } else {
            self.prefix.len() + (t - self.prefix.len()) % self.cycle.len()
        }
    }

    pub fn at(&self, i: usize) -> Valuation {
        if i < self.prefix.len() {
            self.prefix[i]
        } else {
            self.cycle[i - self.prefix.len()]
        }
    }
}

/// Truth of `f` at every position of the lasso, by fixpoint iteration over
/// the lasso's position graph.
pub fn eval_positions(f: &Formula, w: &LassoWord) -> Vec<bool> {
    use Formula::*;
    let n = w.len();
    match f {
        True => vec![true; n],
        Atom(i) => (0..n).map(|p| w.at(p).get(*i)).collect(),
        Not(g) => eval_positions(g, w).into_iter().map(|b| !b).collect(),
        And(a, b) => zip_with(eval_positions(a, w), eval_positions(b, w), |x, y| x && y),
        Or(a, b) => zip_with(eval_positions(a, w), eval_positions(b, w), |x, y| x || y),
        Implies(a, b) => zip_with(eval_positions(a, w), eval_positions(b, w), |x, y| !x || y),
        Until(a, b) => until_fixpoint(w, &eval_positions(a, w), eval_positions(b, w)),
        Eventually(g) => until_fixpoint(w, &vec![true; n], eval_positions(g, w)),
        Globally(g) => {
            let mut res = eval_positions(g, w);
            let mut changed = true;
            while changed {
                changed = false;
                for i in (0..n).rev() {
                    if res[i] && !res[w.succ(i)] {
                        res[i] = false;
                        changed = true;
                    }
                }
            }
            res
        }
    }
}

fn zip_with(a: Vec<bool>, b: Vec<bool>, op: impl Fn(bool, bool) -> bool) -> Vec<bool> {
    a.into_iter().zip(b).map(|(x, y)| op(x, y)).collect()
}

fn until_fixpoint(w: &LassoWord, hold: &[bool], mut res: Vec<bool>) -> Vec<bool> {
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..w.len()).rev() {
            if !res[i] && hold[i] && res[w.succ(i)] {
                res[i] = true;
                changed = true;
            }
        }
    }
    res
}

/// Whether `(w, t) ⊨ f`. `t` may be any step index; it is folded onto the lasso.
pub fn eval_lasso(f: &Formula, w: &LassoWord, t: usize) -> bool {
    eval_positions(f, w)[w.position(t)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stir() -> Alphabet {
        Alphabet::new(&["s", "p"], &["h"]).unwrap()
    }

    #[test]
    fn parses_stir_spec() {
        let a = stir();
        let f = parse_formula("G (h -> s) & G (!h -> F p)", &a).unwrap();
        let h = Formula::Atom(2);
        let expected = Formula::and(
            Formula::globally(Formula::implies(h.clone(), Formula::Atom(0))),
            Formula::globally(Formula::implies(Formula::not(h), Formula::eventually(Formula::Atom(1)))),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn parses_true_literal() {
        assert_eq!(parse_formula("true", &stir()).unwrap(), Formula::True);
    }

    #[test]
    fn eventually_desugars_to_until() {
        let f = parse_formula("F p", &stir()).unwrap();
        assert_eq!(f.desugar(), Formula::until(Formula::True, Formula::Atom(1)));
    }

    #[test]
    fn precedence_and_associativity() {
        let a = stir();
        let f = parse_formula("s | p & h -> s -> p", &a).unwrap();
        let expected = Formula::implies(
            Formula::or(Formula::Atom(0), Formula::and(Formula::Atom(1), Formula::Atom(2))),
            Formula::implies(Formula::Atom(0), Formula::Atom(1)),
        );
        assert_eq!(f, expected);
        let u = parse_formula("s U p U h", &a).unwrap();
        assert_eq!(u, Formula::until(Formula::Atom(0), Formula::until(Formula::Atom(1), Formula::Atom(2))));
    }

    #[test]
    fn parse_errors_carry_positions() {
        let a = stir();
        assert_eq!(parse_formula("   ", &a), Err(ParseError::Empty));
        assert_eq!(parse_formula("s & q", &a), Err(ParseError::Undeclared { name: "q".into(), col: 5 }));
        assert!(matches!(parse_formula("s & ", &a), Err(ParseError::Unexpected { col: 5, .. })));
        assert!(matches!(parse_formula("(s", &a), Err(ParseError::Unexpected { col: 3, .. })));
        assert_eq!(parse_formula("s # p", &a), Err(ParseError::UnexpectedChar { ch: '#', col: 3 }));
        assert!(matches!(parse_formula("s p", &a), Err(ParseError::Unexpected { col: 3, .. })));
    }

    #[test]
    fn alphabet_rejects_duplicates_and_keywords() {
        assert_eq!(Alphabet::new(&["a"], &["a"]), Err(AlphabetError::Duplicate("a".into())));
        assert_eq!(Alphabet::new(&["G"], &[]), Err(AlphabetError::Reserved("G".into())));
        assert_eq!(Alphabet::new(&[""], &[]), Err(AlphabetError::Empty));
        assert_eq!(Alphabet::new(&["1x"], &[]), Err(AlphabetError::InvalidName("1x".into())));
        let a = Alphabet::new(&["A", "a"], &[]).unwrap();
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn display_round_trips() {
        let a = stir();
        for text in ["G (h -> s) & G (!h -> F p)", "s U (p | !h)", "false | true", "!(s & p)"] {
            let f = parse_formula(text, &a).unwrap();
            let shown = f.display(&a).to_string();
            assert_eq!(parse_formula(&shown, &a).unwrap(), f, "{shown}");
        }
    }

    #[test]
    fn rtl_accepts_stir_and_rejects_reversed_implication() {
        let a = stir();
        let f = parse_formula("G (h -> s) & G (!h -> F p)", &a).unwrap();
        let spec = validate_rtl(&f, &a).unwrap();
        assert_eq!(spec.conjuncts.len(), 2);
        assert!(spec.conjuncts.iter().all(|c| c.kind == ClauseKind::EnvironmentReaction));

        let bad = parse_formula("G (s -> h)", &a).unwrap();
        let err = validate_rtl(&bad, &a).unwrap_err();
        assert_eq!(err.subformula, "h");

        let psi = parse_formula("G s", &a).unwrap();
        let spec = validate_rtl(&psi, &a).unwrap();
        assert_eq!(spec.conjuncts[0].kind, ClauseKind::Behavior);
    }

    #[test]
    fn rtl_rejects_mixed_triggers_and_bare_uncontrollables() {
        let a = stir();
        for text in ["G ((h & s) -> p)", "h", "F h & G s", "G (h | s)"] {
            let f = parse_formula(text, &a).unwrap();
            assert!(validate_rtl(&f, &a).is_err(), "{text}");
        }
        let nested = parse_formula("G (h -> G (s -> F p))", &a).unwrap();
        assert!(validate_rtl(&nested, &a).is_ok());
    }

    #[test]
    fn rtl_accepts_whiteboard_and_mannequin_specs() {
        let wb = Alphabet::new(&["w_left", "w_right", "w_stain", "s_p", "e_p"], &["eraser", "stain", "left", "right"])
            .unwrap();
        let text = "G((eraser & left & !stain) -> w_left) & G((eraser & right & !stain) -> w_right) \
                    & ((eraser & stain) -> s_p) & (!eraser -> e_p) & G((eraser & stain) -> (s_p U w_stain))";
        let spec = validate_rtl(&parse_formula(text, &wb).unwrap(), &wb).unwrap();
        assert_eq!(spec.conjuncts.len(), 5);
        assert_eq!(spec.conjuncts[2].kind, ClauseKind::InitialReaction);

        let mq = Alphabet::new(&["w_leg", "w_hand", "w_back", "d_p", "b_p"], &["leg", "hand", "back", "wet", "human"])
            .unwrap();
        let text = "G((wet & leg & !back) -> w_leg) & G((wet & hand & !back) -> w_hand) \
                    & G((wet & back) -> w_back) & G(!wet -> d_p) & G((human & wet) -> b_p) \
                    & G((!human & wet) -> true)";
        let spec = validate_rtl(&parse_formula(text, &mq).unwrap(), &mq).unwrap();
        assert_eq!(spec.conjuncts.len(), 6);
    }

    fn word(prefix: &[u64], cycle: &[u64]) -> LassoWord {
        LassoWord::new(prefix.iter().map(|&b| Valuation(b)).collect(), cycle.iter().map(|&b| Valuation(b)).collect())
    }

    #[test]
    fn lasso_examples() {
        let p = Formula::Atom(0);
        let always = Formula::globally(p.clone());
        let inf = Formula::globally(Formula::eventually(p.clone()));
        assert!(eval_lasso(&Formula::True, &word(&[], &[0]), 0));
        assert!(eval_lasso(&always, &word(&[], &[1]), 0));
        assert!(!eval_lasso(&always, &word(&[], &[0, 1]), 0));
        assert!(eval_lasso(&inf, &word(&[], &[0, 1]), 0));
        assert!(!eval_lasso(&inf, &word(&[1, 1], &[0]), 0));
        // F p holds at t=1 but not after the prefix
        let ev = Formula::eventually(p);
        let w = word(&[0, 1], &[0]);
        assert!(eval_lasso(&ev, &w, 0));
        assert!(eval_lasso(&ev, &w, 1));
        assert!(!eval_lasso(&ev, &w, 2));
        assert!(!eval_lasso(&ev, &w, 7));
    }

    #[test]
    fn valuation_rendering() {
        let a = stir();
        let v = Valuation::from_true([0, 2]);
        assert_eq!(v.render(&a, a.full_mask()), "s+h");
        assert_eq!(v.render(&a, a.controllable_mask()), "s");
        assert_eq!(Valuation::parse_rendered("s+h", &a).unwrap(), v);
        assert_eq!(Valuation::parse_rendered("-", &a).unwrap(), Valuation::EMPTY);
    }
}
