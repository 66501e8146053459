//! Reading and writing automata in the Hanoi Omega-Automata (HOA v1) format.
//!
//! Only state-based Büchi acceptance (`Acceptance: 1 Inf(0)`) with explicit
//! edge labels is supported. The optional `controllable-AP:` header marks
//! which propositions are controllable; without it every proposition is read
//! as controllable.

use std::fmt::Write as _;

use thiserror::Error;

use crate::automaton::{BuchiAutomaton, Transition};
use crate::formula::{Alphabet, AtomKind, Formula};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("HOA line {line}: {message}")]
pub struct HoaError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, HoaError> {
    Err(HoaError { line, message: message.into() })
}

/// Serializes an automaton. Output is stable and used for golden-file tests.
pub fn print_hoa(a: &BuchiAutomaton) -> String {
    let alphabet = a.alphabet();
    let mut out = String::new();
    out.push_str("HOA: v1\n");
    let _ = writeln!(out, "States: {}", a.num_states());
    let _ = writeln!(out, "Start: {}", a.initial());
    let _ = write!(out, "AP: {}", alphabet.len());
    for atom in alphabet.atoms() {
        let _ = write!(out, " \"{}\"", atom.name);
    }
    out.push('\n');
    let controllable: Vec<String> = alphabet.controllable().map(|i| i.to_string()).collect();
    if !controllable.is_empty() {
        let _ = writeln!(out, "controllable-AP: {}", controllable.join(" "));
    }
    out.push_str("acc-name: Buchi\n");
    out.push_str("Acceptance: 1 Inf(0)\n");
    out.push_str("properties: trans-labels explicit-labels state-acc\n");
    out.push_str("--BODY--\n");
    for q in 0..a.num_states() {
        if a.is_accepting(q) {
            let _ = writeln!(out, "State: {q} {{0}}");
        } else {
            let _ = writeln!(out, "State: {q}");
        }
        for t in a.transitions(q) {
            let _ = writeln!(out, "[{}] {}", label(&t.guard), t.target);
        }
    }
    out.push_str("--END--\n");
    out
}

fn label(f: &Formula) -> String {
    use Formula::*;
    match f {
        True => "t".into(),
        Not(g) if **g == True => "f".into(),
        Atom(i) => i.to_string(),
        Not(g) => format!("!{}", label_operand(g)),
        And(a, b) => format!("{}&{}", conjunct(a), conjunct(b)),
        Or(a, b) => format!("{} | {}", label(a), label(b)),
        Implies(a, b) => format!("!{} | {}", label_operand(a), label(b)),
        Until(..) | Eventually(_) | Globally(_) => unreachable!("automaton guards are propositional"),
    }
}

fn label_operand(f: &Formula) -> String {
    match f {
        Formula::True | Formula::Atom(_) | Formula::Not(_) => label(f),
        _ => format!("({})", label(f)),
    }
}

fn conjunct(f: &Formula) -> String {
    match f {
        Formula::Or(..) | Formula::Implies(..) => format!("({})", label(f)),
        _ => label(f),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Header(String),
    Int(usize),
    Str(String),
    Ident(String),
    Sym(char),
    Body,
    End,
    Abort,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, HoaError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut line = 1;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            let start = line;
            i += 2;
            loop {
                match chars.get(i) {
                    None => return err(start, "unterminated comment"),
                    Some('*') if chars.get(i + 1) == Some(&'/') => {
                        i += 2;
                        break;
                    }
                    Some('\n') => line += 1,
                    _ => {}
                }
                i += 1;
            }
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            let start = i;
            i += 2;
            while i < chars.len() && chars[i].is_ascii_uppercase() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            let tok = match (word.as_str(), chars.get(i)) {
                ("--BODY", Some('-')) if chars.get(i + 1) == Some(&'-') => Tok::Body,
                ("--END", Some('-')) if chars.get(i + 1) == Some(&'-') => Tok::End,
                ("--ABORT", Some('-')) if chars.get(i + 1) == Some(&'-') => Tok::Abort,
                _ => return err(line, format!("unknown marker `{word}`")),
            };
            i += 2;
            toks.push((tok, line));
        } else if c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return err(line, "unterminated string"),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some(&e) => s.push(e),
                            None => return err(line, "unterminated string"),
                        }
                        i += 2;
                    }
                    Some(&ch) => {
                        if ch == '\n' {
                            line += 1;
                        }
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            toks.push((Tok::Str(s), line));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            let n = digits.parse().map_err(|_| HoaError { line, message: format!("integer `{digits}` out of range") })?;
            toks.push((Tok::Int(n), line));
        } else if c.is_ascii_alphabetic() || c == '_' || c == '@' {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '-') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if chars.get(i) == Some(&':') {
                i += 1;
                toks.push((Tok::Header(word), line));
            } else {
                toks.push((Tok::Ident(word), line));
            }
        } else if "[]{}()!&|".contains(c) {
            toks.push((Tok::Sym(c), line));
            i += 1;
        } else {
            return err(line, format!("unexpected character `{c}`"));
        }
    }
    Ok(toks)
}

struct Cursor {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Cursor {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).or(self.toks.last()).map_or(1, |(_, l)| *l)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect_int(&mut self, what: &str) -> Result<usize, HoaError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Int(n)) => Ok(n),
            _ => err(line, format!("expected {what}")),
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), HoaError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Sym(s)) if s == c => Ok(()),
            _ => err(line, format!("expected `{c}`")),
        }
    }

    /// Tokens up to the next header or section marker.
    fn header_values(&mut self) -> Vec<(Tok, usize)> {
        let start = self.pos;
        while let Some(t) = self.peek() {
            if matches!(t, Tok::Header(_) | Tok::Body | Tok::End | Tok::Abort) {
                break;
            }
            self.pos += 1;
        }
        self.toks[start..self.pos].to_vec()
    }
}

fn values_text(values: &[(Tok, usize)]) -> String {
    values
        .iter()
        .map(|(t, _)| match t {
            Tok::Int(n) => n.to_string(),
            Tok::Str(s) => format!("\"{s}\""),
            Tok::Ident(s) => s.clone(),
            Tok::Sym(c) => c.to_string(),
            _ => String::new(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses HOA text into an automaton.
pub fn parse_hoa(text: &str) -> Result<BuchiAutomaton, HoaError> {
    let mut cur = Cursor { toks: tokenize(text)?, pos: 0 };

    match (cur.next(), cur.next()) {
        (Some(Tok::Header(h)), Some(Tok::Ident(v))) if h == "HOA" && v == "v1" => {}
        _ => return err(1, "file must start with `HOA: v1`"),
    }

    let mut states: Option<usize> = None;
    let mut start: Option<usize> = None;
    let mut ap_names: Option<Vec<String>> = None;
    let mut controllable: Option<Vec<usize>> = None;
    let mut acceptance_seen = false;

    loop {
        let line = cur.line();
        match cur.next() {
            Some(Tok::Body) => break,
            Some(Tok::Header(name)) => {
                let values = cur.header_values();
                match name.as_str() {
                    "States" => match values.as_slice() {
                        [(Tok::Int(n), _)] => states = Some(*n),
                        _ => return err(line, "`States:` expects one integer"),
                    },
                    "Start" => {
                        if start.is_some() {
                            return err(line, "multiple initial states are not supported");
                        }
                        match values.as_slice() {
                            [(Tok::Int(n), _)] => start = Some(*n),
                            _ => return err(line, "`Start:` expects a single state"),
                        }
                    }
                    "AP" => {
                        let Some((Tok::Int(count), _)) = values.first() else {
                            return err(line, "`AP:` expects a count");
                        };
                        let names: Vec<String> = values[1..]
                            .iter()
                            .map(|(t, l)| match t {
                                Tok::Str(s) => Ok(s.clone()),
                                _ => err(*l, "`AP:` names must be quoted strings"),
                            })
                            .collect::<Result<_, _>>()?;
                        if names.len() != *count {
                            return err(line, format!("`AP:` declares {count} propositions but lists {}", names.len()));
                        }
                        ap_names = Some(names);
                    }
                    "controllable-AP" => {
                        let ids = values
                            .iter()
                            .map(|(t, l)| match t {
                                Tok::Int(n) => Ok(*n),
                                _ => err(*l, "`controllable-AP:` expects integers"),
                            })
                            .collect::<Result<_, _>>()?;
                        controllable = Some(ids);
                    }
                    "Acceptance" => {
                        let text = values_text(&values);
                        if text != "1 Inf ( 0 )" {
                            return err(line, format!("unsupported acceptance condition `{text}`; only `1 Inf(0)` is supported"));
                        }
                        acceptance_seen = true;
                    }
                    "acc-name" => {
                        let text = values_text(&values);
                        if text != "Buchi" {
                            return err(line, format!("unsupported acceptance name `{text}`"));
                        }
                    }
                    "HOA" => return err(line, "duplicate `HOA:` header"),
                    _ => {}
                }
            }
            Some(Tok::End | Tok::Abort) | None => return err(line, "missing `--BODY--`"),
            Some(_) => return err(line, "expected a header"),
        }
    }

    let Some(names) = ap_names else { return err(cur.line(), "missing `AP:` header") };
    if !acceptance_seen {
        return err(cur.line(), "missing `Acceptance:` header");
    }
    let Some(initial) = start else { return err(cur.line(), "missing `Start:` header") };
    let controllable = controllable.unwrap_or_else(|| (0..names.len()).collect());
    let mut alphabet = Alphabet::default();
    for (i, name) in names.iter().enumerate() {
        let kind = if controllable.contains(&i) { AtomKind::Controllable } else { AtomKind::Uncontrollable };
        alphabet.push(name, kind).map_err(|e| HoaError { line: 1, message: e.to_string() })?;
    }
    if let Some(&bad) = controllable.iter().find(|&&i| i >= names.len()) {
        return err(1, format!("`controllable-AP:` index {bad} out of range"));
    }

    let mut transitions: Vec<Vec<Transition>> = Vec::new();
    let mut accepting: Vec<bool> = Vec::new();
    let mut declared: Vec<bool> = Vec::new();
    let ensure = |transitions: &mut Vec<Vec<Transition>>, accepting: &mut Vec<bool>, declared: &mut Vec<bool>, n: usize| {
        if transitions.len() <= n {
            transitions.resize(n + 1, Vec::new());
            accepting.resize(n + 1, false);
            declared.resize(n + 1, false);
        }
    };
    let mut current: Option<usize> = None;
    loop {
        let line = cur.line();
        match cur.peek().cloned() {
            Some(Tok::End) => {
                cur.next();
                break;
            }
            Some(Tok::Abort) => return err(line, "automaton aborted"),
            None => return err(line, "missing `--END--`"),
            Some(Tok::Header(h)) if h == "State" => {
                cur.next();
                if cur.peek() == Some(&Tok::Sym('[')) {
                    return err(line, "state labels are not supported");
                }
                let q = cur.expect_int("a state number")?;
                if let Some(Tok::Str(_)) = cur.peek() {
                    cur.next();
                }
                ensure(&mut transitions, &mut accepting, &mut declared, q);
                if declared[q] {
                    return err(line, format!("state {q} declared twice"));
                }
                declared[q] = true;
                if cur.peek() == Some(&Tok::Sym('{')) {
                    cur.next();
                    loop {
                        let l = cur.line();
                        match cur.next() {
                            Some(Tok::Int(0)) => accepting[q] = true,
                            Some(Tok::Int(n)) => return err(l, format!("acceptance set {n} does not exist")),
                            Some(Tok::Sym('}')) => break,
                            _ => return err(l, "malformed acceptance set"),
                        }
                    }
                }
                current = Some(q);
            }
            Some(Tok::Sym('[')) => {
                let Some(q) = current else { return err(line, "edge before any `State:`") };
                cur.next();
                let guard = parse_label(&mut cur, names.len())?;
                cur.expect_sym(']')?;
                let target = cur.expect_int("an edge target")?;
                if cur.peek() == Some(&Tok::Sym('{')) {
                    return err(line, "transition-based acceptance is not supported");
                }
                ensure(&mut transitions, &mut accepting, &mut declared, target);
                transitions[q].push(Transition { guard, target });
            }
            Some(Tok::Int(_)) => return err(line, "implicit edge labels are not supported"),
            Some(_) => return err(line, "unexpected token in body"),
        }
    }
    if let Some(n) = states {
        if transitions.len() > n {
            return err(cur.line(), format!("body mentions state {} but `States:` is {n}", transitions.len() - 1));
        }
        ensure(&mut transitions, &mut accepting, &mut declared, n.saturating_sub(1));
    }
    if initial >= transitions.len() {
        return err(1, format!("initial state {initial} does not exist"));
    }
    BuchiAutomaton::new(alphabet, initial, transitions, accepting).map_err(|e| HoaError { line: 1, message: e.to_string() })
}

fn parse_label(cur: &mut Cursor, atoms: usize) -> Result<Formula, HoaError> {
    let mut lhs = parse_conj(cur, atoms)?;
    while cur.peek() == Some(&Tok::Sym('|')) {
        cur.next();
        lhs = Formula::or(lhs, parse_conj(cur, atoms)?);
    }
    Ok(lhs)
}

fn parse_conj(cur: &mut Cursor, atoms: usize) -> Result<Formula, HoaError> {
    let mut lhs = parse_lit(cur, atoms)?;
    while cur.peek() == Some(&Tok::Sym('&')) {
        cur.next();
        lhs = Formula::and(lhs, parse_lit(cur, atoms)?);
    }
    Ok(lhs)
}

fn parse_lit(cur: &mut Cursor, atoms: usize) -> Result<Formula, HoaError> {
    let line = cur.line();
    match cur.next() {
        Some(Tok::Sym('!')) => Ok(Formula::not(parse_lit(cur, atoms)?)),
        Some(Tok::Sym('(')) => {
            let f = parse_label(cur, atoms)?;
            cur.expect_sym(')')?;
            Ok(f)
        }
        Some(Tok::Ident(s)) if s == "t" => Ok(Formula::True),
        Some(Tok::Ident(s)) if s == "f" => Ok(Formula::falsity()),
        Some(Tok::Ident(s)) if s.starts_with('@') => err(line, "aliases are not supported"),
        Some(Tok::Int(n)) if n < atoms => Ok(Formula::Atom(n)),
        Some(Tok::Int(n)) => err(line, format!("proposition {n} is not declared in `AP:`")),
        _ => err(line, "malformed label"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::translate;

    const TRUE_LOOP: &str = "HOA: v1\nStates: 1\nStart: 0\nAP: 0\nacc-name: Buchi\nAcceptance: 1 Inf(0)\n\
        properties: trans-labels explicit-labels state-acc\n--BODY--\nState: 0 {0}\n[t] 0\n--END--\n";

    #[test]
    fn true_self_loop_round_trips() {
        let a = parse_hoa(TRUE_LOOP).unwrap();
        assert_eq!(a.num_states(), 1);
        assert!(a.is_accepting(0));
        assert_eq!(print_hoa(&a), TRUE_LOOP);
        let translated = translate(&Formula::True, &Alphabet::default()).unwrap();
        assert_eq!(print_hoa(&translated), TRUE_LOOP);
    }

    #[test]
    fn tolerates_comments_names_and_unknown_headers() {
        let text = "HOA: v1 /* comment */\nname: \"x\"\ntool: \"t\" \"1\"\nStart: 0\nAP: 1 \"a\"\nAcceptance: 1 Inf(0)\n\
                    --BODY--\nState: 0 \"init\" {0}\n[0 | !0] 0\n--END--\n";
        let a = parse_hoa(text).unwrap();
        assert_eq!(a.alphabet().name(0), "a");
        assert_eq!(a.alphabet().kind(0), AtomKind::Controllable);
    }

    #[test]
    fn reports_errors_with_lines() {
        let bad_acc = TRUE_LOOP.replace("1 Inf(0)", "2 Inf(0)&Inf(1)");
        let e = parse_hoa(&bad_acc).unwrap_err();
        assert_eq!(e.line, 6);
        assert!(e.message.contains("unsupported acceptance"));

        let bad_label = TRUE_LOOP.replace("[t] 0", "[t & 3] 0");
        let e = parse_hoa(&bad_label).unwrap_err();
        assert_eq!(e.line, 10);

        let no_body = "HOA: v1\nStart: 0\nAP: 0\nAcceptance: 1 Inf(0)\n";
        assert!(parse_hoa(no_body).unwrap_err().message.contains("--BODY--"));

        assert_eq!(parse_hoa("HOA: v2\n").unwrap_err().line, 1);

        let trans_acc = TRUE_LOOP.replace("[t] 0", "[t] 0 {0}");
        assert!(parse_hoa(&trans_acc).unwrap_err().message.contains("transition-based"));
    }
}
