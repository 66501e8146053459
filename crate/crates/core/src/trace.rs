//! Simulation traces and their CSV form.
//!
//! The file starts with the line `# RTLPLAN-TRACE/1`, followed by a CSV
//! header and one row per motion tick. Units: `t` and `reach_deadline` in s,
//! positions in m, velocities in m/s, barrier and Lyapunov values in m².
//! Valuations are rendered as `a+b` (or `-` for none), booleans as 0/1, and
//! undefined numeric values as `NaN`.

use std::io::{Read, Write};

use thiserror::Error;

use crate::dslib::Vec3;
use crate::formula::{Alphabet, Valuation};
use crate::qpsolver::QpStatus;

pub const TRACE_MAGIC: &str = "# RTLPLAN-TRACE/1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace must start with `{TRACE_MAGIC}`")]
    Magic,
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("header mismatch at column {index}: expected `{expected}`, found `{found}`")]
    Header { index: usize, expected: String, found: String },
    #[error("line {line}, column `{column}`: {message}")]
    Field { line: u64, column: String, message: String },
    #[error("line {line}: time does not increase")]
    NotIncreasing { line: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub x: Vec3,
    pub xdot_ref: Vec3,
    pub sigma_c: Valuation,
    pub sigma_u: Valuation,
    pub state: usize,
    pub behavior: Option<usize>,
    pub planner_tick: bool,
    pub replanned: bool,
    pub barriers: Vec<f64>,
    pub reach_value: f64,
    pub reach_deadline: f64,
    pub clf_value: f64,
    pub eta: f64,
    pub status: QpStatus,
    pub fallback: bool,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub alphabet: Alphabet,
    pub barrier_names: Vec<String>,
    pub records: Vec<TraceRecord>,
}

const LEADING: [&str; 13] =
    ["t", "x", "y", "z", "xdot_ref_x", "xdot_ref_y", "xdot_ref_z", "sigma_c", "sigma_u", "state", "p_m", "planner_tick", "replanned"];
const TRAILING: [&str; 7] = ["B_reach", "reach_deadline", "V", "eta", "qp_status", "fallback", "beta"];

fn parse_status(s: &str) -> Option<QpStatus> {
    [QpStatus::Optimal, QpStatus::Infeasible, QpStatus::MaxIter].into_iter().find(|q| q.as_str() == s)
}

impl Trace {
    pub fn new(alphabet: Alphabet, barrier_names: Vec<String>) -> Self {
        Trace { alphabet, barrier_names, records: Vec::new() }
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = LEADING.iter().map(|s| s.to_string()).collect();
        cols.extend(self.barrier_names.iter().map(|n| format!("B_{n}")));
        cols.extend(TRAILING.iter().map(|s| s.to_string()));
        cols
    }

    pub fn duration(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t)
    }

    fn row(&self, r: &TraceRecord) -> Vec<String> {
        let a = &self.alphabet;
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        let mut row = vec![
            r.t.to_string(),
            r.x.x.to_string(),
            r.x.y.to_string(),
            r.x.z.to_string(),
            r.xdot_ref.x.to_string(),
            r.xdot_ref.y.to_string(),
            r.xdot_ref.z.to_string(),
            r.sigma_c.render(a, a.controllable_mask()),
            r.sigma_u.render(a, a.uncontrollable_mask()),
            r.state.to_string(),
            r.behavior.map_or_else(|| "-".to_string(), |b| a.name(b).to_string()),
            flag(r.planner_tick),
            flag(r.replanned),
        ];
        row.extend(r.barriers.iter().map(f64::to_string));
        row.extend([
            r.reach_value.to_string(),
            r.reach_deadline.to_string(),
            r.clf_value.to_string(),
            r.eta.to_string(),
            r.status.as_str().to_string(),
            flag(r.fallback),
            r.beta.to_string(),
        ]);
        row
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        writeln!(out, "{TRACE_MAGIC}")?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| TraceError::Csv { line: 0, message: e.to_string() };
        w.write_record(self.columns()).map_err(csv_err)?;
        for r in &self.records {
            w.write_record(self.row(r)).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("trace is ASCII")
    }

    /// Reads a trace written for the given alphabet and barrier names.
    pub fn read_csv<R: Read>(input: R, alphabet: &Alphabet, barrier_names: &[String]) -> Result<Trace, TraceError> {
        let mut text = String::new();
        let mut input = input;
        input.read_to_string(&mut text)?;
        let body = match text.split_once('\n') {
            Some((first, rest)) if first.trim_end() == TRACE_MAGIC => rest,
            None if text.trim_end() == TRACE_MAGIC => "",
            _ => return Err(TraceError::Magic),
        };
        let mut trace = Trace::new(alphabet.clone(), barrier_names.to_vec());
        let columns = trace.columns();
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(body.as_bytes());
        let mut rows = reader.records();
        match rows.next() {
            None => {
                return Err(TraceError::Header { index: 0, expected: columns[0].clone(), found: String::new() });
            }
            Some(header) => {
                let header = header.map_err(|e| TraceError::Csv { line: 2, message: e.to_string() })?;
                for (index, expected) in columns.iter().enumerate() {
                    let found = header.get(index).unwrap_or("");
                    if found != expected {
                        return Err(TraceError::Header { index, expected: expected.clone(), found: found.to_string() });
                    }
                }
                if header.len() > columns.len() {
                    return Err(TraceError::Header { index: columns.len(), expected: String::new(), found: header[columns.len()].to_string() });
                }
            }
        }
        let nb = barrier_names.len();
        for (i, row) in rows.enumerate() {
            let line = i as u64 + 3;
            let row = row.map_err(|e| TraceError::Csv { line, message: e.to_string() })?;
            let field = |c: usize| -> Result<&str, TraceError> {
                row.get(c).ok_or_else(|| TraceError::Field { line, column: columns[c].clone(), message: "missing".into() })
            };
            let bad = |c: usize, message: String| TraceError::Field { line, column: columns[c].clone(), message };
            let num = |c: usize| -> Result<f64, TraceError> {
                let s = field(c)?;
                s.parse::<f64>().map_err(|_| bad(c, format!("`{s}` is not a number")))
            };
            let flag = |c: usize| -> Result<bool, TraceError> {
                match field(c)? {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    s => Err(bad(c, format!("`{s}` is not 0 or 1"))),
                }
            };
            let valuation = |c: usize, mask: u64| -> Result<Valuation, TraceError> {
                let v = Valuation::parse_rendered(field(c)?, alphabet).map_err(|m| bad(c, m))?;
                if v.restrict(mask) != v {
                    return Err(bad(c, "atom of the wrong kind".into()));
                }
                Ok(v)
            };
            if row.len() != columns.len() {
                return Err(TraceError::Csv { line, message: format!("expected {} fields, found {}", columns.len(), row.len()) });
            }
            let behavior = match field(10)? {
                "-" => None,
                name => Some(alphabet.lookup(name).filter(|&id| alphabet.controllable_mask() >> id & 1 == 1).ok_or_else(|| {
                    bad(10, format!("`{name}` is not a controllable proposition"))
                })?),
            };
            let status_col = 13 + nb + 4;
            let record = TraceRecord {
                t: num(0)?,
                x: Vec3::new(num(1)?, num(2)?, num(3)?),
                xdot_ref: Vec3::new(num(4)?, num(5)?, num(6)?),
                sigma_c: valuation(7, alphabet.controllable_mask())?,
                sigma_u: valuation(8, alphabet.uncontrollable_mask())?,
                state: field(9)?.parse().map_err(|_| bad(9, "not a state index".into()))?,
                behavior,
                planner_tick: flag(11)?,
                replanned: flag(12)?,
                barriers: (0..nb).map(|j| num(13 + j)).collect::<Result<_, _>>()?,
                reach_value: num(13 + nb)?,
                reach_deadline: num(13 + nb + 1)?,
                clf_value: num(13 + nb + 2)?,
                eta: num(13 + nb + 3)?,
                status: parse_status(field(status_col)?).ok_or_else(|| bad(status_col, format!("unknown status `{}`", &row[status_col])))?,
                fallback: flag(status_col + 1)?,
                beta: num(status_col + 2)?,
            };
            if trace.records.last().is_some_and(|p| record.t <= p.t) {
                return Err(TraceError::NotIncreasing { line });
            }
            trace.records.push(record);
        }
        Ok(trace)
    }
}
