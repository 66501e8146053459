use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rtlplan::automaton::translate;
use rtlplan::formula::{parse_formula, Alphabet, AtomKind, ParseError};
use rtlplan::hoa::print_hoa;
use rtlplan::live::{ServeOptions, Server, DEFAULT_SNAPSHOT_HZ};
use rtlplan::monitor::{monitor, MonitorConfig};
use rtlplan::scenario::Scenario;
use rtlplan::sim::{self, Simulator};
use rtlplan::trace::Trace;
use thiserror::Error;

#[derive(Parser)]
#[command(name = "rtlplan", version, about = "Reactive temporal-logic planning and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Translate a formula, or a scenario's formula, to a Büchi automaton in HOA.
    Translate {
        /// A formula, or the path of a scenario file.
        input: String,
        /// Controllable propositions (comma separated). Undeclared atoms of a
        /// formula default to controllable.
        #[arg(short, long, value_delimiter = ',')]
        controllable: Vec<String>,
        /// Uncontrollable propositions (comma separated).
        #[arg(short, long, value_delimiter = ',')]
        uncontrollable: Vec<String>,
        /// Write the automaton here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a scenario in closed loop and write its trace as CSV.
    Simulate {
        scenario: PathBuf,
        /// Trace destination; stdout when omitted.
        #[arg(short, long)]
        trace: Option<PathBuf>,
        /// Seed for random disturbances.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a recorded trace against its scenario.
    Monitor { trace: PathBuf, scenario: PathBuf },
    /// Run a live scenario and accept steering clients over TCP.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Advance only on client `step` messages instead of the wall clock.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop after this much simulated time (s).
        #[arg(long)]
        max_time: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_SNAPSHOT_HZ)]
        snapshot_hz: u32,
    },
}

#[derive(Debug, Error)]
enum CliError {
    /// Bad input: malformed scenario, formula or trace.
    #[error("{0}")]
    Input(String),
    /// Well-formed input that failed to run or to satisfy its checks.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Input(_) => 2,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

/// Parses `text`, declaring unknown atoms as controllable.
fn parse_open(text: &str, mut alphabet: Alphabet) -> Result<(rtlplan::formula::Formula, Alphabet), CliError> {
    loop {
        match parse_formula(text, &alphabet) {
            Ok(f) => return Ok((f, alphabet)),
            Err(ParseError::Undeclared { name, .. }) => {
                alphabet.push(&name, AtomKind::Controllable).map_err(input_err)?;
            }
            Err(e) => return Err(input_err(e)),
        }
    }
}

fn cmd_translate(input: &str, c: &[String], u: &[String], output: Option<&Path>) -> Result<(), CliError> {
    let path = Path::new(input);
    let automaton = if path.is_file() {
        let sc = Scenario::load(path).map_err(input_err)?;
        translate(&sc.spec.formula, sc.alphabet()).map_err(|e| CliError::Failed(e.to_string()))?
    } else {
        let alphabet = Alphabet::new(c, u).map_err(input_err)?;
        let (formula, alphabet) = parse_open(input, alphabet)?;
        translate(&formula, &alphabet).map_err(|e| CliError::Failed(e.to_string()))?
    };
    let text = print_hoa(&automaton);
    match output {
        Some(p) => std::fs::write(p, text).map_err(io_err(p))?,
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Failed(e.to_string()))?,
    }
    eprintln!("{} states, {} edges", automaton.num_states(), automaton.edge_count());
    Ok(())
}

fn write_trace(trace: &Trace, dest: Option<&Path>) -> Result<(), CliError> {
    let result = match dest {
        Some(p) => File::create(p).map_err(io_err(p)).and_then(|f| trace.write_csv(BufWriter::new(f)).map_err(input_err)),
        None => trace.write_csv(io::stdout().lock()).map_err(input_err),
    };
    result
}

fn cmd_simulate(scenario: &Path, dest: Option<&Path>, seed: u64) -> Result<(), CliError> {
    let sc = Scenario::load(scenario).map_err(input_err)?;
    let (trace, stats, failure) = match sim::run(&sc, seed) {
        Ok((trace, stats)) => (trace, stats, None),
        Err(f) => (f.trace, f.stats, Some(f.error)),
    };
    write_trace(&trace, dest)?;
    eprintln!(
        "{} records, task step mean {:?} (max {:?}), motion step mean {:?} (max {:?})",
        trace.records.len(),
        stats.task_mean(),
        stats.task_max,
        stats.motion_mean(),
        stats.motion_max
    );
    match failure {
        Some(e) => Err(CliError::Failed(e.to_string())),
        None => Ok(()),
    }
}

fn cmd_monitor(trace_path: &Path, scenario: &Path) -> Result<(), CliError> {
    let sc = Scenario::load(scenario).map_err(input_err)?;
    let names: Vec<String> = sc.motion.barriers.iter().map(|b| b.name.clone()).collect();
    let file = File::open(trace_path).map_err(io_err(trace_path))?;
    let trace = Trace::read_csv(io::BufReader::new(file), sc.alphabet(), &names)
        .map_err(|e| CliError::Input(format!("{}: {e}", trace_path.display())))?;
    let report = monitor(&trace, &sc, MonitorConfig::default()).map_err(input_err)?;
    print!("{}", report.render(&trace));
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed("trace violates the scenario".into()))
    }
}

fn cmd_serve(scenario: &Path, addr: String, seed: u64, options: ServeOptions) -> Result<(), CliError> {
    let sc = Scenario::load(scenario).map_err(input_err)?;
    if !sc.live {
        return Err(CliError::Input(format!("{}: scenario is not marked `live = true`", scenario.display())));
    }
    let sim = Simulator::new(sc, seed).map_err(|e| CliError::Failed(e.to_string()))?;
    let server = Server::bind(addr).map_err(input_err)?;
    eprintln!("listening on {}", server.local_addr());
    let summary = server.run(sim, options, Arc::new(AtomicBool::new(false))).map_err(|e| CliError::Failed(e.to_string()))?;
    eprintln!(
        "served {} clients, {:.3} s simulated in {:.3} s, real-time capacity {:.1}x",
        summary.clients,
        summary.sim_time,
        summary.wall_time.as_secs_f64(),
        summary.realtime_capacity()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Translate { input, controllable, uncontrollable, output } => {
            cmd_translate(&input, &controllable, &uncontrollable, output.as_deref())
        }
        Cmd::Simulate { scenario, trace, seed } => cmd_simulate(&scenario, trace.as_deref(), seed),
        Cmd::Monitor { trace, scenario } => cmd_monitor(&trace, &scenario),
        Cmd::Serve { scenario, port, bind, deterministic, seed, max_time, snapshot_hz } => {
            let options = ServeOptions { deterministic, snapshot_hz, max_time };
            cmd_serve(&scenario, format!("{bind}:{port}"), seed, options)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
