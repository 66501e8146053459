//! Live steering over TCP, protocol `RTLPLAN/1`.
//!
//! Text framing: one message per `\n`-terminated line. The server opens every
//! connection with the literal line `RTLPLAN/1`, then sends JSON objects
//! tagged by `type`, each with a `seq` number that increases along the
//! connection. Broadcast messages (`snapshot`, `event`) carry the same `seq`
//! on every connection.
//!
//! Client to server:
//!
//! ```text
//! {"type":"set_uncontrollable","name":"hot","value":false}
//! {"type":"inject_impulse","displacement":[0.0,0.0,0.1]}
//! {"type":"hold","duration":1.0}
//! {"type":"pause"}   {"type":"resume"}
//! {"type":"step","ticks":5}
//! ```
//!
//! Any client message may carry a `seq` of its own, echoed as `request` in
//! the `ack` or `error` reply. Commands take effect at the next task tick.
//! `step` advances a paused (or `--deterministic`) server by motion ticks and
//! is acknowledged once those ticks have been simulated.
//!
//! Server to client: `hello`, `snapshot`, `event` (`switch`, `replanned`,
//! `monitor`), `ack`, `error`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::Valuation;
use crate::sim::{Command, SimError, Simulator, TickEvents};
use crate::trace::TraceRecord;

pub const PROTOCOL: &str = "RTLPLAN/1";
pub const DEFAULT_SNAPSHOT_HZ: u32 = 50;
const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("snapshot rate {0} Hz must divide the motion rate")]
    SnapshotRate(u32),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    SetUncontrollable { seq: Option<u64>, name: String, value: bool },
    InjectImpulse { seq: Option<u64>, displacement: [f64; 3] },
    Hold { seq: Option<u64>, duration: f64 },
    Pause { seq: Option<u64> },
    Resume { seq: Option<u64> },
    Step { seq: Option<u64>, ticks: u64 },
}

impl ClientMessage {
    pub fn parse(line: &str) -> Result<Self, String> {
        serde_json::from_str(line).map_err(|e| format!("malformed message: {e}"))
    }

    fn seq(&self) -> Option<u64> {
        match self {
            ClientMessage::SetUncontrollable { seq, .. }
            | ClientMessage::InjectImpulse { seq, .. }
            | ClientMessage::Hold { seq, .. }
            | ClientMessage::Pause { seq }
            | ClientMessage::Resume { seq }
            | ClientMessage::Step { seq, .. } => *seq,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            ClientMessage::SetUncontrollable { .. } => "set_uncontrollable",
            ClientMessage::InjectImpulse { .. } => "inject_impulse",
            ClientMessage::Hold { .. } => "hold",
            ClientMessage::Pause { .. } => "pause",
            ClientMessage::Resume { .. } => "resume",
            ClientMessage::Step { .. } => "step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub tick: u64,
    pub x: [f64; 3],
    pub xdot_ref: [f64; 3],
    pub sigma_c: Vec<String>,
    pub sigma_u: Vec<String>,
    pub state: usize,
    pub p_m: Option<String>,
    pub barriers: BTreeMap<String, f64>,
    pub reach: Option<f64>,
    #[serde(rename = "V")]
    pub clf: Option<f64>,
    pub eta: f64,
    pub beta: f64,
    pub qp_status: &'static str,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol: &'static str,
        scenario: String,
        controllable: Vec<String>,
        uncontrollable: Vec<String>,
        barriers: Vec<String>,
        motion_hz: u32,
        task_hz: u32,
        snapshot_hz: u32,
        deterministic: bool,
    },
    Snapshot(Snapshot),
    Event {
        t: f64,
        tick: u64,
        kind: &'static str,
        #[serde(skip_serializing_if = "Option::is_none")]
        from: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        to: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        message: Option<String>,
    },
    Ack {
        request: Option<u64>,
        command: &'static str,
    },
    Error {
        request: Option<u64>,
        message: String,
    },
}

#[derive(Serialize)]
struct Envelope<'a> {
    seq: u64,
    #[serde(flatten)]
    message: &'a ServerMessage,
}

fn encode(seq: u64, message: &ServerMessage) -> String {
    serde_json::to_string(&Envelope { seq, message }).expect("server messages serialize")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    pub deterministic: bool,
    pub snapshot_hz: u32,
    /// Stop once simulated time reaches this many seconds.
    pub max_time: Option<f64>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { deterministic: false, snapshot_hz: DEFAULT_SNAPSHOT_HZ, max_time: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ServeSummary {
    pub ticks: u64,
    pub sim_time: f64,
    pub wall_time: Duration,
    /// Wall-clock time spent simulating, excluding pacing sleeps and waits.
    pub busy_time: Duration,
    pub clients: u64,
}

impl ServeSummary {
    /// Simulated seconds per second of computation; at least 1 means the
    /// loop keeps up with real time.
    pub fn realtime_capacity(&self) -> f64 {
        self.sim_time / self.busy_time.as_secs_f64().max(1e-12)
    }
}

enum Inbound {
    Connected { id: u64, out: Sender<String> },
    Message { id: u64, message: Result<ClientMessage, String> },
    Disconnected { id: u64 },
}

struct Client {
    id: u64,
    out: Sender<String>,
    seq: u64,
}

/// Tracks the automaton states consistent with the sensed stream and flags
/// breaches as they happen.
struct OnlineMonitor {
    states: Vec<bool>,
    breached: Vec<bool>,
}

impl OnlineMonitor {
    fn new(sim: &Simulator) -> Self {
        let a = &sim.scenario().automaton;
        let mut states = vec![false; a.num_states()];
        states[a.initial()] = true;
        OnlineMonitor { states, breached: vec![false; sim.scenario().motion.barriers.len()] }
    }

    fn observe(&mut self, sim: &Simulator, record: &TraceRecord, events: &TickEvents) -> Vec<String> {
        let mut flags = Vec::new();
        let scenario = sim.scenario();
        if record.planner_tick {
            if events.one_hot_violation {
                flags.push("several controllable propositions sensed at once".to_string());
            }
            let a = &scenario.automaton;
            let letter = record.sigma_c.union(record.sigma_u);
            let mut next = vec![false; a.num_states()];
            for q in (0..a.num_states()).filter(|&q| self.states[q]) {
                for s in a.successors(q, letter) {
                    next[s] = true;
                }
            }
            if !next.contains(&true) {
                flags.push(format!("sensed stream left the specification in state {}", record.state));
                next[record.state] = true;
            }
            self.states = next;
        }
        for (i, (&b, cbf)) in record.barriers.iter().zip(&scenario.motion.barriers).enumerate() {
            let below = b < -crate::monitor::DEFAULT_BARRIER_TOLERANCE;
            if below && !self.breached[i] {
                flags.push(format!("barrier {} violated ({b})", cbf.name));
            }
            self.breached[i] = below;
        }
        if record.fallback {
            flags.push("QP infeasible, holding the previous velocity".to_string());
        }
        flags
    }
}

fn names(sim: &Simulator, v: Valuation, mask: u64) -> Vec<String> {
    let a = sim.scenario().alphabet();
    v.restrict(mask).true_atoms().map(|i| a.name(i).to_string()).collect()
}

fn snapshot(sim: &Simulator, tick: u64, r: &TraceRecord) -> Snapshot {
    let a = sim.scenario().alphabet();
    let finite = |v: f64| v.is_finite().then_some(v);
    Snapshot {
        t: r.t,
        tick,
        x: [r.x.x, r.x.y, r.x.z],
        xdot_ref: [r.xdot_ref.x, r.xdot_ref.y, r.xdot_ref.z],
        sigma_c: names(sim, r.sigma_c, a.controllable_mask()),
        sigma_u: names(sim, r.sigma_u, a.uncontrollable_mask()),
        state: r.state,
        p_m: r.behavior.map(|b| a.name(b).to_string()),
        barriers: sim.scenario().motion.barriers.iter().map(|b| b.name.clone()).zip(r.barriers.iter().copied()).collect(),
        reach: finite(r.reach_value),
        clf: finite(r.clf_value),
        eta: r.eta,
        beta: r.beta,
        qp_status: r.status.as_str(),
        fallback: r.fallback,
    }
}

/// A bound live server; `run` drives the simulation.
pub struct Server {
    listener: TcpListener,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Display) -> Result<Self, LiveError> {
        let listener = TcpListener::bind(&addr).map_err(|source| LiveError::Bind { addr: addr.to_string(), source })?;
        Ok(Server { listener })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Serves until `stop` is set or `options.max_time` is reached.
    pub fn run(self, mut sim: Simulator, options: ServeOptions, stop: Arc<AtomicBool>) -> Result<ServeSummary, LiveError> {
        let motion_hz = sim.scenario().motion_hz;
        if options.snapshot_hz == 0 || motion_hz % options.snapshot_hz != 0 {
            return Err(LiveError::SnapshotRate(options.snapshot_hz));
        }
        let decimation = u64::from(motion_hz / options.snapshot_hz);
        let hello = self.hello(&sim, options);
        let (tx, rx) = mpsc::channel();
        let accept_stop = stop.clone();
        let listener = self.listener;
        listener.set_nonblocking(true).map_err(|source| LiveError::Bind { addr: "listener".into(), source })?;
        let acceptor = thread::spawn(move || accept_loop(listener, tx, hello, accept_stop));

        let mut state = Loop {
            clients: Vec::new(),
            broadcast_seq: 1,
            paused: false,
            budget: 0,
            pending_step: Vec::new(),
            monitor: OnlineMonitor::new(&sim),
            summary: ServeSummary::default(),
        };
        let started = Instant::now();
        let mut paced_from = (Instant::now(), sim.time());
        let result = loop {
            if stop.load(Ordering::SeqCst) || options.max_time.is_some_and(|m| sim.time() >= m - 1e-9) {
                break Ok(());
            }
            let free_running = !options.deterministic && !state.paused;
            if !free_running && state.budget == 0 {
                state.flush_steps();
                match rx.recv_timeout(POLL) {
                    Ok(msg) => state.handle(msg, &mut sim, options),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break Ok(()),
                }
                paced_from = (Instant::now(), sim.time());
                continue;
            }
            while let Ok(msg) = rx.try_recv() {
                state.handle(msg, &mut sim, options);
            }
            if state.paused_now(options) && state.budget == 0 {
                continue;
            }
            // one task period, or what is left of the step budget
            let period = sim.scenario().ticks_per_task();
            let batch = if free_running { period - sim.tick_index() % period } else { state.budget.min(period - sim.tick_index() % period) };
            let busy = Instant::now();
            for _ in 0..batch {
                let tick = sim.tick_index();
                let (record, events) = match sim.step() {
                    Ok(out) => out,
                    Err(e) => {
                        let msg = ServerMessage::Event { t: sim.time(), tick, kind: "monitor", from: None, to: None, message: Some(e.to_string()) };
                        state.broadcast(&msg);
                        break;
                    }
                };
                state.publish(&sim, tick, &record, &events, decimation);
                if !free_running {
                    state.budget -= 1;
                }
            }
            state.summary.busy_time += busy.elapsed();
            if free_running {
                let ahead = (sim.time() - paced_from.1) - paced_from.0.elapsed().as_secs_f64();
                if ahead > 0.0 {
                    thread::sleep(Duration::from_secs_f64(ahead));
                }
            } else {
                paced_from = (Instant::now(), sim.time());
            }
        };
        state.flush_steps();
        stop.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        state.summary.ticks = sim.tick_index();
        state.summary.sim_time = sim.time();
        state.summary.wall_time = started.elapsed();
        result.map(|()| state.summary)
    }

    fn hello(&self, sim: &Simulator, options: ServeOptions) -> ServerMessage {
        let sc = sim.scenario();
        let a = sc.alphabet();
        ServerMessage::Hello {
            protocol: PROTOCOL,
            scenario: sc.name.clone(),
            controllable: a.controllable().map(|i| a.name(i).to_string()).collect(),
            uncontrollable: a.uncontrollable().map(|i| a.name(i).to_string()).collect(),
            barriers: sc.motion.barriers.iter().map(|b| b.name.clone()).collect(),
            motion_hz: sc.motion_hz,
            task_hz: sc.task_hz,
            snapshot_hz: options.snapshot_hz,
            deterministic: options.deterministic,
        }
    }
}

struct Loop {
    clients: Vec<Client>,
    broadcast_seq: u64,
    paused: bool,
    budget: u64,
    /// Step requests to acknowledge once the budget is spent.
    pending_step: Vec<(u64, Option<u64>)>,
    monitor: OnlineMonitor,
    summary: ServeSummary,
}

impl Loop {
    fn paused_now(&self, options: ServeOptions) -> bool {
        options.deterministic || self.paused
    }

    fn broadcast(&mut self, message: &ServerMessage) {
        let seq = self.broadcast_seq;
        self.broadcast_seq += 1;
        let line = encode(seq, message);
        self.clients.retain_mut(|c| {
            c.seq = seq;
            c.out.send(line.clone()).is_ok()
        });
    }

    fn reply(&mut self, id: u64, message: &ServerMessage) {
        if let Some(c) = self.clients.iter_mut().find(|c| c.id == id) {
            // replies share the broadcast counter so seq stays monotone everywhere
            let seq = self.broadcast_seq;
            self.broadcast_seq += 1;
            c.seq = seq;
            let _ = c.out.send(encode(seq, message));
        }
    }

    fn flush_steps(&mut self) {
        if self.budget == 0 {
            for (id, request) in std::mem::take(&mut self.pending_step) {
                self.reply(id, &ServerMessage::Ack { request, command: "step" });
            }
        }
    }

    fn handle(&mut self, inbound: Inbound, sim: &mut Simulator, options: ServeOptions) {
        match inbound {
            Inbound::Connected { id, out } => {
                self.summary.clients += 1;
                self.clients.push(Client { id, out, seq: 0 });
            }
            Inbound::Disconnected { id } => self.clients.retain(|c| c.id != id),
            Inbound::Message { id, message: Err(e) } => self.reply(id, &ServerMessage::Error { request: None, message: e }),
            Inbound::Message { id, message: Ok(m) } => {
                let request = m.seq();
                let command = m.name();
                let outcome = self.apply(m, sim, options);
                match outcome {
                    Ok(true) => self.pending_step.push((id, request)),
                    Ok(false) => self.reply(id, &ServerMessage::Ack { request, command }),
                    Err(message) => self.reply(id, &ServerMessage::Error { request, message }),
                }
            }
        }
    }

    /// Applies one command; `Ok(true)` defers the ack until stepping ends.
    fn apply(&mut self, m: ClientMessage, sim: &mut Simulator, options: ServeOptions) -> Result<bool, String> {
        match m {
            ClientMessage::SetUncontrollable { name, value, .. } => {
                let a = sim.scenario().alphabet();
                match a.lookup(&name) {
                    Some(atom) if a.uncontrollable_mask() >> atom & 1 == 1 => {
                        sim.push_command(Command::SetUncontrollable { atom, value });
                        Ok(false)
                    }
                    _ => Err(format!("`{name}` is not an uncontrollable proposition")),
                }
            }
            ClientMessage::InjectImpulse { displacement, .. } => {
                if displacement.iter().any(|v| !v.is_finite()) {
                    return Err("displacement must be finite".into());
                }
                sim.push_command(Command::Impulse(crate::dslib::Vec3::from(displacement)));
                Ok(false)
            }
            ClientMessage::Hold { duration, .. } => {
                if !(duration > 0.0 && duration.is_finite()) {
                    return Err("hold duration must be positive".into());
                }
                sim.push_command(Command::Hold(duration));
                Ok(false)
            }
            ClientMessage::Pause { .. } => {
                self.paused = true;
                Ok(false)
            }
            ClientMessage::Resume { .. } => {
                self.paused = false;
                Ok(false)
            }
            ClientMessage::Step { ticks, .. } => {
                if !self.paused_now(options) {
                    return Err("step requires a paused or deterministic server".into());
                }
                self.budget += ticks;
                Ok(ticks > 0)
            }
        }
    }

    fn publish(&mut self, sim: &Simulator, tick: u64, record: &TraceRecord, events: &TickEvents, decimation: u64) {
        let a = sim.scenario().alphabet();
        let name = |b: Option<usize>| Some(b.map_or("-".to_string(), |b| a.name(b).to_string()));
        let mut out = Vec::new();
        if let Some((from, to)) = events.switched {
            out.push(ServerMessage::Event { t: record.t, tick, kind: "switch", from: name(from), to: name(to), message: None });
        }
        if events.replanned {
            out.push(ServerMessage::Event { t: record.t, tick, kind: "replanned", from: None, to: None, message: None });
        }
        for flag in self.monitor.observe(sim, record, events) {
            out.push(ServerMessage::Event { t: record.t, tick, kind: "monitor", from: None, to: None, message: Some(flag) });
        }
        if tick % decimation == 0 || events.switched.is_some() {
            out.push(ServerMessage::Snapshot(snapshot(sim, tick, record)));
        }
        for m in &out {
            self.broadcast(m);
        }
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, hello: ServerMessage, stop: Arc<AtomicBool>) {
    let next_id = Arc::new(Mutex::new(0u64));
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = {
                    let mut n = next_id.lock().expect("id counter");
                    *n += 1;
                    *n
                };
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let Ok(reader) = stream.try_clone() else { continue };
                let (out_tx, out_rx) = mpsc::channel::<String>();
                let _ = out_tx.send(PROTOCOL.to_string());
                let _ = out_tx.send(encode(0, &hello));
                // registered before the hello can reach the client
                if tx.send(Inbound::Connected { id, out: out_tx }).is_err() {
                    return;
                }
                thread::spawn(move || write_loop(stream, out_rx));
                let tx = tx.clone();
                thread::spawn(move || read_loop(id, reader, tx));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
    }
}

fn write_loop(mut stream: TcpStream, lines: Receiver<String>) {
    for line in lines {
        if stream.write_all(line.as_bytes()).and_then(|()| stream.write_all(b"\n")).is_err() {
            return;
        }
    }
}

fn read_loop(id: u64, stream: TcpStream, tx: Sender<Inbound>) {
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        let line = line.trim();
        if line.is_empty() || line == PROTOCOL {
            continue;
        }
        if tx.send(Inbound::Message { id, message: ClientMessage::parse(line) }).is_err() {
            return;
        }
    }
    let _ = tx.send(Inbound::Disconnected { id });
}
