mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rtlplan::live::{ClientMessage, ServeOptions, ServeSummary, Server, PROTOCOL};
use rtlplan::sim::Simulator;
use serde_json::Value;

struct Running {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: JoinHandle<ServeSummary>,
}

impl Running {
    fn finish(self) -> ServeSummary {
        self.stop.store(true, Ordering::SeqCst);
        self.handle.join().unwrap()
    }
}

fn serve(name: &str, options: ServeOptions) -> Running {
    let sim = Simulator::new(common::scenario(name), 0).unwrap();
    let server = Server::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let handle = thread::spawn(move || server.run(sim, options, flag).unwrap());
    Running { addr, stop, handle }
}

fn deterministic() -> ServeOptions {
    ServeOptions { deterministic: true, ..ServeOptions::default() }
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    last_seq: u64,
}

impl Client {
    fn connect(addr: SocketAddr) -> (Client, Value) {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut first = String::new();
        reader.read_line(&mut first).unwrap();
        assert_eq!(first.trim_end(), PROTOCOL);
        let mut c = Client { reader, writer: stream, last_seq: 0 };
        let hello = c.next();
        assert_eq!(hello["type"], "hello");
        (c, hello)
    }

    fn send(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    fn next_raw(&mut self) -> String {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).expect("server reply within the timeout");
        assert!(n > 0, "server closed the connection");
        line.trim_end().to_string()
    }

    fn next(&mut self) -> Value {
        let v: Value = serde_json::from_str(&self.next_raw()).unwrap();
        let seq = v["seq"].as_u64().expect("every message has a seq");
        assert!(seq >= self.last_seq, "seq went backwards");
        self.last_seq = seq;
        v
    }

    /// Reads messages until one of type `kind`, returning it and those before it.
    fn until(&mut self, kind: &str) -> (Value, Vec<Value>) {
        let mut seen = Vec::new();
        loop {
            let v = self.next();
            if v["type"] == kind {
                return (v, seen);
            }
            seen.push(v);
        }
    }
}

#[test]
fn hello_describes_the_scenario() {
    let server = serve("stir_live", deterministic());
    let (_c, hello) = Client::connect(server.addr);
    assert_eq!(hello["protocol"], PROTOCOL);
    assert_eq!(hello["seq"], 0);
    assert_eq!(hello["uncontrollable"], serde_json::json!(["hot"]));
    assert_eq!(hello["controllable"], serde_json::json!(["stir", "press"]));
    assert_eq!(hello["snapshot_hz"], 50);
    server.finish();
}

#[test]
fn toggle_switches_behavior_within_one_task_tick() {
    let server = serve("stir_live", deterministic());
    let (mut c, _) = Client::connect(server.addr);
    c.send(r#"{"type":"step","ticks":1000,"seq":1}"#);
    let (ack, before) = c.until("ack");
    assert_eq!(ack["request"], 1);
    let snaps: Vec<&Value> = before.iter().filter(|v| v["type"] == "snapshot").collect();
    assert_eq!(snaps.len(), 50, "50 Hz over one second");
    assert!(snaps.iter().skip(1).all(|s| s["p_m"] == "stir"));

    c.send(r#"{"type":"set_uncontrollable","name":"hot","value":false,"seq":2}"#);
    let (ack, _) = c.until("ack");
    assert_eq!((ack["request"].as_u64(), ack["command"].as_str()), (Some(2), Some("set_uncontrollable")));
    c.send(r#"{"type":"step","ticks":5,"seq":3}"#);
    let (ack, during) = c.until("ack");
    assert_eq!(ack["request"], 3);
    let switch = during.iter().find(|v| v["kind"] == "switch").expect("switch event within one task tick");
    assert_eq!((switch["from"].as_str(), switch["to"].as_str()), (Some("stir"), Some("press")));
    assert_eq!(switch["tick"], 1000);
    let snap = during.iter().find(|v| v["type"] == "snapshot").expect("snapshot at the switch");
    assert_eq!(snap["p_m"], "press");
    assert_eq!(snap["sigma_u"], serde_json::json!([]));
    server.finish();
}

#[test]
fn malformed_messages_get_errors_and_keep_the_connection() {
    let server = serve("stir_live", deterministic());
    let (mut c, _) = Client::connect(server.addr);
    for bad in ["not json", r#"{"type":"teleport"}"#, r#"{"type":"hold"}"#, r#"{"type":"pause","extra":1}"#] {
        c.send(bad);
        let reply = c.next();
        assert_eq!(reply["type"], "error", "{bad}");
        assert!(reply["message"].as_str().unwrap().contains("malformed"));
    }
    c.send(r#"{"type":"set_uncontrollable","name":"stir","value":true,"seq":9}"#);
    let reply = c.next();
    assert_eq!((reply["type"].as_str(), reply["request"].as_u64()), (Some("error"), Some(9)));
    c.send(r#"{"type":"hold","duration":-1}"#);
    assert_eq!(c.next()["type"], "error");
    c.send(r#"{"type":"pause"}"#);
    assert_eq!(c.next()["type"], "ack");
    server.finish();
}

#[test]
fn clients_receive_identical_snapshots() {
    let server = serve("stir_live", deterministic());
    let (mut a, _) = Client::connect(server.addr);
    let (mut b, _) = Client::connect(server.addr);
    a.send(r#"{"type":"inject_impulse","displacement":[0.0,0.05,0.0]}"#);
    a.until("ack");
    a.send(r#"{"type":"step","ticks":400}"#);
    let (_, seen_a) = a.until("ack");
    let mut seen_b = Vec::new();
    while seen_b.len() < seen_a.len() {
        seen_b.push(b.next());
    }
    let snaps = |v: &[Value]| v.iter().filter(|m| m["type"] == "snapshot").cloned().collect::<Vec<_>>();
    assert_eq!(snaps(&seen_a).len(), 20);
    assert_eq!(snaps(&seen_a), snaps(&seen_b));
    server.finish();
}

#[test]
fn step_is_refused_while_running() {
    let server = serve("stir_live", ServeOptions::default());
    let (mut c, _) = Client::connect(server.addr);
    c.send(r#"{"type":"step","ticks":5,"seq":4}"#);
    let (err, _) = c.until("error");
    assert_eq!(err["request"], 4);
    c.send(r#"{"type":"pause"}"#);
    c.until("ack");
    c.send(r#"{"type":"step","ticks":5}"#);
    let (ack, _) = c.until("ack");
    assert_eq!(ack["command"], "step");
    server.finish();
}

#[test]
fn free_running_server_keeps_up_with_wall_clock() {
    let options = ServeOptions { max_time: Some(0.5), ..ServeOptions::default() };
    let server = serve("stir_live", options);
    let (mut c, _) = Client::connect(server.addr);
    let summary = server.handle.join().unwrap();
    assert!(summary.sim_time >= 0.5 - 1e-9);
    assert!(summary.wall_time.as_secs_f64() >= 0.45, "paced by wall clock: {:?}", summary.wall_time);
    assert!(summary.realtime_capacity() >= 1.0, "capacity {}", summary.realtime_capacity());
    let (snap, _) = c.until("snapshot");
    assert!(snap["x"].as_array().unwrap().len() == 3);
}

#[test]
fn client_messages_parse() {
    assert_eq!(
        ClientMessage::parse(r#"{"type":"inject_impulse","displacement":[1,2,3]}"#),
        Ok(ClientMessage::InjectImpulse { seq: None, displacement: [1.0, 2.0, 3.0] })
    );
    assert!(ClientMessage::parse(r#"{"type":"step","ticks":-1}"#).is_err());
}
