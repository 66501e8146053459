use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rtlplan"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scn"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rtlplan-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn translate_true_has_one_state() {
    let o = run(bin().args(["translate", "true"]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("States: 1\n"));
}

#[test]
fn translated_scenario_round_trips_through_hoa() {
    let out = scratch("stir.hoa");
    let o = run(bin().args(["translate"]).arg(scenario("stir")).arg("-o").arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let parsed = rtlplan::hoa::parse_hoa(&text).unwrap();
    assert_eq!(rtlplan::hoa::print_hoa(&parsed), text);
    let bundled = std::fs::read_to_string(scenario("stir").with_extension("hoa")).unwrap();
    let bundled = rtlplan::hoa::parse_hoa(&bundled).unwrap();
    assert_eq!(parsed.num_states(), bundled.num_states());
}

#[test]
fn bad_formula_is_a_usage_error() {
    let o = run(bin().args(["translate", "G ("]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("column"));
    let o = run(bin().args(["frobnicate"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn whiteboard_simulates_and_passes_the_monitor() {
    let trace = scratch("whiteboard.csv");
    let o = run(bin().arg("simulate").arg(scenario("whiteboard")).arg("--trace").arg(&trace));
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(bin().arg("monitor").arg(&trace).arg(scenario("whiteboard")));
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).ends_with("verdict: pass\n"));
}

#[test]
fn zero_duration_writes_only_the_header() {
    let text = std::fs::read_to_string(scenario("stir")).unwrap().replace("duration = 10.0", "duration = 0.0");
    let scn = scratch("zero.scn");
    std::fs::write(&scn, text).unwrap();
    std::fs::copy(scenario("stir").with_extension("hoa"), scratch("stir.hoa")).unwrap();
    let o = run(bin().arg("simulate").arg(&scn));
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert!(out.starts_with("# RTLPLAN-TRACE/1\nt,x,y,z,"));
}

#[test]
fn truncated_and_corrupted_traces_are_rejected() {
    let o = run(bin().arg("simulate").arg(scenario("stir")));
    assert!(o.status.success());
    let full = stdout(&o);

    let truncated = scratch("truncated.csv");
    let keep: Vec<&str> = full.lines().take(1000).collect();
    std::fs::write(&truncated, keep.join("\n") + "\n").unwrap();
    let o = run(bin().arg("monitor").arg(&truncated).arg(scenario("stir")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trace ends at"), "{}", stderr(&o));

    let corrupted = scratch("corrupted.csv");
    std::fs::write(&corrupted, full.replacen(",optimal,", ",sideways,", 1)).unwrap();
    let o = run(bin().arg("monitor").arg(&corrupted).arg(scenario("stir")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("column `qp_status`"), "{}", stderr(&o));
}

#[test]
fn monitor_fails_a_trace_that_leaves_the_specification() {
    let o = run(bin().arg("simulate").arg(scenario("stir")));
    // hot stays set in the recorded stream while the robot presses the button
    let doctored: String = stdout(&o)
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            if f.len() > 10 && f[10] == "p" {
                f[8] = "h";
            }
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n");
    let path = scratch("doctored.csv");
    std::fs::write(&path, doctored + "\n").unwrap();
    let o = run(bin().arg("monitor").arg(&path).arg(scenario("stir")));
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("verdict: fail"));
}

#[test]
fn serve_requires_a_live_scenario() {
    let o = run(bin().arg("serve").arg(scenario("stir")).args(["--port", "0"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn deterministic_serve_answers_a_scripted_client() {
    let mut child = bin()
        .arg("serve")
        .arg(scenario("stir_live"))
        .args(["--port", "0", "--deterministic", "--max-time", "0.05"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut banner = String::new();
    err.read_line(&mut banner).unwrap();
    let addr = banner.trim().strip_prefix("listening on ").expect("address banner").to_string();

    let stream = TcpStream::connect(&addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    assert_eq!(line, "RTLPLAN/1\n");
    writeln!(writer, r#"{{"type":"set_uncontrollable","name":"hot","value":false}}"#).unwrap();
    writeln!(writer, r#"{{"type":"step","ticks":50}}"#).unwrap();
    let mut types = Vec::new();
    let mut switched_to = None;
    for line in reader.lines() {
        let v: serde_json::Value = serde_json::from_str(&line.unwrap()).unwrap();
        if v["kind"] == "switch" {
            switched_to = v["to"].as_str().map(str::to_string);
        }
        types.push(v["type"].as_str().unwrap().to_string());
    }
    assert!(child.wait().unwrap().success());
    assert_eq!(types[0], "hello");
    assert_eq!(types.iter().filter(|t| *t == "snapshot").count(), 3);
    assert_eq!(switched_to.as_deref(), Some("press"));
}
