use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

fn qkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Value of the kb/s column for the row starting with `name`.
fn kbps(table: &str, name: &str) -> f64 {
    let line = table.lines().find(|l| l.starts_with(name)).unwrap();
    line.split_whitespace().last().unwrap().parse().unwrap()
}

#[test]
fn nominal_rate_table() {
    let o = qkd(&[
        "rates", "--T", "0.302", "--eps", "0.005", "--eta", "0.606", "--vel", "0.041", "--va", "18.5",
        "--rep", "350000", "--beta", "0.898",
    ]);
    assert!(o.status.success());
    let t = stdout(&o);
    for (row, want, tol) in [
        ("I_AB", 365.0, 1.0),
        ("I_BE", 313.0, 1.0),
        ("chi_BE", 316.0, 1.0),
        ("dI Shannon raw", 52.0, 1.0),
        ("dI Holevo raw", 49.0, 1.0),
        ("dI Shannon effective", 15.2, 0.3),
        ("dI Holevo effective", 12.3, 0.4),
    ] {
        let got = kbps(&t, row);
        assert!((got - want).abs() <= tol, "{row}: {got}");
    }
    assert!(t.contains("# seed = 0"));
}

#[test]
fn ideal_channel_leaves_eve_nothing() {
    let o = qkd(&["rates", "--T", "1", "--eps", "0", "--eta", "1", "--vel", "0"]);
    assert!(o.status.success());
    let t = stdout(&o);
    assert_eq!(kbps(&t, "I_BE"), 0.0);
    assert_eq!(kbps(&t, "chi_BE"), 0.0);
}

#[test]
fn distance_curve_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let p = path.to_str().unwrap();
    let args = [
        "rates", "--curve", "distance", "--from", "0", "--to", "100", "--step", "1", "--loss-db-km", "0.2",
        "--seed", "7", "--csv", p,
    ];
    assert!(qkd(&args).status.success());
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# qkd-rates v1 seed=7"));
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        [
            "distance_km", "i_ab_bits", "i_be_bits", "chi_be_bits", "d_shannon_raw", "d_holevo_raw",
            "d_shannon_eff", "d_holevo_eff"
        ]
    );
    let rows: Vec<Vec<f64>> = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 101);
    for w in rows.windows(2) {
        assert!(w[1][4] < w[0][4] && w[1][5] < w[0][5], "raw rates decrease: {w:?}");
    }
    for row in &rows {
        assert!(row[4] >= row[5] && row[6] >= row[7], "Shannon >= Holevo: {row:?}");
    }
    // Deterministic given the flags.
    assert!(qkd(&args).status.success());
    assert_eq!(fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn invalid_parameters_fail() {
    let o = qkd(&["rates", "--T", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("transmission"));
    assert_eq!(qkd(&["rates", "--bogus"]).status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("point.cfg");
    fs::write(&cfg, "# nominal point except T\nT = 0.5\nbeta = 0.898\n").unwrap();
    let c = cfg.to_str().unwrap();
    let from_file = stdout(&qkd(&["rates", "--config", c]));
    assert!(kbps(&from_file, "I_AB") > 400.0);
    let overridden = stdout(&qkd(&["rates", "--config", c, "--T", "0.302"]));
    assert!((kbps(&overridden, "I_AB") - 365.28).abs() < 0.01);
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

const SESSION_CFG: &str = "\
T = 0.8
total-pulses = 8000
test-pulses = 2000
reveal-pulses = 2000
rates = 0,0,0.7,0.93
vacuum-samples = 5000
blocks = 2
seed = 11
auth-key = shared secret
";

/// Runs Alice (listening) and Bob (connecting) as two processes.
fn two_party(dir: &Path, extra_bob: &[&str]) -> (Output, Output) {
    let cfg = dir.join("session.cfg");
    fs::write(&cfg, SESSION_CFG).unwrap();
    let addr = format!("127.0.0.1:{}", free_port());
    let out = dir.to_str().unwrap();
    let c = cfg.to_str().unwrap();
    let alice = Command::new(env!("CARGO_BIN_EXE_qkd"))
        .args(["session", "--role", "alice", "--listen", &addr, "--config", c, "--out-dir", out])
        .spawn()
        .unwrap();
    let mut bob_args = vec!["session", "--role", "bob", "--connect", &addr, "--config", c, "--out-dir", out];
    bob_args.extend_from_slice(extra_bob);
    let bob = qkd(&bob_args);
    (alice.wait_with_output().unwrap(), bob)
}

#[test]
fn session_over_tcp_yields_identical_keys() {
    let dir = tempfile::tempdir().unwrap();
    let (alice, bob) = two_party(dir.path(), &[]);
    assert!(alice.status.success(), "{alice:?}");
    assert!(bob.status.success(), "{bob:?}");
    let ka = fs::read(dir.path().join("alice.key")).unwrap();
    assert!(!ka.is_empty());
    assert_eq!(ka, fs::read(dir.path().join("bob.key")).unwrap());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bob.report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 11);
    assert_eq!(report["report"]["blocks_confirmed"], 2);
    assert!(report["report"]["key_bits"].as_u64().unwrap() > 0);
}

#[test]
fn intercept_resend_session_reports_alarm() {
    let dir = tempfile::tempdir().unwrap();
    let (alice, bob) = two_party(dir.path(), &["--attack", "intercept-resend"]);
    assert_eq!(alice.status.code(), Some(1));
    assert_eq!(bob.status.code(), Some(1));
    for role in ["alice", "bob"] {
        assert!(fs::read(dir.path().join(format!("{role}.key"))).unwrap().is_empty());
        let report: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join(format!("{role}.report.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(report["report"]["key_bits"], 0);
        let alarm = report["report"]["alarm"].as_str().unwrap();
        assert!(alarm.contains("entanglement-breaking"), "{alarm}");
    }
}

#[test]
fn session_without_config_is_a_usage_error() {
    let o = qkd(&["session", "--role", "bob", "--connect", "127.0.0.1:9", "--auth-key", "k"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qkd(&["session", "--role", "bob", "--connect", "127.0.0.1:9", "--config", "/no/such.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn code_build_audit_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ldpc");
    let b = dir.path().join("b.ldpc");
    for p in [&a, &b] {
        let o = qkd(&["codes", "build", "--n", "10000", "--rate", "0.42", "--seed", "3", "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{o:?}");
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "10000 5800 0.42 3");
    assert_eq!(text.lines().count(), 5801);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let audit = qkd(&["codes", "audit", a.to_str().unwrap()]);
    assert!(audit.status.success());
    assert!(stdout(&audit).contains("audit passed"));

    // Repeat the first variable of the first check.
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let first = lines[1].split_whitespace().next().unwrap().to_string();
    lines[1] = format!("{} {first}", lines[1]);
    let bad = dir.path().join("bad.ldpc");
    fs::write(&bad, lines.join("\n")).unwrap();
    let audit = qkd(&["codes", "audit", bad.to_str().unwrap()]);
    assert_eq!(audit.status.code(), Some(1));
    assert!(stdout(&audit).contains("duplicate edges 1"));
}

#[test]
fn simulate_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let blocks = dir.path().join("run.cvqb");
    let csv_path = dir.path().join("est.csv");
    let o = qkd(&["simulate", "--blocks", "3", "--seed", "9", "--out", blocks.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run.cvqb.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    let o = qkd(&["replay", blocks.to_str().unwrap(), "--seed", "4", "--csv", csv_path.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&csv_path).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        let t_hat: f64 = row[1].parse().unwrap();
        let t_se: f64 = row[3].parse().unwrap();
        assert!((t_hat - 0.302).abs() < 4.0 * t_se, "{row:?}");
    }
    assert!(fs::read_to_string(&csv_path).unwrap().starts_with("# qkd-replay v1 seed=4"));
}
