use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn harqlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harqlab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const BRQ_SWEEP: &str = r#"{"channel":{"family":"rayleigh","snr_db":10},"figure":"throughput_vs_delay",
  "protocols":["brq","harq-inr"],"t_grid":[2,3],"mc":{"episodes":20000,"seed":5},"output":"fig.csv"}"#;

#[test]
fn sweep_writes_csv_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BRQ_SWEEP);
    let out = dir.path().join("out");
    let o = harqlab(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("fig.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",pass")), "{csv}");
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), &BRQ_SWEEP.replace("\"output\"", "\"colour\":1,\"output\""));
    assert_eq!(harqlab(&["sweep", "--config", &unknown]).status.code(), Some(2));

    let bad_protocol = write_config(dir.path(), &BRQ_SWEEP.replace("\"brq\"", "\"arq\""));
    let o = harqlab(&["sweep", "--config", &bad_protocol]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown protocol"));

    let missing = dir.path().join("nope.json");
    assert_eq!(harqlab(&["sweep", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(harqlab(&["verify", "--criteria", "11"]).status.code(), Some(2));
}

#[test]
fn unsolvable_rows_exit_with_three() {
    // EMS has no step small enough to reach a mean decoding time this close
    // to one; the row is recorded as an error and the run goes on.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"channel":{"family":"rayleigh","snr_db":10},"figure":"throughput_vs_delay",
            "protocols":["brq","ems3"],"t_grid":[1.0000000001,2],"solver":{"fredholm_nodes":256}}"#,
    );
    let out = dir.path().join("out");
    let o = harqlab(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let errors = csv.lines().filter(|l| l.ends_with(",error")).count();
    assert!(errors >= 1, "{csv}");
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn verify_passes_and_catches_a_biased_prediction() {
    let ok = harqlab(&["verify", "--criteria", "1,4,7", "--episodes", "100000"]);
    let text = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(ok.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 3);

    let bad = harqlab(&["verify", "--suite", "fast", "--criteria", "1", "--tamper-brq", "0.01"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).starts_with("[FAIL]  1."));
}

#[test]
fn verify_json_report_is_parseable_shape() {
    let o = harqlab(&["verify", "--criteria", "3", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("{\"criteria\":[{\"id\":3,"), "{last}");
    assert!(last.contains("\"pass\":true"));
}
