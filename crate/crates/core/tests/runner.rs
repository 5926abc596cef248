use std::path::{Path, PathBuf};

use proptest::prelude::*;
use wavearb::runner::{cmd_run, TRACE_HEADER};
use wavearb::signal::correlate;
use wavearb::{load_config, Error};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

struct Row {
    forward: f64,
    backward: f64,
    amplitude: f64,
    phase: Option<f64>,
}

fn read_trace(path: &Path) -> Vec<Row> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TRACE_HEADER));
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 7);
            assert_eq!(cells[0].parse::<usize>().unwrap(), i);
            let num = |c: &str| c.parse::<f64>().unwrap();
            // total is the sum of the directional columns
            assert!((num(cells[2]) - num(cells[3]) - num(cells[4])).abs() < 1e-12);
            Row {
                forward: num(cells[3]),
                backward: num(cells[4]),
                amplitude: num(cells[5]),
                phase: (!cells[6].is_empty()).then(|| num(cells[6])),
            }
        })
        .collect()
}

fn fig7_output() -> &'static Path {
    use std::sync::OnceLock;
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let c = load_config(config("paper_fig7_transient.cfg")).unwrap();
        assert!(cmd_run(&c, dir.path()).unwrap().passed());
        dir
    })
    .path()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Demod columns follow from the rf columns: trailing 64-sample window,
    /// silence before tick 0, forward wave at nodes, backward at home.
    #[test]
    fn trace_demod_is_recomputable(
        node in 0usize..=3,
        rank in 1usize..=3,
        row in 0usize..320,
    ) {
        let name = if node == 0 { format!("home_t{rank}.csv") } else { format!("node{node}_t{rank}.csv") };
        let rows = read_trace(&fig7_output().join("traces").join(name));
        prop_assume!(row < rows.len());
        let f = [1e9, 2e9, 1.5e9][rank - 1];
        let first = (row + 1).saturating_sub(64);
        let series: Vec<f64> = rows[first..=row]
            .iter()
            .map(|r| if node == 0 { r.backward } else { r.forward })
            .collect();
        let d = correlate(&series, first as i64, f, 32e9, 64);
        prop_assert!((d.amplitude - rows[row].amplitude).abs() < 1e-12);
        if let (Some(p), Some(q)) = (d.phase(), rows[row].phase) {
            prop_assert!(wavearb::signal::phase_distance(p, q) < 1e-9);
        }
    }
}

#[test]
fn outputs_are_complete() {
    let dir = fig7_output();
    let jsonl = std::fs::read_to_string(dir.join("rounds.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = jsonl
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["winner"], 1);
    assert_eq!(records[0]["oracle_winner"], 1);
    assert_eq!(records[0]["mismatch"], false);
    assert_eq!(records[0]["home_inferred"], serde_json::json!([1, 2, 3]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mismatches"], 0);
    // 2D + T with D = 1 ns and T = 2 ns
    assert!((report["latency"]["wave_s"].as_f64().unwrap() - 4e-9).abs() < 1e-18);
    assert_eq!(std::fs::read_dir(dir.join("traces")).unwrap().count(), 12);
}

#[test]
fn policy_demo_round_robin() {
    let dir = tempfile::tempdir().unwrap();
    let c = load_config(config("policy_demo.cfg")).unwrap();
    let report = cmd_run(&c, dir.path()).unwrap();
    assert_eq!(report.fairness.wins, vec![3, 3, 3]);
    assert!(report.fairness.max_wait <= 2);
    assert!((report.fairness.jain_index - 1.0).abs() < 1e-12);
    let jsonl = std::fs::read_to_string(dir.path().join("rounds.jsonl")).unwrap();
    let winners: Vec<u64> = jsonl
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["winner"]
                .as_u64()
                .unwrap()
        })
        .collect();
    assert_eq!(winners, vec![1, 2, 3, 1, 2, 3, 1, 2, 3]);
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let c = load_config(config("paper_fig4_ideal.cfg")).unwrap();
    let err = cmd_run(&c, &blocker.join("out")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(!err.is_validation());
}

#[test]
fn missing_config_is_io_error() {
    assert!(matches!(
        load_config("/nonexistent/x.cfg"),
        Err(Error::Io { .. })
    ));
}
