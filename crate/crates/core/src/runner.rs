//! Batch execution of scenarios and the files it leaves behind.
//!
//! `run` writes into the output directory:
//!
//! * `rounds.jsonl`: one JSON record per round (outcome, priority, oracle).
//! * `traces/<tap>_t<rank>.csv`: the first round as seen by every tap, with
//!   the sliding-window demodulation of token `t<rank>`. Nodes demodulate
//!   their incoming (forward) wave, home its backward wave.
//! * `report.json`: fairness, latency figures and the mismatch count.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{
    arbitration_latency, check_outcome, default_bus, equivalence_sweep, measure_settle,
    oracle_winner, settle_bound, LatencyModel, LatencyScheme, MismatchKind, SweepSpec,
};
use crate::medium::{Direction, LineGeometry, NodeId, TransmissionLine, HOME};
use crate::protocol::{
    run_traced, sliding_demod, Bus, RoundOutcome, RoundTrace, Scheme, Timebase, TokenSet,
};
use crate::scenario::ScenarioConfig;
use crate::signal::{
    demodulate_iq, phase_distance, superpose, synthesize, validate_carrier_set, Carrier, Envelope,
};
use crate::statistics::{FairnessReport, History, Priority};

#[derive(Debug, Serialize)]
struct RoundRecord<'a> {
    round: usize,
    priority: &'a Priority,
    oracle_winner: Option<NodeId>,
    mismatch: bool,
    mismatch_kinds: Vec<MismatchKind>,
    #[serde(flatten)]
    outcome: &'a RoundOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyFigures {
    pub nodes: usize,
    pub end_to_end_delay_s: f64,
    pub window_s: f64,
    pub serial_hop_delay_s: f64,
    /// Model `2D + T`.
    pub wave_s: f64,
    /// Model `k·h + 2D`.
    pub serial_s: f64,
    /// Slowest measured settle over the distinct competing sets of the run,
    /// under identity priority (parallel scheme only).
    pub measured_settle_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub scheme: Scheme,
    pub mode: crate::protocol::Fidelity,
    pub seed: u64,
    pub rounds: usize,
    /// Rounds whose outcome disagrees with the oracle or with the
    /// complete-information predicates.
    pub mismatches: usize,
    pub fairness: FairnessReport,
    pub latency: LatencyFigures,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs every round of a scenario in order, feeding each outcome to the
/// priority policy, and writes the output files into `out_dir`.
pub fn cmd_run(config: &ScenarioConfig, out_dir: &Path) -> Result<RunReport> {
    let bus = &config.bus;
    let k = config.node_count();
    let sets = config.round_sets();
    create_dir(&out_dir.join("traces"))?;

    let mut history = History::new(k);
    let mut priority = Priority::identity(k);
    let mut jsonl = String::new();
    let mut mismatches = 0;
    for (idx, competing) in sets.iter().enumerate() {
        let nodes = bus.nodes(competing, &priority);
        let (trace, outcome) = run_traced(config.scheme, bus, &nodes, &config.plan)?;
        if idx == 0 {
            write_traces(bus, &trace, &out_dir.join("traces"))?;
        }
        let complete = config.scheme == Scheme::Parallel;
        let kinds: Vec<MismatchKind> = check_outcome(&outcome, &priority, complete)
            .into_iter()
            .map(|(kind, _)| kind)
            .collect();
        if !kinds.is_empty() {
            mismatches += 1;
        }
        let record = RoundRecord {
            round: idx + 1,
            priority: &priority,
            oracle_winner: oracle_winner(competing, &priority),
            mismatch: !kinds.is_empty(),
            mismatch_kinds: kinds,
            outcome: &outcome,
        };
        jsonl.push_str(&serde_json::to_string(&record).expect("round records serialize"));
        jsonl.push('\n');
        history.record_round(&outcome, &priority);
        priority = history.reassign_priorities(config.policy)?;
    }
    write_file(&out_dir.join("rounds.jsonl"), &jsonl)?;

    let measured_settle_s = if config.scheme == Scheme::Parallel {
        let distinct: BTreeSet<&BTreeSet<NodeId>> = sets.iter().collect();
        let mut worst: Option<u64> = None;
        for competing in distinct {
            let settle = measure_settle(bus, competing, &Priority::identity(k))?;
            // an unsettled round counts as beyond the bound
            let settle = settle.unwrap_or(settle_bound(bus) + 1);
            worst = Some(worst.map_or(settle, |w| w.max(settle)));
        }
        worst.map(|t| bus.timebase().seconds(t))
    } else {
        None
    };
    let report = RunReport {
        name: config.name.clone(),
        scheme: config.scheme,
        mode: config.plan.mode,
        seed: config.seed,
        rounds: sets.len(),
        mismatches,
        fairness: history.fairness_report()?,
        latency: LatencyFigures {
            measured_settle_s,
            ..latency_figures(config, k)?
        },
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&out_dir.join("report.json"), &(json + "\n"))?;
    Ok(report)
}

fn latency_figures(config: &ScenarioConfig, nodes: usize) -> Result<LatencyFigures> {
    let d = config.bus.end_to_end_delay();
    let t = config.bus.timebase().window_seconds();
    let h = config.serial_hop_delay;
    let wave = LatencyModel::new(LatencyScheme::WaveParallel, d, t, nodes, h)?;
    let serial = LatencyModel::new(LatencyScheme::SerialDaisy, d, t, nodes, h)?;
    Ok(LatencyFigures {
        nodes,
        end_to_end_delay_s: d,
        window_s: t,
        serial_hop_delay_s: h,
        wave_s: arbitration_latency(&wave),
        serial_s: arbitration_latency(&serial),
        measured_settle_s: None,
    })
}

/// Name of the trace file for a tap and token rank.
pub fn trace_file_name(node: NodeId, rank: usize) -> String {
    if node == HOME {
        format!("home_t{rank}.csv")
    } else {
        format!("node{node}_t{rank}.csv")
    }
}

/// The wave a tap demodulates: incoming tokens at nodes, returns at home.
pub fn demod_direction(node: NodeId) -> Direction {
    if node == HOME {
        Direction::Backward
    } else {
        Direction::Forward
    }
}

pub const TRACE_HEADER: &str =
    "tick,time_s,rf_total,rf_forward,rf_backward,demod_amplitude,demod_phase";

/// CSV rows for one tap and token, demodulated with a trailing window.
pub fn trace_csv(bus: &Bus, trace: &RoundTrace, node: NodeId, rank: usize) -> String {
    let tap = &trace.taps[node];
    let timebase = bus.timebase();
    let frequency = bus.tokens.carrier(rank).frequency();
    let source = tap.direction(demod_direction(node));
    let mut out = String::with_capacity(64 * trace.ticks as usize);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for tick in 0..trace.ticks {
        let i = tick as usize;
        let d = sliding_demod(source, tick, frequency, timebase);
        let phase = d.phase().map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{tick},{},{},{},{},{},{phase}",
            timebase.seconds(tick),
            tap.total(i),
            tap.forward[i],
            tap.backward[i],
            d.amplitude,
        );
    }
    out
}

fn write_traces(bus: &Bus, trace: &RoundTrace, dir: &Path) -> Result<()> {
    for tap in &trace.taps {
        for rank in 1..=bus.tokens.len() {
            let path = dir.join(trace_file_name(tap.node, rank));
            write_file(&path, &trace_csv(bus, trace, tap.node, rank))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, result: Result<std::result::Result<String, String>>) -> Check {
    let (passed, detail) = match result {
        Ok(Ok(detail)) => (true, detail),
        Ok(Err(detail)) => (false, detail),
        Err(e) => (false, e.to_string()),
    };
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

type Verdict = Result<std::result::Result<String, String>>;

fn demod_identity() -> Verdict {
    let fs = 32e9;
    let window = 2e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_amp, mut worst_phase) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let f = rng.gen_range(1..=8) as f64 / window;
        let theta = rng.gen_range(0.0..2.0 * PI);
        let a = rng.gen_range(0.01..10.0);
        let carrier = Carrier::new(f, theta, a)?;
        let w = synthesize(&carrier, &Envelope::Constant(1.0), 0.0, window, fs)?;
        let d = demodulate_iq(&w, f, 0.0, window)?;
        worst_amp = worst_amp.max((d.amplitude - a).abs() / a);
        worst_phase = worst_phase.max(phase_distance(
            d.phase().unwrap_or(f64::NAN),
            carrier.demodulated_phase(),
        ));
    }
    let detail = format!("amplitude error {worst_amp:e}, phase error {worst_phase:e} rad");
    Ok(if worst_amp < 1e-9 && worst_phase < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    })
}

fn orthogonality() -> Verdict {
    let fs = 32e9;
    let window = 2e-9;
    let freqs = [1e9, 1.5e9, 2e9];
    validate_carrier_set(&freqs, window, fs)?;
    let mut worst = 0.0f64;
    for &f in &freqs {
        let w = synthesize(
            &Carrier::new(f, 0.3, 1.0)?,
            &Envelope::Constant(1.0),
            0.0,
            window,
            fs,
        )?;
        for &g in freqs.iter().filter(|&&g| g != f) {
            worst = worst.max(demodulate_iq(&w, g, 0.0, window)?.amplitude);
        }
    }
    let detail = format!("largest cross-carrier amplitude {worst:e}");
    Ok(if worst < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    })
}

fn cancellation() -> Verdict {
    let fs = 32e9;
    let token = Carrier::new(1.5e9, 0.7, 1.0)?;
    let a = synthesize(&token, &Envelope::Constant(1.0), 0.0, 4e-9, fs)?;
    let b = synthesize(&token.shifted(PI), &Envelope::Constant(1.0), 0.0, 4e-9, fs)?;
    let peak = superpose(&a, &b)?.max_abs();
    let detail = format!("residual peak {peak:e}");
    Ok(if peak < 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    })
}

fn medium_delay_and_bounds() -> Verdict {
    let geometry = LineGeometry::new(40, &[7, 19, 33], 0.0, 0.0)?;
    let mut line = TransmissionLine::new(geometry.clone());
    let input = |t: u64| ((t * 7919) % 13) as f64 - 6.0;
    let mut worst = 0.0f64;
    for t in 0..200u64 {
        for &d in &[7u64, 19, 33] {
            let seen = line.observe_directional(d as usize, Direction::Forward)?;
            let expected = if t >= d { input(t - d) } else { 0.0 };
            worst = worst.max((seen - expected).abs());
        }
        line.inject(0, input(t), 0.0)?;
        line.step();
    }
    // a lossy line with one impulse never grows
    let mut lossy = TransmissionLine::new(geometry.with_reflections(-0.9, 0.9)?);
    lossy.inject(19, 1.0, 1.0)?;
    lossy.step();
    let start = lossy.energy();
    let mut grew = false;
    for _ in 0..10_000 {
        lossy.step();
        grew |= lossy.energy() > start + 1e-12;
    }
    let detail = format!("delay error {worst:e}, energy grew: {grew}");
    Ok(if worst == 0.0 && !grew {
        Ok(detail)
    } else {
        Err(detail)
    })
}

/// Buses used by the exhaustive self-test, one per node count 1..=4.
pub fn selftest_buses() -> Result<Vec<Bus>> {
    let timebase = Timebase::new(32e9, 2e-9)?;
    let mut buses = Vec::new();
    for k in 1..=4 {
        let freqs: Vec<f64> = (0..k).map(|i| (i + 2) as f64 / 2e-9).collect();
        buses.push(Bus::new(
            LineGeometry::equally_spaced(k, 8)?.with_reflections(0.0, -0.1)?,
            TokenSet::new(timebase, &freqs, 1.0)?,
        ));
    }
    Ok(buses)
}

fn exhaustive(bus: Bus) -> Verdict {
    let report = equivalence_sweep(&SweepSpec::exhaustive(bus))?;
    let detail = format!(
        "{} subsets, {} rounds, {} mismatches",
        report.trials,
        report.rounds,
        report.mismatches.len()
    );
    Ok(if report.passed() {
        Ok(detail)
    } else {
        Err(detail)
    })
}

/// Signal and medium property checks plus exhaustive oracle sweeps for
/// `k ≤ 4`.
pub fn cmd_selftest() -> Result<SelftestReport> {
    let mut checks = vec![
        check("demodulation identity", demod_identity()),
        check("carrier orthogonality", orthogonality()),
        check("cancellation identity", cancellation()),
        check("line delay and boundedness", medium_delay_and_bounds()),
        check("exhaustive sweep, default bus", exhaustive(default_bus())),
    ];
    for bus in selftest_buses()? {
        let k = bus.geometry.node_count();
        checks.push(check(
            &format!("exhaustive sweep, k = {k}"),
            exhaustive(bus),
        ));
    }
    Ok(SelftestReport { checks })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub nodes: usize,
    pub wave_s: f64,
    pub serial_s: f64,
}

/// Wave versus serial latency for `k = 2..=8` on the scenario's line.
pub fn cmd_compare(config: &ScenarioConfig) -> Result<Vec<LatencyRow>> {
    (2..=8)
        .map(|k| {
            let f = latency_figures(config, k)?;
            Ok(LatencyRow {
                nodes: k,
                wave_s: f.wave_s,
                serial_s: f.serial_s,
            })
        })
        .collect()
}

pub fn latency_csv(rows: &[LatencyRow]) -> String {
    let mut out = String::from("nodes,wave_s,serial_s\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.nodes, r.wave_s, r.serial_s);
    }
    out
}

/// Writes `latency.csv` into `out_dir` and returns its path.
pub fn write_latency_csv(rows: &[LatencyRow], out_dir: &Path) -> Result<PathBuf> {
    create_dir(out_dir)?;
    let path = out_dir.join("latency.csv");
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(latency_csv(rows).as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        let report = cmd_selftest().unwrap();
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert_eq!(report.checks.len(), 9);
    }

    #[test]
    fn trace_names() {
        assert_eq!(trace_file_name(HOME, 2), "home_t2.csv");
        assert_eq!(trace_file_name(3, 1), "node3_t1.csv");
    }
}
