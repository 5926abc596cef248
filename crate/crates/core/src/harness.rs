//! Brute-force oracle, equivalence sweeps and the arbitration latency model.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::medium::{LineGeometry, NodeId};
use crate::protocol::{
    decide, run_round, simulate, sliding_demod, Bus, EmissionPhase, Fidelity, NodeConfig,
    RoundOutcome, RoundPlan, RoundTrace, Scheme, Timebase, TokenSet,
};
use crate::statistics::Priority;

/// Winner by definition: the competing node with the best rank.
pub fn oracle_winner(competing: &BTreeSet<NodeId>, priority: &Priority) -> Option<NodeId> {
    competing
        .iter()
        .copied()
        .min_by_key(|&node| priority.rank_of(node))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyScheme {
    WaveParallel,
    SerialDaisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyModel {
    pub scheme: LatencyScheme,
    /// One-way end-to-end propagation delay `D`, seconds.
    pub end_to_end_delay: f64,
    /// Demodulation window `T`, seconds.
    pub window: f64,
    pub nodes: usize,
    /// Per-node decision delay `h` of the serial chain, seconds.
    pub hop_delay: f64,
}

impl LatencyModel {
    pub fn new(
        scheme: LatencyScheme,
        end_to_end_delay: f64,
        window: f64,
        nodes: usize,
        hop_delay: f64,
    ) -> Result<Self> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(end_to_end_delay) && positive(window) && positive(hop_delay)) || nodes == 0 {
            return Err(Error::config(
                "latency model durations and node count must be positive",
            ));
        }
        Ok(LatencyModel {
            scheme,
            end_to_end_delay,
            window,
            nodes,
            hop_delay,
        })
    }
}

/// Time until every participant knows the result.
///
/// Wave: tokens travel out, capture announcements travel back, one window
/// to demodulate: `2D + T`, whatever `k` is. Serial: the token visits the
/// nodes one after another, each spending `h`, plus the round trip: `k·h + 2D`.
pub fn arbitration_latency(model: &LatencyModel) -> f64 {
    let round_trip = 2.0 * model.end_to_end_delay;
    match model.scheme {
        LatencyScheme::WaveParallel => round_trip + model.window,
        LatencyScheme::SerialDaisy => model.nodes as f64 * model.hop_delay + round_trip,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchKind {
    Winner,
    HomeInference,
    NodeInference,
    PhaseCheck,
    Settle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub trial: usize,
    pub mode: Fidelity,
    pub competing: BTreeSet<NodeId>,
    pub priority: Priority,
    pub kind: MismatchKind,
    pub detail: String,
}

/// Compares an outcome with the oracle and, optionally, with the
/// complete-information predicates. Returns `(kind, detail)` per failure.
pub fn check_outcome(
    outcome: &RoundOutcome,
    priority: &Priority,
    complete_information: bool,
) -> Vec<(MismatchKind, String)> {
    let mut problems = Vec::new();
    let expected = oracle_winner(&outcome.truth_competing, priority);
    let expected_claimants: Vec<NodeId> = expected.into_iter().collect();
    if outcome.claimants != expected_claimants {
        problems.push((
            MismatchKind::Winner,
            format!("oracle {expected:?}, claimants {:?}", outcome.claimants),
        ));
    }
    if complete_information {
        if outcome.home_inferred != outcome.truth_competing {
            problems.push((
                MismatchKind::HomeInference,
                format!(
                    "home inferred {:?}, truth {:?}",
                    outcome.home_inferred, outcome.truth_competing
                ),
            ));
        }
        for v in &outcome.verdicts {
            if v.inferred_competitors != outcome.truth_competing {
                problems.push((
                    MismatchKind::NodeInference,
                    format!(
                        "node {} inferred {:?}, truth {:?}",
                        v.node, v.inferred_competitors, outcome.truth_competing
                    ),
                ));
            }
        }
        if !outcome.phase_consistent {
            problems.push((
                MismatchKind::PhaseCheck,
                format!("home phase checks {:?}", outcome.home_phase_checks),
            ));
        }
    }
    problems
}

/// End of the first ideal-mode decision window whose verdicts are fully
/// oracle-consistent, in ticks; `None` if none is found within `2D + 2T`.
pub fn measure_settle(
    bus: &Bus,
    competing: &BTreeSet<NodeId>,
    priority: &Priority,
) -> Result<Option<u64>> {
    let plan = RoundPlan::recommended(Fidelity::Ideal, Scheme::Parallel, bus, 0);
    let window = bus.timebase().window() as u64;
    let horizon = 2 * bus.geometry.total_delay() as u64 + 2 * window;
    let nodes = bus.nodes(competing, priority);
    let trace = simulate(Scheme::Parallel, bus, &nodes, &plan, horizon)?;
    for start in 0..=horizon - window {
        let outcome = decide(Scheme::Parallel, bus, &nodes, &plan, &trace, start)?;
        if check_outcome(&outcome, priority, true).is_empty() {
            return Ok(Some(start + window));
        }
    }
    Ok(None)
}

/// Settle-time bound `2D + T` in ticks.
pub fn settle_bound(bus: &Bus) -> u64 {
    2 * bus.geometry.total_delay() as u64 + bus.timebase().window() as u64
}

/// How fast a cancelled token disappears at a downstream tap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quench {
    /// Tick the canceller started emitting.
    pub onset: u64,
    /// Tick the cancellation front reaches the observer.
    pub front: u64,
    /// Largest sliding-window amplitude seen before the front arrived.
    pub peak_before: f64,
    /// First tick at or after onset from which the amplitude stays below the
    /// limit until the end of the trace.
    pub quenched_at: Option<u64>,
}

/// Sliding-window amplitude of the canceller's token at a downstream
/// observer, before and after the capture. `None` if the canceller never
/// started emitting or the observer is not downstream.
pub fn measure_quench(
    bus: &Bus,
    trace: &RoundTrace,
    canceller: &NodeConfig,
    observer: NodeId,
    limit: f64,
) -> Option<Quench> {
    let onset = trace.onsets[canceller.id - 1]?;
    let spacing = bus
        .geometry
        .position_of(observer)?
        .checked_sub(canceller.tap_position)
        .filter(|&d| d > 0)?;
    let front = onset + spacing as u64;
    let timebase = bus.timebase();
    let frequency = bus.tokens.carrier(canceller.rank).frequency();
    let incoming = &trace.taps[observer].forward;
    let amplitude = |tick: u64| sliding_demod(incoming, tick, frequency, timebase).amplitude;
    let peak_before = (0..front.min(trace.ticks))
        .map(amplitude)
        .fold(0.0, f64::max);
    let mut quenched_at = None;
    for tick in (onset..trace.ticks).rev() {
        if amplitude(tick) < limit {
            quenched_at = Some(tick);
        } else {
            break;
        }
    }
    Some(Quench {
        onset,
        front,
        peak_before,
        quenched_at,
    })
}

/// Scenario family an equivalence sweep draws from.
#[derive(Debug, Clone)]
pub enum GeometryFamily {
    /// Every competing subset on one bus, identity priority.
    Exhaustive(Bus),
    /// Random valid buses with `1..=max_nodes` nodes, random subsets and priorities.
    Random {
        trials: usize,
        max_nodes: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub family: GeometryFamily,
    pub modes: Vec<Fidelity>,
    pub emission: EmissionPhase,
    /// Detection latency in windows (transient mode).
    pub latency_windows: u64,
    pub complete_information: bool,
    pub measure_settle: bool,
}

impl SweepSpec {
    pub fn exhaustive(bus: Bus) -> Self {
        SweepSpec {
            family: GeometryFamily::Exhaustive(bus),
            modes: vec![Fidelity::Ideal, Fidelity::Transient],
            emission: EmissionPhase::Opposing,
            latency_windows: 1,
            complete_information: true,
            measure_settle: true,
        }
    }

    pub fn random(trials: usize, max_nodes: usize, seed: u64) -> Self {
        SweepSpec {
            family: GeometryFamily::Random {
                trials,
                max_nodes,
                seed,
            },
            ..SweepSpec::exhaustive(default_bus())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettleSample {
    pub trial: usize,
    pub nodes: usize,
    pub settle_ticks: u64,
    pub bound_ticks: u64,
    pub settle_s: f64,
    pub bound_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepReport {
    pub trials: usize,
    pub rounds: usize,
    pub mismatches: Vec<Mismatch>,
    pub settle: Vec<SettleSample>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// The bus used throughout: 3 nodes 8 samples apart on a 32-sample line,
/// tokens at 1, 2 and 1.5 GHz for ranks 1, 2, 3, 32 GS/s, 2 ns window.
pub fn default_bus() -> Bus {
    let timebase = Timebase::new(32e9, 2e-9).expect("valid timebase");
    let tokens = TokenSet::new(timebase, &[1e9, 2e9, 1.5e9], 1.0).expect("valid tokens");
    Bus::new(
        LineGeometry::equally_spaced(3, 8).expect("valid geometry"),
        tokens,
    )
}

/// A random valid bus with `nodes` taps: 32 GS/s, 2 ns window, distinct
/// carriers of 1..=8 cycles per window, matched home end and a mildly
/// mismatched far end.
pub fn random_bus(rng: &mut impl Rng, nodes: usize) -> Result<Bus> {
    if !(1..=8).contains(&nodes) {
        return Err(Error::config("random buses support 1..=8 nodes"));
    }
    let timebase = Timebase::new(32e9, 2e-9)?;
    let mut cycles: Vec<u32> = (1..=8).collect();
    cycles.shuffle(rng);
    let frequencies: Vec<f64> = cycles[..nodes]
        .iter()
        .map(|&c| c as f64 / timebase.window_seconds())
        .collect();
    let total_delay = rng.gen_range(nodes.max(4)..=96);
    let mut positions: Vec<usize> = (1..=total_delay).collect();
    positions.shuffle(rng);
    let mut positions = positions[..nodes].to_vec();
    positions.sort_unstable();
    let right = rng.gen_range(-0.2..=0.2);
    let geometry = LineGeometry::new(total_delay, &positions, 0.0, right)?;
    Ok(Bus::new(
        geometry,
        TokenSet::new(timebase, &frequencies, 1.0)?,
    ))
}

fn subset_from_mask(mask: u32, nodes: usize) -> BTreeSet<NodeId> {
    (1..=nodes).filter(|n| mask & (1 << (n - 1)) != 0).collect()
}

struct Trial {
    bus: Bus,
    competing: BTreeSet<NodeId>,
    priority: Priority,
}

/// Runs every trial in every mode and collects disagreements with the oracle.
pub fn equivalence_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    let trials: Vec<Trial> = match &spec.family {
        GeometryFamily::Exhaustive(bus) => {
            let k = bus.geometry.node_count();
            if k > 8 {
                return Err(Error::config("exhaustive sweeps support at most 8 nodes"));
            }
            (0..1u32 << k)
                .map(|mask| Trial {
                    bus: bus.clone(),
                    competing: subset_from_mask(mask, k),
                    priority: Priority::identity(k),
                })
                .collect()
        }
        GeometryFamily::Random {
            trials,
            max_nodes,
            seed,
        } => {
            if !(1..=8).contains(max_nodes) {
                return Err(Error::config("random sweeps support 1..=8 nodes"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..*trials)
                .map(|_| {
                    let k = rng.gen_range(1..=*max_nodes);
                    let bus = random_bus(&mut rng, k)?;
                    let competing = subset_from_mask(rng.gen_range(0..1u32 << k), k);
                    let mut ranks: Vec<usize> = (1..=k).collect();
                    ranks.shuffle(&mut rng);
                    Ok(Trial {
                        bus,
                        competing,
                        priority: Priority::from_ranks(ranks)?,
                    })
                })
                .collect::<Result<_>>()?
        }
    };

    let mut report = SweepReport {
        trials: trials.len(),
        ..SweepReport::default()
    };
    for (idx, trial) in trials.iter().enumerate() {
        let nodes = trial.bus.nodes(&trial.competing, &trial.priority);
        let window = trial.bus.timebase().window() as u64;
        let mut record = |mode: Fidelity, kind: MismatchKind, detail: String| {
            report.mismatches.push(Mismatch {
                trial: idx,
                mode,
                competing: trial.competing.clone(),
                priority: trial.priority.clone(),
                kind,
                detail,
            })
        };
        for &mode in &spec.modes {
            let plan = RoundPlan::recommended(
                mode,
                Scheme::Parallel,
                &trial.bus,
                spec.latency_windows * window,
            )
            .with_emission(spec.emission);
            let outcome = run_round(&trial.bus, &nodes, &plan)?;
            for (kind, detail) in
                check_outcome(&outcome, &trial.priority, spec.complete_information)
            {
                record(mode, kind, detail);
            }
        }
        report.rounds += spec.modes.len();
        if spec.measure_settle && spec.emission == EmissionPhase::Opposing {
            let bound = settle_bound(&trial.bus);
            match measure_settle(&trial.bus, &trial.competing, &trial.priority)? {
                Some(settle) => {
                    let timebase = trial.bus.timebase();
                    report.settle.push(SettleSample {
                        trial: idx,
                        nodes: trial.bus.geometry.node_count(),
                        settle_ticks: settle,
                        bound_ticks: bound,
                        settle_s: timebase.seconds(settle),
                        bound_s: timebase.seconds(bound),
                    });
                    if settle > bound {
                        record(
                            Fidelity::Ideal,
                            MismatchKind::Settle,
                            format!("settled after {settle} ticks, bound {bound}"),
                        );
                    }
                }
                None => record(
                    Fidelity::Ideal,
                    MismatchKind::Settle,
                    "never settled".to_string(),
                ),
            }
        }
    }
    Ok(report)
}
