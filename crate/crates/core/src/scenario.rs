//! Scenario files: everything needed to replay a batch of rounds.
//!
//! Scenarios are TOML. Durations are in seconds and must land on the sample
//! grid; frequencies are in hertz.
//!
//! ```toml
//! name = "three_nodes"
//! sample_rate_hz = 32e9
//! window_s = 2e-9
//! token_amplitude_v = 1.0
//! threshold_fraction = 0.5
//! scheme = "parallel"          # or "serial"
//! mode = "transient"           # or "ideal"
//! policy = "static"            # or "rotate", "longest_wait_first"
//!
//! [line]
//! total_delay_s = 1e-9
//! tap_delays_s = [0.25e-9, 0.5e-9, 0.75e-9]
//! left_reflection = 0.0
//! right_reflection = -0.1
//!
//! [tokens]
//! frequencies_hz = [1e9, 2e9, 1.5e9]   # token of rank 1, 2, 3
//!
//! [timing]
//! detection_latency_s = 2e-9
//!
//! [rounds]
//! competing = [[1, 2, 3], [2, 3]]
//! # or: count = 20, probability = 0.5, seed = 7
//! ```

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::{LineGeometry, NodeId};
use crate::protocol::{Bus, Fidelity, RoundPlan, Scheme, Timebase, TokenSet};
use crate::signal::{to_samples, DEFAULT_THRESHOLD_FRACTION};
use crate::statistics::Policy;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    sample_rate_hz: f64,
    window_s: f64,
    #[serde(default = "one")]
    token_amplitude_v: f64,
    #[serde(default = "default_threshold")]
    threshold_fraction: f64,
    #[serde(default = "default_scheme")]
    scheme: String,
    mode: String,
    #[serde(default = "default_policy")]
    policy: String,
    /// Per-node decision delay of the serial baseline; defaults to the window.
    serial_hop_delay_s: Option<f64>,
    line: RawLine,
    tokens: RawTokens,
    #[serde(default)]
    timing: RawTiming,
    rounds: RawRounds,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    total_delay_s: f64,
    tap_delays_s: Vec<f64>,
    #[serde(default)]
    left_reflection: f64,
    #[serde(default)]
    right_reflection: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTokens {
    frequencies_hz: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTiming {
    detection_latency_s: Option<f64>,
    warmup_s: Option<f64>,
    decision_start_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRounds {
    competing: Option<Vec<Vec<NodeId>>>,
    count: Option<usize>,
    probability: Option<f64>,
    #[serde(default)]
    seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD_FRACTION
}

fn default_scheme() -> String {
    "parallel".into()
}

fn default_policy() -> String {
    "static".into()
}

/// How the competing set of each round is chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundSource {
    Explicit(Vec<BTreeSet<NodeId>>),
    /// Each node competes independently with `probability` in each round.
    Bernoulli {
        count: usize,
        probability: f64,
    },
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub bus: Bus,
    pub scheme: Scheme,
    pub plan: RoundPlan,
    pub policy: Policy,
    pub serial_hop_delay: f64,
    pub rounds: RoundSource,
    pub seed: u64,
    /// Timing fields given explicitly, kept so a mode override can recompute
    /// the defaults.
    #[serde(skip)]
    timing: TimingTicks,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct TimingTicks {
    detection_latency: Option<u64>,
    warmup: Option<u64>,
    decision_start: Option<u64>,
}

fn field<T, E: Display>(name: &str, result: std::result::Result<T, E>) -> Result<T> {
    result.map_err(|e| {
        let msg = e.to_string();
        let msg = msg.strip_prefix("configuration error: ").unwrap_or(&msg);
        if msg.starts_with(name) {
            Error::config(msg)
        } else {
            Error::config(format!("{name}: {msg}"))
        }
    })
}

fn ticks(name: &str, seconds: f64, sample_rate: f64) -> Result<u64> {
    let n = field(name, to_samples(seconds, sample_rate))?;
    u64::try_from(n).map_err(|_| Error::config(format!("{name}: must not be negative")))
}

impl ScenarioConfig {
    /// Parses and validates a scenario from TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<scenario>".into(),
            message: e.message().to_string(),
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawScenario) -> Result<Self> {
        if raw.name.trim().is_empty() {
            return Err(Error::config("name: must not be empty"));
        }
        let timebase = field("window_s", Timebase::new(raw.sample_rate_hz, raw.window_s))?;
        let fs = timebase.sample_rate();

        let total_delay = ticks("line.total_delay_s", raw.line.total_delay_s, fs)?;
        let taps = raw
            .line
            .tap_delays_s
            .iter()
            .map(|&s| ticks("line.tap_delays_s", s, fs).map(|t| t as usize))
            .collect::<Result<Vec<_>>>()?;
        if taps.is_empty() {
            return Err(Error::config(
                "line.tap_delays_s: at least one node is required",
            ));
        }
        let geometry = field(
            "line",
            LineGeometry::new(
                total_delay as usize,
                &taps,
                raw.line.left_reflection,
                raw.line.right_reflection,
            ),
        )?;
        let k = geometry.node_count();

        let tokens = field(
            "tokens.frequencies_hz",
            TokenSet::new(timebase, &raw.tokens.frequencies_hz, raw.token_amplitude_v),
        )?;
        let scheme = match raw.scheme.as_str() {
            "parallel" => Scheme::Parallel,
            "serial" => Scheme::Serial,
            other => {
                return Err(Error::config(format!(
                    "scheme: expected parallel or serial, got {other:?}"
                )))
            }
        };
        match scheme {
            Scheme::Parallel if tokens.len() != k => {
                return Err(Error::config(format!(
                    "tokens.frequencies_hz: parallel scheme needs one token per node ({k}), got {}",
                    tokens.len()
                )))
            }
            Scheme::Serial if tokens.len() != 1 => {
                return Err(Error::config(format!(
                    "tokens.frequencies_hz: serial scheme uses exactly one token, got {}",
                    tokens.len()
                )))
            }
            _ => {}
        }
        let bus = Bus::new(geometry, tokens);

        let mode: Fidelity = field("mode", raw.mode.parse())?;
        let policy: Policy = field("policy", raw.policy.parse())?;
        if scheme == Scheme::Serial && policy != Policy::Static {
            return Err(Error::config(
                "policy: the serial chain ranks nodes by position, only static is meaningful",
            ));
        }
        let serial_hop_delay = raw.serial_hop_delay_s.unwrap_or(timebase.window_seconds());
        if !(serial_hop_delay.is_finite() && serial_hop_delay > 0.0) {
            return Err(Error::config("serial_hop_delay_s: must be positive"));
        }

        let timing = TimingTicks {
            detection_latency: raw
                .timing
                .detection_latency_s
                .map(|s| ticks("timing.detection_latency_s", s, fs))
                .transpose()?,
            warmup: raw
                .timing
                .warmup_s
                .map(|s| ticks("timing.warmup_s", s, fs))
                .transpose()?,
            decision_start: raw
                .timing
                .decision_start_s
                .map(|s| ticks("timing.decision_start_s", s, fs))
                .transpose()?,
        };

        let rounds = match (
            raw.rounds.competing,
            raw.rounds.count,
            raw.rounds.probability,
        ) {
            (Some(sets), None, None) => {
                if sets.is_empty() {
                    return Err(Error::config("rounds.competing: the rounds list is empty"));
                }
                let sets = sets
                    .into_iter()
                    .map(|set| {
                        if let Some(bad) = set.iter().find(|&&n| n == 0 || n > k) {
                            return Err(Error::config(format!(
                                "rounds.competing: node {bad} does not exist (nodes are 1..={k})"
                            )));
                        }
                        Ok(set.into_iter().collect())
                    })
                    .collect::<Result<Vec<_>>>()?;
                RoundSource::Explicit(sets)
            }
            (None, Some(count), Some(probability)) => {
                if count == 0 {
                    return Err(Error::config("rounds.count: the rounds list is empty"));
                }
                if !(0.0..=1.0).contains(&probability) {
                    return Err(Error::config(format!(
                        "rounds.probability: must lie in [0, 1], got {probability}"
                    )));
                }
                RoundSource::Bernoulli { count, probability }
            }
            _ => {
                return Err(Error::config(
                    "rounds: give either competing = [[...]] or both count and probability",
                ))
            }
        };

        let mut config = ScenarioConfig {
            name: raw.name,
            plan: RoundPlan::recommended(mode, scheme, &bus, 0),
            bus,
            scheme,
            policy,
            serial_hop_delay,
            rounds,
            seed: raw.rounds.seed,
            timing,
        };
        config.plan = config.build_plan(mode, raw.threshold_fraction)?;
        Ok(config)
    }

    fn build_plan(&self, mode: Fidelity, threshold_fraction: f64) -> Result<RoundPlan> {
        let window = self.bus.timebase().window() as u64;
        let latency = self.timing.detection_latency.unwrap_or(window);
        let mut plan = RoundPlan::recommended(mode, self.scheme, &self.bus, latency);
        plan.threshold_fraction = threshold_fraction;
        if let Some(warmup) = self.timing.warmup {
            plan.warmup_ticks = warmup;
            plan.decision_start = warmup;
        }
        if let Some(start) = self.timing.decision_start {
            plan.decision_start = start;
        }
        field("timing", plan.validate(self.scheme, &self.bus))?;
        Ok(plan)
    }

    /// Replaces the seed used for Bernoulli rounds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Switches fidelity, recomputing default timing for the new mode.
    pub fn with_mode(mut self, mode: Fidelity) -> Result<Self> {
        self.plan = self.build_plan(mode, self.plan.threshold_fraction)?;
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.bus.geometry.node_count()
    }

    /// Competing set of every round, fully determined by the config and seed.
    pub fn round_sets(&self) -> Vec<BTreeSet<NodeId>> {
        match &self.rounds {
            RoundSource::Explicit(sets) => sets.clone(),
            RoundSource::Bernoulli { count, probability } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let k = self.node_count();
                (0..*count)
                    .map(|_| (1..=k).filter(|_| rng.gen_bool(*probability)).collect())
                    .collect()
            }
        }
    }
}

/// Reads and validates a scenario file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawScenario = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    ScenarioConfig::from_raw(raw)
}
