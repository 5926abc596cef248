//! WebAssembly entry points for the static demo page in `www/`.
//!
//! Every export returns a JSON string; the page parses it and plots with a
//! plain canvas. The `*_json` functions hold the logic so they can be tested
//! natively.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;
use wavearb::harness::{arbitration_latency, default_bus, LatencyModel, LatencyScheme};
use wavearb::protocol::{run_traced, sliding_demod, Fidelity, RoundPlan, Scheme};
use wavearb::runner::demod_direction;
use wavearb::signal::{demodulate_iq, superpose, synthesize, Envelope};
use wavearb::{Carrier, Priority, HOME};

const DETECTION_LATENCY: u64 = 64;

/// One round on the three-node bus. Bit `i` of `mask` makes node `i + 1`
/// compete. Transient mode also mismatches the far end (Γ = -0.1).
pub fn simulate_round_json(mask: u32, transient: bool) -> Result<String, String> {
    let mut bus = default_bus();
    let mode = if transient {
        bus.geometry = bus
            .geometry
            .with_reflections(0.0, -0.1)
            .map_err(|e| e.to_string())?;
        Fidelity::Transient
    } else {
        Fidelity::Ideal
    };
    let competing: BTreeSet<usize> = (1..=3).filter(|n| mask & (1 << (n - 1)) != 0).collect();
    let nodes = bus.nodes(&competing, &Priority::identity(3));
    let plan = RoundPlan::recommended(mode, Scheme::Parallel, &bus, DETECTION_LATENCY);
    let (trace, outcome) =
        run_traced(Scheme::Parallel, &bus, &nodes, &plan).map_err(|e| e.to_string())?;

    let timebase = bus.timebase();
    let taps: Vec<Value> = trace
        .taps
        .iter()
        .map(|tap| {
            let source = tap.direction(demod_direction(tap.node));
            let demod: Vec<Vec<f64>> = bus
                .tokens
                .carriers()
                .iter()
                .map(|c| {
                    (0..trace.ticks)
                        .map(|t| sliding_demod(source, t, c.frequency(), timebase).amplitude)
                        .collect()
                })
                .collect();
            let rf: Vec<f64> = (0..trace.ticks as usize).map(|t| tap.total(t)).collect();
            let verdict = (tap.node != HOME).then(|| outcome.verdict(tap.node));
            json!({
                "node": tap.node,
                "competing": competing.contains(&tap.node),
                "won": verdict.map(|v| v.won),
                "inferred": verdict.map(|v| v.inferred_competitors.clone()),
                "onset": (tap.node != HOME).then(|| trace.onsets[tap.node - 1]).flatten(),
                "rf": rf,
                "demod": demod,
            })
        })
        .collect();
    let result = json!({
        "mode": mode.to_string(),
        "ticks": trace.ticks,
        "sample_rate": timebase.sample_rate(),
        "decision_start": outcome.decision_start,
        "window": timebase.window(),
        "frequencies": bus.tokens.carriers().iter().map(|c| c.frequency()).collect::<Vec<_>>(),
        "winner": outcome.winner,
        "home_inferred": outcome.home_inferred,
        "phase_consistent": outcome.phase_consistent,
        "taps": taps,
    });
    Ok(result.to_string())
}

/// A 1 GHz token plus a capturing wave offset by `phase_offset` radians from
/// it; π cancels, 0 doubles.
pub fn interference_json(phase_offset: f64) -> Result<String, String> {
    let fs = 32e9;
    let window = 2e-9;
    let run = || -> wavearb::Result<Value> {
        let token = Carrier::new(1e9, 0.0, 1.0)?;
        let capture = token.shifted(phase_offset);
        let a = synthesize(&token, &Envelope::Constant(1.0), 0.0, window, fs)?;
        let b = synthesize(&capture, &Envelope::Constant(1.0), 0.0, window, fs)?;
        let sum = superpose(&a, &b)?;
        let demod = demodulate_iq(&sum, 1e9, 0.0, window)?;
        Ok(json!({
            "token": a.samples(),
            "capture": b.samples(),
            "sum": sum.samples(),
            "amplitude": demod.amplitude,
            // closed form |1 + e^{iφ}| for comparison
            "expected": (2.0 + 2.0 * phase_offset.cos()).max(0.0).sqrt(),
            "cancelled": (phase_offset - PI).abs() < 1e-12,
        }))
    };
    run().map(|v| v.to_string()).map_err(|e| e.to_string())
}

/// Wave versus serial latency for `k = 1..=8` on the demo line with a serial
/// hop delay of `hop_ns` nanoseconds.
pub fn latency_table_json(hop_ns: f64) -> Result<String, String> {
    let bus = default_bus();
    let d = bus.end_to_end_delay();
    let t = bus.timebase().window_seconds();
    let rows = (1..=8)
        .map(|k| {
            let wave = LatencyModel::new(LatencyScheme::WaveParallel, d, t, k, hop_ns * 1e-9)?;
            let serial = LatencyModel::new(LatencyScheme::SerialDaisy, d, t, k, hop_ns * 1e-9)?;
            Ok(json!({
                "nodes": k,
                "wave_ns": arbitration_latency(&wave) * 1e9,
                "serial_ns": arbitration_latency(&serial) * 1e9,
            }))
        })
        .collect::<wavearb::Result<Vec<Value>>>()
        .map_err(|e| e.to_string())?;
    Ok(Value::from(rows).to_string())
}

#[wasm_bindgen]
pub fn simulate_round(mask: u32, transient: bool) -> Result<String, JsValue> {
    simulate_round_json(mask, transient).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn interference(phase_offset: f64) -> Result<String, JsValue> {
    interference_json(phase_offset).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn latency_table(hop_ns: f64) -> Result<String, JsValue> {
    latency_table_json(hop_ns).map_err(|e| JsValue::from_str(&e))
}
