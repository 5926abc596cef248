//! Property suites for the signal, medium and statistics layers and their
//! composition with the protocol.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavearb::harness::{oracle_winner, random_bus};
use wavearb::protocol::{Fidelity, RoundPlan, Scheme};
use wavearb::signal::{
    correlate, demodulate_iq, phase_distance, superpose, synthesize, Envelope, Waveform,
};
use wavearb::{
    run_round, Carrier, Direction, History, LineGeometry, Policy, Priority, TransmissionLine,
};

const FS: f64 = 32e9;
const WINDOW: f64 = 2e-9;
const N: usize = 64;

fn carrier_frequency() -> impl Strategy<Value = f64> {
    (1u32..=8).prop_map(|c| c as f64 / WINDOW)
}

fn tone(f: f64, theta: f64, a: f64, start_tick: i64, len: usize) -> Waveform {
    let c = Carrier::new(f, theta, a).unwrap();
    synthesize(
        &c,
        &Envelope::Constant(1.0),
        start_tick as f64 / FS,
        len as f64 / FS,
        FS,
    )
    .unwrap()
}

/// Independent closed form of a sampled carrier, without the crate's grid
/// phase reduction.
fn direct(f: f64, theta: f64, a: f64, tick: i64) -> f64 {
    a * (TAU * f * tick as f64 / FS + theta).cos()
}

proptest! {
    #[test]
    fn demodulation_recovers_amplitude_and_phase(
        f in carrier_frequency(),
        theta in 0.0..TAU,
        a in 1e-3..10.0f64,
        windows in 0i64..50,
    ) {
        let start = windows * N as i64;
        let w = tone(f, theta, a, start, N);
        let d = demodulate_iq(&w, f, start as f64 / FS, WINDOW).unwrap();
        prop_assert!((d.amplitude - a).abs() <= 1e-9 * a);
        // lag convention: a cos(ωt + θ) reads back as lag -θ
        prop_assert!(phase_distance(d.phase().unwrap(), -theta) <= 1e-9);
    }

    #[test]
    fn distinct_carriers_are_orthogonal(
        c1 in 1u32..=8,
        c2 in 1u32..=8,
        theta in 0.0..TAU,
        a in 1e-3..10.0f64,
    ) {
        prop_assume!(c1 != c2);
        let w = tone(c1 as f64 / WINDOW, theta, a, 0, N);
        let d = demodulate_iq(&w, c2 as f64 / WINDOW, 0.0, WINDOW).unwrap();
        prop_assert!(d.amplitude < 1e-9 * a);
    }

    #[test]
    fn demodulation_is_linear(
        f in carrier_frequency(),
        xs in prop::collection::vec(-1.0..1.0f64, N),
        ys in prop::collection::vec(-1.0..1.0f64, N),
        p in -3.0..3.0f64,
        q in -3.0..3.0f64,
    ) {
        let mix: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| p * x + q * y).collect();
        let dx = correlate(&xs, 0, f, FS, N);
        let dy = correlate(&ys, 0, f, FS, N);
        let dm = correlate(&mix, 0, f, FS, N);
        prop_assert!((dm.in_phase - (p * dx.in_phase + q * dy.in_phase)).abs() < 1e-12);
        prop_assert!((dm.quadrature - (p * dx.quadrature + q * dy.quadrature)).abs() < 1e-12);
    }

    #[test]
    fn anti_phase_copy_cancels(
        f in carrier_frequency(),
        theta in 0.0..TAU,
        a in 1e-3..10.0f64,
        start in 0i64..10_000,
    ) {
        let c = Carrier::new(f, theta, a).unwrap();
        let t0 = start as f64 / FS;
        let x = synthesize(&c, &Envelope::Constant(1.0), t0, WINDOW, FS).unwrap();
        let y = synthesize(&c.shifted(PI), &Envelope::Constant(1.0), t0, WINDOW, FS).unwrap();
        prop_assert!(superpose(&x, &y).unwrap().max_abs() < 1e-12 * a);
    }

    #[test]
    fn synthesis_matches_closed_form(
        f in carrier_frequency(),
        theta in 0.0..TAU,
        a in 1e-3..10.0f64,
        start in 0i64..1000,
    ) {
        let w = tone(f, theta, a, start, N);
        for (i, &s) in w.samples().iter().enumerate() {
            prop_assert!((s - direct(f, theta, a, start + i as i64)).abs() < 1e-9 * a);
        }
    }
}

fn geometry() -> impl Strategy<Value = (usize, Vec<usize>)> {
    (4usize..64).prop_flat_map(|total| {
        (
            Just(total),
            prop::collection::btree_set(1..=total, 1..4).prop_map(|s| s.into_iter().collect()),
        )
    })
}

fn drive(line: &mut TransmissionLine, input: &[f64], ticks: usize) -> Vec<Vec<(f64, f64)>> {
    let taps: Vec<usize> = line.geometry().taps().iter().map(|t| t.position).collect();
    let mut seen = Vec::with_capacity(ticks);
    for t in 0..ticks {
        seen.push(
            taps.iter()
                .map(|&p| {
                    (
                        line.observe_directional(p, Direction::Forward).unwrap(),
                        line.observe_directional(p, Direction::Backward).unwrap(),
                    )
                })
                .collect(),
        );
        if let Some(&x) = input.get(t) {
            line.inject(0, x, 0.0).unwrap();
        }
        line.step();
    }
    seen
}

proptest! {
    #[test]
    fn matched_line_is_pure_delay(
        (total, taps) in geometry(),
        input in prop::collection::vec(-1.0..1.0f64, 1..80),
    ) {
        let g = LineGeometry::new(total, &taps, 0.0, 0.0).unwrap();
        let mut line = TransmissionLine::new(g.clone());
        let ticks = input.len() + 2 * total + 2;
        let seen = drive(&mut line, &input, ticks);
        for (t, row) in seen.iter().enumerate() {
            // skip home: it is the source and never hears its own emission
            for (tap, &(fwd, bwd)) in g.taps().iter().zip(row).skip(1) {
                let d = tap.position;
                let expected = if t >= d { input.get(t - d).copied().unwrap_or(0.0) } else { 0.0 };
                prop_assert_eq!(fwd, expected);
                prop_assert_eq!(bwd, 0.0);
            }
        }
        prop_assert!(line.is_quiet());
    }

    #[test]
    fn far_end_reflection_scales_and_delays(
        (total, taps) in geometry(),
        gamma in -1.0..=1.0f64,
        input in prop::collection::vec(-1.0..1.0f64, 1..40),
    ) {
        let g = LineGeometry::new(total, &taps, 0.0, gamma).unwrap();
        let mut line = TransmissionLine::new(g.clone());
        let seen = drive(&mut line, &input, input.len() + 2 * total + 4);
        for (t, row) in seen.iter().enumerate() {
            for (tap, &(_, bwd)) in g.taps().iter().zip(row) {
                // out to the end, one tick in the terminating cell, back to the tap
                let delay = 2 * total + 1 - tap.position;
                let expected = if t >= delay {
                    gamma * input.get(t - delay).copied().unwrap_or(0.0)
                } else {
                    0.0
                };
                prop_assert!((bwd - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn line_is_linear(
        (total, taps) in geometry(),
        gl in -1.0..=1.0f64,
        gr in -1.0..=1.0f64,
        xs in prop::collection::vec(-1.0..1.0f64, 30),
        ys in prop::collection::vec(-1.0..1.0f64, 30),
        p in -2.0..2.0f64,
    ) {
        let g = LineGeometry::new(total, &taps, gl, gr).unwrap();
        let mix: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x + p * y).collect();
        let ticks = 4 * total + 40;
        let sx = drive(&mut TransmissionLine::new(g.clone()), &xs, ticks);
        let sy = drive(&mut TransmissionLine::new(g.clone()), &ys, ticks);
        let sm = drive(&mut TransmissionLine::new(g), &mix, ticks);
        for t in 0..ticks {
            for i in 0..sm[t].len() {
                let (fx, bx) = sx[t][i];
                let (fy, by) = sy[t][i];
                let (fm, bm) = sm[t][i];
                prop_assert!((fm - (fx + p * fy)).abs() < 1e-12);
                prop_assert!((bm - (bx + p * by)).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn passive_line_stays_bounded(
        (total, taps) in geometry(),
        gl in -1.0..=1.0f64,
        gr in -1.0..=1.0f64,
        input in prop::collection::vec(-1.0..1.0f64, 1..64),
    ) {
        let g = LineGeometry::new(total, &taps, gl, gr).unwrap();
        let mut line = TransmissionLine::new(g);
        for &x in &input {
            line.inject(0, x, 0.0).unwrap();
            line.step();
        }
        let injected = line.energy();
        let bound = injected.sqrt() * (1.0 + 1e-12);
        for _ in 0..1_000_000 {
            line.step();
            prop_assert!(line.energy() <= injected * (1.0 + 1e-12));
            prop_assert!(line.peak() <= bound);
        }
    }
}

fn synthetic_competing(k: usize, rounds: usize) -> impl Strategy<Value = Vec<BTreeSet<usize>>> {
    prop::collection::vec(prop::collection::btree_set(1..=k, 0..=k), rounds)
}

fn policy() -> impl Strategy<Value = Policy> {
    prop_oneof![
        Just(Policy::Static),
        Just(Policy::Rotate),
        Just(Policy::LongestWaitFirst)
    ]
}

fn is_bijection(p: &Priority, k: usize) -> bool {
    let ranks: BTreeSet<usize> = p.ranks().iter().copied().collect();
    p.len() == k && ranks == (1..=k).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Runs the real protocol under each reassigned permutation.
    #[test]
    fn policies_compose_with_protocol(
        (k, sets) in (1usize..=5).prop_flat_map(|k| (Just(k), synthetic_competing(k, 10))),
        policy in policy(),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bus = random_bus(&mut rng, k).unwrap();
        let plan = RoundPlan::recommended(Fidelity::Ideal, Scheme::Parallel, &bus, 0);
        let mut history = History::new(k);
        let mut priority = Priority::identity(k);
        for competing in &sets {
            let outcome = run_round(&bus, &bus.nodes(competing, &priority), &plan).unwrap();
            prop_assert_eq!(outcome.winner, oracle_winner(competing, &priority));
            history.record_round(&outcome, &priority);
            priority = history.reassign_priorities(policy).unwrap();
            prop_assert!(is_bijection(&priority, k));
        }
    }

    #[test]
    fn longest_wait_first_bounds_waiting(
        (k, sets) in (1usize..=8).prop_flat_map(|k| (Just(k), synthetic_competing(k, 40))),
    ) {
        let bus = random_bus(&mut ChaCha8Rng::seed_from_u64(k as u64), k).unwrap();
        let plan = RoundPlan::recommended(Fidelity::Ideal, Scheme::Parallel, &bus, 0);
        let mut history = History::new(k);
        let mut priority = Priority::identity(k);
        for competing in &sets {
            let outcome = run_round(&bus, &bus.nodes(competing, &priority), &plan).unwrap();
            history.record_round(&outcome, &priority);
            prop_assert!(history.waits().iter().all(|&w| (w as usize) < k), "{:?}", history.waits());
            priority = history.reassign_priorities(Policy::LongestWaitFirst).unwrap();
        }
    }
}
