//! Carrier synthesis, superposition and correlation (I/Q) demodulation.
//!
//! Time is discrete: every waveform lives on the grid `t_n = n / sample_rate`
//! where `n` is an absolute sample index shared by all waveforms of a scenario.
//! Demodulation multiplies by `cos(2πf·t_n)` and `sin(2πf·t_n)` referenced to
//! that absolute origin, so recovered phases are comparable across windows.
//!
//! # Phase convention
//!
//! A [`Carrier`] with phase `θ` is the wave `A·cos(2πf·t + θ)`. The phase
//! reported by [`DemodResult::phase`] is the *lag* `φ` of the input written as
//! `A·cos(2πf·t − φ)`, so demodulating a carrier with phase `θ` yields
//! `φ = −θ (mod 2π)`. Propagation delay therefore shows up as a positive,
//! growing demodulated phase.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when snapping a time in seconds onto the sample grid.
const GRID_TOLERANCE: f64 = 1e-6;

/// Tolerance used when checking that a window holds an integer cycle count.
const CYCLE_TOLERANCE: f64 = 1e-6;

/// Minimum ratio of sample rate to the highest carrier frequency.
pub const MIN_OVERSAMPLING: f64 = 8.0;

/// Default fraction of the expected amplitude at which a token counts as present.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.5;

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_phase(phase: f64) -> f64 {
    let wrapped = phase.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Smallest absolute angular distance between two phases, in `[0, π]`.
pub fn phase_distance(a: f64, b: f64) -> f64 {
    let d = normalize_phase(a - b);
    d.min(TAU - d)
}

/// Converts a duration in seconds to a whole number of samples.
pub fn to_samples(seconds: f64, sample_rate: f64) -> Result<i64> {
    let exact = seconds * sample_rate;
    let rounded = exact.round();
    if !exact.is_finite() || (exact - rounded).abs() > GRID_TOLERANCE {
        return Err(Error::config(format!(
            "{seconds:e} s is not a multiple of the sample period 1/{sample_rate:e} Hz"
        )));
    }
    Ok(rounded as i64)
}

/// Number of whole carrier cycles in a window, or an error if it is not an integer.
pub fn cycles_per_window(frequency: f64, window: f64) -> Result<u64> {
    let exact = frequency * window;
    let rounded = exact.round();
    if !exact.is_finite() || rounded < 1.0 || (exact - rounded).abs() > CYCLE_TOLERANCE {
        return Err(Error::config(format!(
            "non-integer cycles per window: {frequency:e} Hz over {window:e} s gives {exact} cycles"
        )));
    }
    Ok(rounded as u64)
}

/// A sinusoidal carrier `amplitude · cos(2π·frequency·t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Carrier {
    frequency: f64,
    phase: f64,
    amplitude: f64,
}

impl Carrier {
    pub fn new(frequency: f64, phase: f64, amplitude: f64) -> Result<Self> {
        if !(frequency.is_finite() && frequency > 0.0) {
            return Err(Error::config(format!(
                "carrier frequency must be positive, got {frequency}"
            )));
        }
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::config(format!(
                "carrier amplitude must be non-negative, got {amplitude}"
            )));
        }
        if !phase.is_finite() {
            return Err(Error::config("carrier phase must be finite"));
        }
        Ok(Carrier {
            frequency,
            phase: normalize_phase(phase),
            amplitude,
        })
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    /// Phase in `[0, 2π)`.
    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Same carrier shifted by `offset` radians.
    pub fn shifted(&self, offset: f64) -> Carrier {
        Carrier {
            phase: normalize_phase(self.phase + offset),
            ..*self
        }
    }

    /// Same carrier with a different amplitude.
    pub fn with_amplitude(&self, amplitude: f64) -> Carrier {
        Carrier { amplitude, ..*self }
    }

    /// The carrier as seen after a pure delay of `ticks` samples.
    pub fn delayed(&self, ticks: i64, sample_rate: f64) -> Carrier {
        self.shifted(-grid_phase(self.frequency, ticks, sample_rate))
    }

    /// Phase that [`demodulate_iq`] recovers for this carrier (the lag `−θ`).
    pub fn demodulated_phase(&self) -> f64 {
        normalize_phase(-self.phase)
    }

    /// Instantaneous value at absolute sample index `tick`.
    pub fn sample(&self, tick: i64, sample_rate: f64) -> f64 {
        self.amplitude * (grid_phase(self.frequency, tick, sample_rate) + self.phase).cos()
    }
}

/// `2π·f·tick/fs` reduced into `[0, 2π)` before it reaches `cos`/`sin`.
fn grid_phase(frequency: f64, tick: i64, sample_rate: f64) -> f64 {
    let turns = frequency / sample_rate * tick as f64;
    TAU * turns.rem_euclid(1.0)
}

/// Amplitude schedule applied on top of a carrier.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    Constant(f64),
    /// On-off keying: level 1 for `true`, 0 for `false`, one bit per `bit_duration`
    /// seconds starting at the waveform start. Samples past the last bit are 0.
    Ook {
        bits: Vec<bool>,
        bit_duration: f64,
    },
}

impl Envelope {
    fn levels(&self, len: usize, sample_rate: f64) -> Result<Vec<f64>> {
        match self {
            Envelope::Constant(level) => {
                if !(level.is_finite() && *level >= 0.0) {
                    return Err(Error::config(format!(
                        "envelope level must be non-negative, got {level}"
                    )));
                }
                Ok(vec![*level; len])
            }
            Envelope::Ook { bits, bit_duration } => {
                let per_bit = to_samples(*bit_duration, sample_rate)?;
                if per_bit <= 0 {
                    return Err(Error::config("OOK bit duration must be positive"));
                }
                let per_bit = per_bit as usize;
                Ok((0..len)
                    .map(|n| match bits.get(n / per_bit) {
                        Some(true) => 1.0,
                        _ => 0.0,
                    })
                    .collect())
            }
        }
    }
}

/// A uniformly sampled voltage sequence starting at absolute sample index `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    sample_rate: f64,
    start: i64,
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(sample_rate: f64, start: i64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::config(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Waveform {
            sample_rate,
            start,
            samples,
        })
    }

    pub fn zeros(sample_rate: f64, start: i64, len: usize) -> Result<Self> {
        Waveform::new(sample_rate, start, vec![0.0; len])
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Absolute index of the first sample.
    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn start_time(&self) -> f64 {
        self.start as f64 / self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// Samples `envelope · carrier` over `[start_time, start_time + duration)`.
pub fn synthesize(
    carrier: &Carrier,
    envelope: &Envelope,
    start_time: f64,
    duration: f64,
    sample_rate: f64,
) -> Result<Waveform> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::config("sample rate must be positive"));
    }
    if sample_rate < MIN_OVERSAMPLING * carrier.frequency() {
        return Err(Error::config(format!(
            "sample rate {sample_rate:e} Hz is below {MIN_OVERSAMPLING}x the carrier frequency {:e} Hz",
            carrier.frequency()
        )));
    }
    let start = to_samples(start_time, sample_rate)?;
    let len = to_samples(duration, sample_rate)?;
    if len < 0 {
        return Err(Error::config("duration must be non-negative"));
    }
    let len = len as usize;
    let levels = envelope.levels(len, sample_rate)?;
    let samples = levels
        .iter()
        .enumerate()
        .map(|(n, level)| level * carrier.sample(start + n as i64, sample_rate))
        .collect();
    Waveform::new(sample_rate, start, samples)
}

/// Pointwise sum of two waveforms on the same grid.
pub fn superpose(a: &Waveform, b: &Waveform) -> Result<Waveform> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::usage(format!(
            "cannot superpose waveforms sampled at {:e} Hz and {:e} Hz",
            a.sample_rate, b.sample_rate
        )));
    }
    if a.start != b.start || a.len() != b.len() {
        return Err(Error::usage(format!(
            "cannot superpose waveforms covering samples {}+{} and {}+{}",
            a.start,
            a.len(),
            b.start,
            b.len()
        )));
    }
    let samples = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| x + y)
        .collect();
    Waveform::new(a.sample_rate, a.start, samples)
}

/// In-phase/quadrature correlation result for one carrier over one window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DemodResult {
    pub in_phase: f64,
    pub quadrature: f64,
    pub amplitude: f64,
}

impl DemodResult {
    pub fn from_iq(in_phase: f64, quadrature: f64) -> Self {
        DemodResult {
            in_phase,
            quadrature,
            amplitude: in_phase.hypot(quadrature),
        }
    }

    /// Recovered lag in `[0, 2π)`; `None` when nothing was received.
    pub fn phase(&self) -> Option<f64> {
        (self.amplitude > 0.0).then(|| normalize_phase(self.quadrature.atan2(self.in_phase)))
    }

    /// Component of the received phasor along a reference lag (coherent detection).
    pub fn project(&self, lag: f64) -> f64 {
        self.in_phase * lag.cos() + self.quadrature * lag.sin()
    }
}

/// Correlates `samples` (the first at absolute index `first_tick`) against a
/// carrier at `frequency`, normalising by `2 / window_len`.
///
/// `window_len` may exceed `samples.len()`; missing samples count as zero. No
/// validation is done here, see [`demodulate_iq`] for the checked form.
pub fn correlate(
    samples: &[f64],
    first_tick: i64,
    frequency: f64,
    sample_rate: f64,
    window_len: usize,
) -> DemodResult {
    let (mut i_acc, mut q_acc) = (0.0, 0.0);
    for (n, &v) in samples.iter().enumerate() {
        let (s, c) = grid_phase(frequency, first_tick + n as i64, sample_rate).sin_cos();
        i_acc += v * c;
        q_acc += v * s;
    }
    let scale = 2.0 / window_len as f64;
    DemodResult::from_iq(scale * i_acc, scale * q_acc)
}

/// Recovers amplitude and lag of the `frequency` component of `w` over a window.
///
/// The window must contain a whole number of carrier cycles; that is what makes
/// distinct carriers of a scenario exactly orthogonal under the discrete sum.
pub fn demodulate_iq(
    w: &Waveform,
    frequency: f64,
    window_start: f64,
    window_duration: f64,
) -> Result<DemodResult> {
    if !(frequency.is_finite() && frequency > 0.0) {
        return Err(Error::config("demodulation frequency must be positive"));
    }
    cycles_per_window(frequency, window_duration)?;
    let double_turns = 2.0 * frequency / w.sample_rate;
    if (double_turns - double_turns.round()).abs() < CYCLE_TOLERANCE {
        return Err(Error::config(format!(
            "2 x {frequency:e} Hz is a multiple of the sample rate {:e} Hz",
            w.sample_rate
        )));
    }
    let first = to_samples(window_start, w.sample_rate)?;
    let len = to_samples(window_duration, w.sample_rate)?;
    let offset = first - w.start;
    if len <= 0 || offset < 0 || (offset + len) as usize > w.len() {
        return Err(Error::usage(format!(
            "demodulation window {first}+{len} lies outside waveform {}+{}",
            w.start,
            w.len()
        )));
    }
    let slice = &w.samples[offset as usize..(offset + len) as usize];
    Ok(correlate(
        slice,
        first,
        frequency,
        w.sample_rate,
        len as usize,
    ))
}

/// True iff the demodulated amplitude reaches `threshold_fraction` of the expected one.
pub fn detect_token(d: &DemodResult, expected_amplitude: f64, threshold_fraction: f64) -> bool {
    debug_assert!(threshold_fraction > 0.0 && threshold_fraction < 1.0);
    d.amplitude >= threshold_fraction * expected_amplitude
}

/// Checks that a carrier family is orthogonal over `window` seconds at `sample_rate`.
///
/// Returns the per-carrier cycle counts.
pub fn validate_carrier_set(
    frequencies: &[f64],
    window: f64,
    sample_rate: f64,
) -> Result<Vec<u64>> {
    let mut cycles = Vec::with_capacity(frequencies.len());
    for (idx, &f) in frequencies.iter().enumerate() {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::config(format!(
                "carrier {} frequency must be positive",
                idx + 1
            )));
        }
        if sample_rate < MIN_OVERSAMPLING * f {
            return Err(Error::config(format!(
                "carrier {}: sample rate {sample_rate:e} Hz is below {MIN_OVERSAMPLING}x {f:e} Hz",
                idx + 1
            )));
        }
        let c = cycles_per_window(f, window)
            .map_err(|e| Error::config(format!("carrier {}: {e}", idx + 1)))?;
        if cycles.contains(&c) {
            return Err(Error::config(format!(
                "carrier {} repeats cycle count {c}; carriers must be pairwise orthogonal",
                idx + 1
            )));
        }
        cycles.push(c);
    }
    Ok(cycles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const FS: f64 = 32e9;
    const WINDOW: f64 = 2e-9;

    fn carrier(f: f64, phase: f64, a: f64) -> Carrier {
        Carrier::new(f, phase, a).unwrap()
    }

    fn tone(f: f64, phase: f64, a: f64) -> Waveform {
        synthesize(
            &carrier(f, phase, a),
            &Envelope::Constant(1.0),
            0.0,
            WINDOW,
            FS,
        )
        .unwrap()
    }

    #[test]
    fn synthesize_starts_at_peak() {
        let w = tone(1e9, 0.0, 1.0);
        assert_eq!(w.samples()[0], 1.0);
    }

    #[test]
    fn synthesize_quarter_period_is_zero() {
        let w = tone(1e9, 0.0, 1.0);
        assert_eq!(w.len(), 64);
        assert!(w.samples()[8].abs() < 1e-12);
    }

    #[test]
    fn ook_zero_bit_is_silent() {
        let env = Envelope::Ook {
            bits: vec![false],
            bit_duration: WINDOW,
        };
        let w = synthesize(&carrier(1e9, 0.0, 1.0), &env, 0.0, WINDOW, FS).unwrap();
        assert!(w.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn ook_keys_per_bit() {
        let env = Envelope::Ook {
            bits: vec![true, false],
            bit_duration: 1e-9,
        };
        let w = synthesize(&carrier(1e9, 0.0, 1.0), &env, 0.0, WINDOW, FS).unwrap();
        assert!(w.samples()[..32].iter().any(|&s| s != 0.0));
        assert!(w.samples()[32..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn synthesize_rejects_off_grid_duration() {
        let err = synthesize(
            &carrier(1e9, 0.0, 1.0),
            &Envelope::Constant(1.0),
            0.0,
            1.01e-11,
            FS,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn synthesize_rejects_undersampling() {
        let err = synthesize(
            &carrier(5e9, 0.0, 1.0),
            &Envelope::Constant(1.0),
            0.0,
            WINDOW,
            FS,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn opposite_phase_cancels() {
        let a = tone(1e9, 0.3, 1.0);
        let b = tone(1e9, 0.3 + PI, 1.0);
        assert!(superpose(&a, &b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn in_phase_adds_amplitudes() {
        let sum = superpose(&tone(1.5e9, 1.0, 0.25), &tone(1.5e9, 1.0, 0.5)).unwrap();
        let expected = tone(1.5e9, 1.0, 0.75);
        for (x, y) in sum.samples().iter().zip(expected.samples()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zeros_are_additive_identity() {
        let w = tone(2e9, 0.1, 0.9);
        let z = Waveform::zeros(FS, 0, w.len()).unwrap();
        assert_eq!(superpose(&w, &z).unwrap(), w);
    }

    #[test]
    fn superpose_rejects_mismatch() {
        let a = tone(1e9, 0.0, 1.0);
        let b = Waveform::zeros(FS, 0, 10).unwrap();
        assert!(matches!(superpose(&a, &b), Err(Error::Usage(_))));
        let c = Waveform::zeros(16e9, 0, a.len()).unwrap();
        assert!(matches!(superpose(&a, &c), Err(Error::Usage(_))));
    }

    #[test]
    fn demod_recovers_amplitude() {
        let d = demodulate_iq(&tone(1e9, 0.0, 1.0), 1e9, 0.0, WINDOW).unwrap();
        assert!((d.amplitude - 1.0).abs() < 1e-12);
        assert!(phase_distance(d.phase().unwrap(), 0.0) < 1e-12);
    }

    #[test]
    fn demod_cross_carrier_is_zero() {
        let d = demodulate_iq(&tone(1e9, 0.0, 1.0), 2e9, 0.0, WINDOW).unwrap();
        assert!(d.in_phase.abs() < 1e-12 && d.quadrature.abs() < 1e-12);
    }

    #[test]
    fn demod_phase_is_lag() {
        // A·cos(ωt − φ) demodulates to phase φ
        let d = demodulate_iq(&tone(1.5e9, -0.7, 2.0), 1.5e9, 0.0, WINDOW).unwrap();
        assert!(phase_distance(d.phase().unwrap(), 0.7) < 1e-12);
        assert!(phase_distance(carrier(1.5e9, -0.7, 2.0).demodulated_phase(), 0.7) < 1e-15);
    }

    // Independent oracle: direct complex-exponential correlation over absolute time.
    fn oracle_amplitude(samples: &[f64], f: f64) -> f64 {
        let n = samples.len() as f64;
        let (mut re, mut im) = (0.0_f64, 0.0_f64);
        for (k, &v) in samples.iter().enumerate() {
            let t = k as f64 / FS;
            let arg = -TAU * f * t;
            re += v * arg.cos();
            im += v * arg.sin();
        }
        2.0 / n * re.hypot(im)
    }

    #[test]
    fn demod_separates_three_carriers() {
        let mix = [(1e9, 0.7), (1.5e9, 0.4), (2e9, 1.1)]
            .iter()
            .map(|&(f, a)| tone(f, 0.0, a))
            .reduce(|x, y| superpose(&x, &y).unwrap())
            .unwrap();
        for (f, a) in [(1e9, 0.7), (1.5e9, 0.4), (2e9, 1.1)] {
            let oracle = oracle_amplitude(mix.samples(), f);
            assert!((oracle - a).abs() < 1e-12, "oracle {oracle} for {f}");
            let d = demodulate_iq(&mix, f, 0.0, WINDOW).unwrap();
            assert!((d.amplitude - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn demod_rejects_fractional_cycles() {
        let err = demodulate_iq(&tone(1e9, 0.0, 1.0), 1.3e9, 0.0, WINDOW).unwrap_err();
        assert!(err.to_string().contains("non-integer cycles per window"));
    }

    #[test]
    fn demod_rejects_window_outside_waveform() {
        let err = demodulate_iq(&tone(1e9, 0.0, 1.0), 1e9, 1e-9, WINDOW);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn demod_rejects_nyquist_image() {
        let w = Waveform::zeros(4e9, 0, 8).unwrap();
        assert!(demodulate_iq(&w, 2e9, 0.0, WINDOW).is_err());
    }

    #[test]
    fn detection_threshold() {
        let at = |a: f64| DemodResult::from_iq(a, 0.0);
        assert!(detect_token(&at(1.0), 1.0, 0.5));
        assert!(!detect_token(&at(0.0), 1.0, 0.5));
        assert!(!detect_token(&at(0.49), 1.0, 0.5));
        assert!(detect_token(&at(0.5), 1.0, 0.5));
    }

    #[test]
    fn default_carrier_set_is_orthogonal() {
        assert_eq!(
            validate_carrier_set(&[1e9, 2e9, 1.5e9], WINDOW, FS).unwrap(),
            vec![2, 4, 3]
        );
        assert!(validate_carrier_set(&[1e9, 1e9], WINDOW, FS).is_err());
        assert!(validate_carrier_set(&[1.3e9], WINDOW, FS).is_err());
    }

    #[test]
    fn phase_helpers_wrap() {
        assert_eq!(normalize_phase(-1e-20), 0.0);
        assert!((normalize_phase(-PI / 2.0) - 1.5 * PI).abs() < 1e-15);
        assert!((phase_distance(0.05, TAU - 0.05) - 0.1).abs() < 1e-12);
    }
}
