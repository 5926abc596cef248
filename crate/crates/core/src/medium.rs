//! Lossless 1-D transmission line as two counter-propagating delay buffers.
//!
//! Positions are integer sample delays from the home end (position 0). Each
//! tick the forward buffer moves one cell toward the far end and the backward
//! buffer one cell toward home. Waves leaving either end re-enter the opposite
//! buffer scaled by that end's reflection coefficient.
//!
//! Within a tick, observations always see the line *before* that tick's
//! injections: injections are staged and only land in the buffers when
//! [`TransmissionLine::step`] runs. A tap therefore never hears its own
//! same-tick emission.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node identifier; 0 is the home node, 1..=k the competing nodes in tap order.
pub type NodeId = usize;

pub const HOME: NodeId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tap {
    pub node: NodeId,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Line length, tap placement and termination mismatch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineGeometry {
    total_delay: usize,
    taps: Vec<Tap>,
    left_reflection: f64,
    right_reflection: f64,
}

impl LineGeometry {
    /// Builds a geometry with the home tap at position 0 and node `i` at
    /// `node_positions[i - 1]`.
    pub fn new(
        total_delay: usize,
        node_positions: &[usize],
        left_reflection: f64,
        right_reflection: f64,
    ) -> Result<Self> {
        if total_delay == 0 {
            return Err(Error::config("line.total_delay must be at least 1 sample"));
        }
        for (name, gamma) in [
            ("line.left_reflection", left_reflection),
            ("line.right_reflection", right_reflection),
        ] {
            if !(gamma.is_finite() && gamma.abs() <= 1.0) {
                return Err(Error::config(format!(
                    "{name} = {gamma} violates the passivity bound |Γ| <= 1"
                )));
            }
        }
        let mut taps = vec![Tap {
            node: HOME,
            position: 0,
        }];
        for (idx, &position) in node_positions.iter().enumerate() {
            let node = idx + 1;
            if position > total_delay {
                return Err(Error::config(format!(
                    "line.taps: node {node} at position {position} lies beyond total_delay {total_delay}"
                )));
            }
            let prev = taps.last().map(|t| t.position).unwrap_or(0);
            if position <= prev {
                return Err(Error::config(format!(
                    "line.taps: node {node} at position {position} must lie strictly after position {prev}"
                )));
            }
            taps.push(Tap { node, position });
        }
        Ok(LineGeometry {
            total_delay,
            taps,
            left_reflection,
            right_reflection,
        })
    }

    /// `count` nodes spaced `spacing` samples apart, line ending at the last node
    /// plus one more spacing.
    pub fn equally_spaced(count: usize, spacing: usize) -> Result<Self> {
        let positions: Vec<usize> = (1..=count).map(|i| i * spacing).collect();
        LineGeometry::new((count + 1) * spacing, &positions, 0.0, 0.0)
    }

    pub fn with_reflections(&self, left: f64, right: f64) -> Result<Self> {
        let positions: Vec<usize> = self.node_taps().map(|t| t.position).collect();
        LineGeometry::new(self.total_delay, &positions, left, right)
    }

    pub fn total_delay(&self) -> usize {
        self.total_delay
    }

    pub fn left_reflection(&self) -> f64 {
        self.left_reflection
    }

    pub fn right_reflection(&self) -> f64 {
        self.right_reflection
    }

    /// All taps including home, in position order.
    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    /// Taps of the competing nodes (home excluded).
    pub fn node_taps(&self) -> impl Iterator<Item = &Tap> {
        self.taps.iter().skip(1)
    }

    pub fn node_count(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn position_of(&self, node: NodeId) -> Option<usize> {
        self.taps.get(node).map(|t| t.position)
    }

    pub fn is_tap(&self, position: usize) -> bool {
        self.taps
            .binary_search_by_key(&position, |t| t.position)
            .is_ok()
    }
}

/// Mutable propagation state of one line.
#[derive(Debug, Clone)]
pub struct TransmissionLine {
    geometry: LineGeometry,
    forward: Vec<f64>,
    backward: Vec<f64>,
    staged_forward: Vec<f64>,
    staged_backward: Vec<f64>,
    tick: u64,
}

impl TransmissionLine {
    pub fn new(geometry: LineGeometry) -> Self {
        let cells = geometry.total_delay + 1;
        TransmissionLine {
            geometry,
            forward: vec![0.0; cells],
            backward: vec![0.0; cells],
            staged_forward: vec![0.0; cells],
            staged_backward: vec![0.0; cells],
            tick: 0,
        }
    }

    pub fn geometry(&self) -> &LineGeometry {
        &self.geometry
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    fn check_tap(&self, position: usize) -> Result<()> {
        if self.geometry.is_tap(position) {
            Ok(())
        } else {
            Err(Error::usage(format!("position {position} is not a tap")))
        }
    }

    /// Stages an emission at a tap; it enters the line on the next [`step`](Self::step).
    pub fn inject(
        &mut self,
        position: usize,
        forward_value: f64,
        backward_value: f64,
    ) -> Result<()> {
        self.check_tap(position)?;
        self.staged_forward[position] += forward_value;
        self.staged_backward[position] += backward_value;
        Ok(())
    }

    /// Advances every wave by one sample.
    pub fn step(&mut self) {
        for (cell, staged) in self.forward.iter_mut().zip(self.staged_forward.iter_mut()) {
            *cell += std::mem::take(staged);
        }
        for (cell, staged) in self
            .backward
            .iter_mut()
            .zip(self.staged_backward.iter_mut())
        {
            *cell += std::mem::take(staged);
        }
        let end = self.geometry.total_delay;
        let leaving_right = self.forward[end];
        let leaving_left = self.backward[0];
        self.forward.copy_within(0..end, 1);
        self.forward[0] = self.geometry.left_reflection * leaving_left;
        self.backward.copy_within(1..=end, 0);
        self.backward[end] = self.geometry.right_reflection * leaving_right;
        self.tick += 1;
    }

    /// What a probe at the tap sees: forward plus backward.
    pub fn observe_total(&self, position: usize) -> Result<f64> {
        self.check_tap(position)?;
        Ok(self.forward[position] + self.backward[position])
    }

    /// What an ideal directional coupler at the tap sees.
    pub fn observe_directional(&self, position: usize, direction: Direction) -> Result<f64> {
        self.check_tap(position)?;
        Ok(match direction {
            Direction::Forward => self.forward[position],
            Direction::Backward => self.backward[position],
        })
    }

    /// Sum of squared cell values over both directions.
    pub fn energy(&self) -> f64 {
        self.forward
            .iter()
            .chain(&self.backward)
            .map(|v| v * v)
            .sum()
    }

    /// Largest absolute cell value over both directions.
    pub fn peak(&self) -> f64 {
        self.forward
            .iter()
            .chain(&self.backward)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_quiet(&self) -> bool {
        self.peak() == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(taps: &[usize], total: usize, gl: f64, gr: f64) -> TransmissionLine {
        TransmissionLine::new(LineGeometry::new(total, taps, gl, gr).unwrap())
    }

    #[test]
    fn equal_spacing_is_valid() {
        let g = LineGeometry::new(32, &[8, 16, 24], 0.0, 0.0).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.position_of(2), Some(16));
        assert_eq!(g.position_of(HOME), Some(0));
        assert_eq!(LineGeometry::equally_spaced(3, 8).unwrap(), g);
    }

    #[test]
    fn rejects_tap_past_end() {
        let err = LineGeometry::new(32, &[40], 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn rejects_active_termination() {
        assert!(LineGeometry::new(32, &[8], 0.0, 1.5).is_err());
        assert!(LineGeometry::new(32, &[8], -1.01, 0.0).is_err());
    }

    #[test]
    fn rejects_unordered_or_home_taps() {
        assert!(LineGeometry::new(32, &[16, 8], 0.0, 0.0).is_err());
        assert!(LineGeometry::new(32, &[0], 0.0, 0.0).is_err());
        assert!(LineGeometry::new(32, &[8, 8], 0.0, 0.0).is_err());
    }

    #[test]
    fn forward_is_pure_delay() {
        let mut l = line(&[4, 9], 12, 0.0, 0.0);
        l.inject(4, 1.0, 0.0).unwrap();
        for _ in 0..5 {
            l.step();
        }
        assert_eq!(l.observe_total(9).unwrap(), 1.0);
    }

    #[test]
    fn backward_is_pure_delay() {
        let mut l = line(&[4, 9], 12, 0.0, 0.0);
        l.inject(9, 0.0, 1.0).unwrap();
        for _ in 0..5 {
            l.step();
        }
        assert_eq!(l.observe_total(4).unwrap(), 1.0);
        assert_eq!(l.observe_directional(4, Direction::Forward).unwrap(), 0.0);
    }

    #[test]
    fn same_tick_injections_add() {
        let mut a = line(&[3, 7], 10, 0.0, 0.0);
        a.inject(3, 0.25, -0.5).unwrap();
        a.inject(3, 0.5, 0.125).unwrap();
        let mut b = line(&[3, 7], 10, 0.0, 0.0);
        b.inject(3, 0.75, -0.375).unwrap();
        for _ in 0..4 {
            a.step();
            b.step();
            for p in [0, 3, 7] {
                assert_eq!(a.observe_total(p).unwrap(), b.observe_total(p).unwrap());
            }
        }
    }

    #[test]
    fn observation_precedes_injection() {
        let mut l = line(&[5], 10, 0.0, 0.0);
        l.inject(5, 1.0, 1.0).unwrap();
        assert_eq!(l.observe_total(5).unwrap(), 0.0);
        l.step();
        // the emission has left the tap in both directions
        assert_eq!(l.observe_total(5).unwrap(), 0.0);
    }

    #[test]
    fn matched_end_absorbs() {
        let mut l = line(&[8], 32, 0.0, 0.0);
        l.inject(0, 1.0, 0.0).unwrap();
        for _ in 0..32 {
            l.step();
        }
        assert_eq!(l.forward[32], 1.0);
        l.step();
        assert!(l.is_quiet());
    }

    #[test]
    fn mismatched_end_reflects() {
        let mut l = line(&[8], 32, 0.0, -0.2);
        l.inject(0, 1.0, 0.0).unwrap();
        for _ in 0..33 {
            l.step();
        }
        assert_eq!(l.backward[32], -0.2);
        for _ in 0..24 {
            l.step();
        }
        assert_eq!(l.observe_directional(8, Direction::Backward).unwrap(), -0.2);
    }

    #[test]
    fn left_end_reflects_into_forward() {
        let mut l = line(&[4], 8, 0.5, 0.0);
        l.inject(4, 0.0, 1.0).unwrap();
        for _ in 0..5 {
            l.step();
        }
        assert_eq!(l.forward[0], 0.5);
    }

    #[test]
    fn opposite_waves_cancel_at_probe() {
        let mut l = line(&[4, 8], 12, 0.0, 0.0);
        l.inject(0, 0.3, 0.0).unwrap();
        l.inject(8, 0.0, -0.3).unwrap();
        for _ in 0..4 {
            l.step();
        }
        assert_eq!(l.observe_directional(4, Direction::Forward).unwrap(), 0.3);
        assert_eq!(l.observe_directional(4, Direction::Backward).unwrap(), -0.3);
        assert_eq!(l.observe_total(4).unwrap(), 0.0);
    }

    #[test]
    fn empty_line_reads_zero() {
        let l = line(&[4], 8, 0.0, 0.0);
        assert_eq!(l.observe_total(4).unwrap(), 0.0);
    }

    #[test]
    fn non_tap_access_is_usage_error() {
        let mut l = line(&[4], 8, 0.0, 0.0);
        assert!(matches!(l.inject(3, 1.0, 0.0), Err(Error::Usage(_))));
        assert!(matches!(l.observe_total(5), Err(Error::Usage(_))));
        assert!(matches!(
            l.observe_directional(5, Direction::Backward),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn energy_drains_through_matched_ends() {
        let mut l = line(&[4, 8], 12, 0.0, 0.0);
        l.inject(4, 1.0, -0.5).unwrap();
        l.inject(8, 0.25, 0.75).unwrap();
        l.step();
        let mut last = l.energy();
        for _ in 0..20 {
            l.step();
            assert!(l.energy() <= last);
            last = l.energy();
        }
        assert_eq!(last, 0.0);
    }
}
