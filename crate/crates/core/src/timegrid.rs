//! Time bases: the 24 Hz UI frame grid and the 0.1 s NS slice grid around a
//! critical onset.

use serde::{Deserialize, Serialize};

/// NS sampling grid. Times are kept in integer milliseconds so that slice
/// boundaries are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeGrid {
    pub frame_rate_hz: u32,
    pub ns_step_ms: i64,
    pub window_start_ms: i64,
    pub window_end_ms: i64,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            frame_rate_hz: 24,
            ns_step_ms: 100,
            window_start_ms: -1000,
            window_end_ms: 5000,
        }
    }
}

impl TimeGrid {
    /// Number of slices, `T`.
    pub fn len(&self) -> usize {
        ((self.window_end_ms - self.window_start_ms) / self.ns_step_ms) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Start of slice `k` relative to onset, in ms.
    pub fn slice_start_ms(&self, k: usize) -> i64 {
        self.window_start_ms + k as i64 * self.ns_step_ms
    }

    /// Slice `k` covers `[start, start + step)` relative to onset.
    pub fn slice_bounds_ms(&self, k: usize) -> (i64, i64) {
        let s = self.slice_start_ms(k);
        (s, s + self.ns_step_ms)
    }

    pub fn t_rel_s(&self, k: usize) -> f64 {
        self.slice_start_ms(k) as f64 / 1000.0
    }

    pub fn t_rel_all(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.t_rel_s(k)).collect()
    }

    /// Index of the slice whose start equals `t_rel_ms`, if any.
    pub fn slice_at(&self, t_rel_ms: i64) -> Option<usize> {
        let off = t_rel_ms - self.window_start_ms;
        if off < 0 || off % self.ns_step_ms != 0 {
            return None;
        }
        let k = (off / self.ns_step_ms) as usize;
        (k < self.len()).then_some(k)
    }

    pub fn frame_duration_ms(&self) -> f64 {
        1000.0 / self.frame_rate_hz as f64
    }

    /// `[start, end)` of UI frame `f` in ms since task start.
    pub fn frame_bin_ms(&self, f: usize) -> (f64, f64) {
        let d = self.frame_duration_ms();
        (f as f64 * d, (f + 1) as f64 * d)
    }

    /// Frame displayed at time `t_ms` since task start.
    pub fn frame_at_ms(&self, t_ms: f64) -> usize {
        (t_ms.max(0.0) * self.frame_rate_hz as f64 / 1000.0).floor() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_sixty_slices() {
        let g = TimeGrid::default();
        assert_eq!(g.len(), 60);
        assert_eq!(g.t_rel_s(0), -1.0);
        assert!((g.t_rel_s(59) - 4.9).abs() < 1e-12);
        assert_eq!(g.slice_bounds_ms(10), (0, 100));
        assert_eq!(g.slice_at(0), Some(10));
        assert_eq!(g.slice_at(50), None);
        assert_eq!(g.slice_at(5000), None);
    }

    #[test]
    fn frame_bins_tile_time() {
        let g = TimeGrid::default();
        let (a, b) = g.frame_bin_ms(0);
        assert_eq!(a, 0.0);
        assert!((b - 41.666_666).abs() < 1e-3);
        assert_eq!(g.frame_bin_ms(1).0, b);
        assert_eq!(g.frame_at_ms(41.0), 0);
        assert_eq!(g.frame_at_ms(42.0), 1);
        assert_eq!(g.frame_at_ms(300_000.0 - 1.0), 7199);
    }
}
