//! Synthetic 250 Hz gaze generator with known attention dynamics.
//!
//! Each participant scans the 32 icons with fixation/saccade alternation. A
//! critical event pulls gaze to its icon for a gamma-distributed dwell: a
//! highlighted event captures gaze with probability `capture_prob` after a
//! shifted-gamma latency, otherwise (and for every non-highlighted event) the
//! icon is found at a constant per-second hazard. Detections produce a key
//! press after a log-normal response delay.
//!
//! [`behavior_ground_truth`] and [`target_attention`] give the generator's
//! intended attention distribution without sampling noise.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};
use thiserror::Error;

use crate::dronesim::ScenarioTrace;
use crate::gazeproc::{GazeSample, GazeTrace};
use crate::layout::Layout;
use crate::rng;
use crate::timegrid::TimeGrid;

pub const SAMPLE_RATE_HZ: f64 = 250.0;

#[derive(Debug, Error, PartialEq)]
pub enum GazeGenError {
    #[error("invalid behavior parameter {0}")]
    InvalidParams(&'static str),
    #[error("event on drone {0} ({1}) has no layout element")]
    UnknownElement(usize, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStrategy {
    /// Cycle through a participant-specific permutation of the icons.
    RoundRobin,
    /// Jump to a uniformly chosen different icon.
    RandomWalk,
}

/// Log-normal given by its median and log-space sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub median: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    fn dist(&self) -> LogNormal<f64> {
        LogNormal::new(self.median.ln(), self.sigma).expect("validated")
    }
}

/// `shift + Gamma(shape, scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedGamma {
    pub shape: f64,
    pub scale: f64,
    pub shift: f64,
}

impl ShiftedGamma {
    pub fn mode(&self) -> f64 {
        self.shift + (self.shape - 1.0).max(0.0) * self.scale
    }

    pub fn mean(&self) -> f64 {
        self.shift + self.shape * self.scale
    }

    fn cdf(&self, t: f64) -> f64 {
        if t <= self.shift {
            0.0
        } else {
            GammaDist::new(self.shape, 1.0 / self.scale).expect("validated").cdf(t - self.shift)
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.shift + Gamma::new(self.shape, self.scale).expect("validated").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorParams {
    pub scan_strategy: ScanStrategy,
    pub fixation_dur_ms: LogNormalParams,
    /// Spread of fixation landing points around the icon center.
    pub saccade_noise_px: f64,
    pub capture_prob: f64,
    pub capture_latency_s: ShiftedGamma,
    pub dwell_on_target_s: f64,
    pub dwell_shape: f64,
    pub baseline_detect_hazard: f64,
    /// Per-sample tracker noise within a fixation.
    pub sample_noise_px: f64,
    pub saccade_ms: (f64, f64),
    /// Chance that a scanning fixation lands off the icons.
    pub background_prob: f64,
    /// Chance that a saccade is replaced by a blink.
    pub blink_prob: f64,
    pub blink_ms: (f64, f64),
    /// Per-participant systematic tracker offset, per axis.
    pub calibration_offset_sd_px: f64,
    pub response_delay_s: LogNormalParams,
    /// Per non-critical interval.
    pub false_alarm_prob: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        BehaviorParams {
            scan_strategy: ScanStrategy::RoundRobin,
            fixation_dur_ms: LogNormalParams {
                median: 220.0,
                sigma: 0.35,
            },
            saccade_noise_px: 12.0,
            capture_prob: 0.5,
            capture_latency_s: ShiftedGamma {
                shape: 6.0,
                scale: 0.06,
                shift: 0.3,
            },
            dwell_on_target_s: 0.6,
            dwell_shape: 5.0,
            baseline_detect_hazard: 0.2,
            sample_noise_px: 1.5,
            saccade_ms: (20.0, 60.0),
            background_prob: 0.1,
            blink_prob: 0.03,
            blink_ms: (100.0, 250.0),
            calibration_offset_sd_px: 10.0,
            response_delay_s: LogNormalParams {
                median: 0.6,
                sigma: 0.25,
            },
            false_alarm_prob: 0.03,
        }
    }
}

impl BehaviorParams {
    pub fn validate(&self) -> Result<(), GazeGenError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let range = |(a, b): (f64, f64)| a.is_finite() && a > 0.0 && b >= a;
        let checks: [(bool, &'static str); 14] = [
            (pos(self.fixation_dur_ms.median) && self.fixation_dur_ms.sigma >= 0.0, "fixation_dur_ms"),
            (self.saccade_noise_px >= 0.0, "saccade_noise_px"),
            (prob(self.capture_prob), "capture_prob"),
            (
                pos(self.capture_latency_s.shape)
                    && pos(self.capture_latency_s.scale)
                    && self.capture_latency_s.shift >= 0.0,
                "capture_latency_s",
            ),
            (pos(self.dwell_on_target_s), "dwell_on_target_s"),
            (pos(self.dwell_shape), "dwell_shape"),
            (self.baseline_detect_hazard >= 0.0, "baseline_detect_hazard"),
            (self.sample_noise_px >= 0.0, "sample_noise_px"),
            (range(self.saccade_ms), "saccade_ms"),
            (prob(self.background_prob), "background_prob"),
            (prob(self.blink_prob) && range(self.blink_ms), "blink"),
            (self.calibration_offset_sd_px >= 0.0, "calibration_offset_sd_px"),
            (pos(self.response_delay_s.median) && self.response_delay_s.sigma >= 0.0, "response_delay_s"),
            (prob(self.false_alarm_prob), "false_alarm_prob"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, name)) => Err(GazeGenError::InvalidParams(name)),
            None => Ok(()),
        }
    }

    fn dwell(&self) -> Gamma<f64> {
        Gamma::new(self.dwell_shape, self.dwell_on_target_s / self.dwell_shape).expect("validated")
    }
}

/// Interval during which gaze is held on one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionWindow {
    pub start_ms: f64,
    pub end_ms: f64,
    pub element: usize,
    pub captured: bool,
}

/// One participant's recording of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub gaze: GazeTrace,
    pub keypresses_ms: Vec<f64>,
    /// Fixation on a central target before the task, same tracker offset.
    pub calibration: Vec<GazeSample>,
    pub calibration_target: (f64, f64),
    pub tracker_offset: (f64, f64),
    pub windows: Vec<AttentionWindow>,
}

const CALIBRATION_MS: f64 = 3000.0;

fn element_of_event(layout: &Layout, drone: usize, kind: crate::IconKind) -> Result<usize, GazeGenError> {
    layout
        .find(drone, kind)
        .ok_or_else(|| GazeGenError::UnknownElement(drone, kind.to_string()))
}

/// Attention windows and key presses. Every random draw happens for every
/// event regardless of outcome so streams stay aligned across parameter
/// settings.
fn plan_behavior<R: Rng + ?Sized>(
    trace: &ScenarioTrace,
    layout: &Layout,
    params: &BehaviorParams,
    rng: &mut R,
) -> Result<(Vec<AttentionWindow>, Vec<f64>), GazeGenError> {
    let interval_ms = trace.interval_s * 1000.0;
    let hazard = Exp::new(params.baseline_detect_hazard.max(1e-300)).expect("positive rate");
    let dwell = params.dwell();
    let delay = params.response_delay_s.dist();
    let mut windows = Vec::new();
    let mut presses = Vec::new();
    for rec in &trace.plan.intervals {
        let onset = rec.onset_s * 1000.0;
        let u_capture: f64 = rng.random();
        let latency = params.capture_latency_s.sample(rng);
        let search = if params.baseline_detect_hazard > 0.0 {
            hazard.sample(rng)
        } else {
            f64::INFINITY
        };
        let d = dwell.sample(rng);
        let rt = delay.sample(rng);
        let u_fa: f64 = rng.random();
        let t_fa: f64 = rng.random::<f64>() * interval_ms;
        if !rec.is_critical {
            if u_fa < params.false_alarm_prob {
                presses.push(onset + t_fa);
            }
            continue;
        }
        let element = element_of_event(layout, rec.drone_index, rec.kind)?;
        let captured = rec.highlighted && u_capture < params.capture_prob;
        let found_s = if captured { Some(latency) } else { (search * 1000.0 < interval_ms).then_some(search) };
        if let Some(f) = found_s {
            let start = onset + f * 1000.0;
            windows.push(AttentionWindow {
                start_ms: start,
                end_ms: start + d * 1000.0,
                element,
                captured,
            });
            let press = start + rt * 1000.0;
            if press < onset + interval_ms {
                presses.push(press);
            }
        }
    }
    windows.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms));
    Ok((windows, presses))
}

/// Active window at `t` (latest start wins) and the next time the answer can
/// change.
fn attention_at(windows: &[AttentionWindow], t: f64) -> (Option<usize>, f64) {
    let mut active: Option<&AttentionWindow> = None;
    let mut next = f64::INFINITY;
    for w in windows {
        if w.start_ms <= t && t < w.end_ms {
            active = Some(w);
            next = next.min(w.end_ms);
        } else if w.start_ms > t {
            next = next.min(w.start_ms);
        }
    }
    (active.map(|w| w.element), next)
}

#[derive(Clone, Copy)]
enum SegKind {
    Fixation,
    Saccade,
    Blink,
}

#[derive(Clone, Copy)]
struct Segment {
    t0: f64,
    t1: f64,
    from: (f64, f64),
    to: (f64, f64),
    kind: SegKind,
}

struct Scanner {
    order: Vec<usize>,
    pos: usize,
    current: usize,
}

impl Scanner {
    fn new<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let pos = rng.random_range(0..n);
        Scanner {
            current: order[pos],
            order,
            pos,
        }
    }

    fn next<R: Rng + ?Sized>(&mut self, strategy: ScanStrategy, rng: &mut R) -> usize {
        let n = self.order.len();
        self.current = match strategy {
            ScanStrategy::RoundRobin => {
                self.pos = (self.pos + 1) % n;
                self.order[self.pos]
            }
            ScanStrategy::RandomWalk if n > 1 => {
                let k = rng.random_range(0..n - 1);
                if k >= self.current { k + 1 } else { k }
            }
            ScanStrategy::RandomWalk => 0,
        };
        self.current
    }
}

fn background_point<R: Rng + ?Sized>(layout: &Layout, rng: &mut R) -> (f64, f64) {
    let (w, h) = (layout.width_px() as f64, layout.height_px() as f64);
    loop {
        let p = (rng.random::<f64>() * w, rng.random::<f64>() * h);
        if layout.element_index_at(p.0, p.1).is_none() {
            return p;
        }
    }
}

fn fill_samples<R: Rng + ?Sized>(
    segments: &[Segment],
    n_samples: usize,
    t_offset: f64,
    offset: (f64, f64),
    noise: &Normal<f64>,
    bounds: (f64, f64),
    rng: &mut R,
) -> Vec<GazeSample> {
    let dt = 1000.0 / SAMPLE_RATE_HZ;
    let mut out = Vec::with_capacity(n_samples);
    let mut k = 0;
    for i in 0..n_samples {
        let t = i as f64 * dt;
        while k + 1 < segments.len() && segments[k].t1 <= t {
            k += 1;
        }
        let s = &segments[k];
        let (x, y, valid) = match s.kind {
            SegKind::Fixation => (s.to.0 + noise.sample(rng), s.to.1 + noise.sample(rng), true),
            SegKind::Saccade => {
                let a = ((t - s.t0) / (s.t1 - s.t0)).clamp(0.0, 1.0);
                (s.from.0 + a * (s.to.0 - s.from.0), s.from.1 + a * (s.to.1 - s.from.1), true)
            }
            SegKind::Blink => (f64::NAN, f64::NAN, false),
        };
        let (x, y) = (x + offset.0, y + offset.1);
        let inside = x >= 0.0 && y >= 0.0 && x < bounds.0 && y < bounds.1;
        out.push(GazeSample {
            t_ms: t + t_offset,
            x_px: if valid { x } else { 0.0 },
            y_px: if valid { y } else { 0.0 },
            valid: valid && inside,
        });
    }
    out
}

/// Full synthetic recording for one participant and task.
pub fn generate_session(
    trace: &ScenarioTrace,
    layout: &Layout,
    params: &BehaviorParams,
    participant_id: u32,
    seed: u64,
) -> Result<Session, GazeGenError> {
    params.validate()?;
    let base = rng::label(&[participant_id as u64, trace.task_id as u64]);
    let mut plan_rng = rng::stream(seed, rng::label(&[base, 0]));
    let mut gaze_rng = rng::stream(seed, rng::label(&[base, 1]));
    let mut subject_rng = rng::stream(seed, rng::label(&[participant_id as u64, 2]));

    let offset_dist = Normal::new(0.0, params.calibration_offset_sd_px).expect("validated");
    let tracker_offset = (offset_dist.sample(&mut subject_rng), offset_dist.sample(&mut subject_rng));
    let (windows, keypresses_ms) = plan_behavior(trace, layout, params, &mut plan_rng)?;

    let duration = trace.duration_ms();
    let n = layout.len();
    let centers: Vec<(f64, f64)> = layout.elements().iter().map(|e| e.bbox.center()).collect();
    let land = Normal::new(0.0, params.saccade_noise_px).expect("validated");
    let fix_dur = params.fixation_dur_ms.dist();
    let rng = &mut gaze_rng;
    let mut scanner = Scanner::new(n, rng);
    let aim = |e: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        (centers[e].0 + land.sample(rng), centers[e].1 + land.sample(rng))
    };

    let mut segments = Vec::new();
    let mut t = 0.0;
    let mut prev = aim(scanner.current, rng);
    let mut first = true;
    while t < duration {
        let start = if first {
            t
        } else {
            let blink = rng.random::<f64>() < params.blink_prob;
            let (lo, hi) = if blink { params.blink_ms } else { params.saccade_ms };
            let s = rng.random_range(lo..=hi);
            segments.push(Segment {
                t0: t,
                t1: t + s,
                from: prev,
                to: prev,
                kind: if blink { SegKind::Blink } else { SegKind::Saccade },
            });
            t + s
        };
        let (target, next_change) = attention_at(&windows, start);
        let u_bg: f64 = rng.random();
        let loc = match target {
            Some(e) => aim(e, rng),
            None if u_bg < params.background_prob => background_point(layout, rng),
            None => {
                let e = scanner.next(params.scan_strategy, rng);
                aim(e, rng)
            }
        };
        if let Some(last) = segments.last_mut().filter(|_| !first) {
            last.to = loc;
        }
        let d = fix_dur.sample(rng);
        let end = (start + d).min(next_change).min(duration + 1.0);
        segments.push(Segment {
            t0: start,
            t1: end.max(start + 1e-9),
            from: loc,
            to: loc,
            kind: SegKind::Fixation,
        });
        prev = loc;
        t = end;
        first = false;
    }

    let noise = Normal::new(0.0, params.sample_noise_px).expect("validated");
    let bounds = (layout.width_px() as f64, layout.height_px() as f64);
    let n_samples = (duration * SAMPLE_RATE_HZ / 1000.0).round() as usize + 1;
    let samples = fill_samples(&segments, n_samples, 0.0, tracker_offset, &noise, bounds, rng);

    // Calibration: settle onto the central target, then hold.
    let calibration_target = (bounds.0 / 2.0, bounds.1 / 2.0);
    let settle = rng.random_range(200.0..800.0);
    let from = background_point(layout, rng);
    let calib_segments = [
        Segment {
            t0: 0.0,
            t1: settle,
            from,
            to: calibration_target,
            kind: SegKind::Saccade,
        },
        Segment {
            t0: settle,
            t1: CALIBRATION_MS + 1.0,
            from: calibration_target,
            to: calibration_target,
            kind: SegKind::Fixation,
        },
    ];
    let n_calib = (CALIBRATION_MS * SAMPLE_RATE_HZ / 1000.0) as usize + 1;
    let calibration = fill_samples(&calib_segments, n_calib, 0.0, tracker_offset, &noise, bounds, rng);

    Ok(Session {
        gaze: GazeTrace {
            participant_id,
            task_id: trace.task_id,
            samples,
        },
        keypresses_ms,
        calibration,
        calibration_target,
        tracker_offset,
        windows,
    })
}

pub fn generate_gaze(
    trace: &ScenarioTrace,
    layout: &Layout,
    params: &BehaviorParams,
    seed: u64,
) -> Result<GazeTrace, GazeGenError> {
    Ok(generate_session(trace, layout, params, 0, seed)?.gaze)
}

const GT_STEP_MS: f64 = 5.0;

/// Probability that gaze is held on the event icon `t` ms after onset, on a
/// `GT_STEP_MS` grid over `[0, horizon_ms)`.
fn held_probability(params: &BehaviorParams, highlighted: bool, interval_ms: f64, horizon_ms: f64) -> Vec<f64> {
    let n = (horizon_ms / GT_STEP_MS).ceil() as usize + 1;
    let dt = GT_STEP_MS / 1000.0;
    let cp = if highlighted { params.capture_prob } else { 0.0 };
    let lam = params.baseline_detect_hazard;
    let search_cdf = |s: f64| {
        let s = s.min(interval_ms / 1000.0);
        if lam > 0.0 { 1.0 - (-lam * s).exp() } else { 0.0 }
    };
    // Mass of the onset-of-hold time per grid cell.
    let start_mass: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (i as f64 * dt, (i + 1) as f64 * dt);
            cp * (params.capture_latency_s.cdf(b) - params.capture_latency_s.cdf(a))
                + (1.0 - cp) * (search_cdf(b) - search_cdf(a))
        })
        .collect();
    let dwell = GammaDist::new(params.dwell_shape, params.dwell_shape / params.dwell_on_target_s).expect("validated");
    // A hold starting uniformly within cell j is still on at the midpoint of
    // cell j + k with probability survive[k].
    let survive: Vec<f64> = (0..n + 1)
        .map(|k| {
            let pts = [0.125, 0.375, 0.625, 0.875];
            pts.iter().map(|f| dwell.sf((k as f64 + 0.5 - f) * dt).min(1.0)).sum::<f64>() / 4.0
        })
        .collect();
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|j| start_mass[j] * if j == i { 0.5 } else { survive[i - j] })
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect()
}

/// Intended attention on an event's icon for each grid slice: held mass plus
/// the scanning share `1/n_elements` of the rest.
pub fn target_attention(params: &BehaviorParams, highlighted: bool, interval_s: f64, grid: &TimeGrid, n_elements: usize) -> Vec<f64> {
    let (_, last_end) = grid.slice_bounds_ms(grid.len().saturating_sub(1));
    let held = held_probability(params, highlighted, interval_s * 1000.0, last_end.max(0) as f64);
    (0..grid.len())
        .map(|k| {
            let (a, b) = grid.slice_bounds_ms(k);
            let q = slice_mean(&held, a as f64, b as f64);
            q + (1.0 - q) / n_elements as f64
        })
        .collect()
}

/// Mean of a `GT_STEP_MS` series over `[a, b)` ms; zero before time 0.
fn slice_mean(series: &[f64], a: f64, b: f64) -> f64 {
    let mut sum = 0.0;
    let mut cnt = 0usize;
    let mut t = a + GT_STEP_MS / 2.0;
    while t < b {
        if t >= 0.0 {
            let i = (t / GT_STEP_MS) as usize;
            sum += series.get(i).copied().unwrap_or(0.0);
        }
        cnt += 1;
        t += GT_STEP_MS;
    }
    if cnt == 0 { 0.0 } else { sum / cnt as f64 }
}

/// Per-slice intended attention over all elements for a whole task.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGroundTruth {
    pub slice_ms: f64,
    /// `probs[k][e]`, slice `k` covering `[k, k + 1) * slice_ms`.
    pub probs: Vec<Vec<f64>>,
}

/// Scanning spreads attention evenly; each critical event adds the expected
/// hold on its icon. Overlapping events share the available mass.
pub fn behavior_ground_truth(
    trace: &ScenarioTrace,
    layout: &Layout,
    params: &BehaviorParams,
) -> Result<AttentionGroundTruth, GazeGenError> {
    params.validate()?;
    let slice_ms = 100.0;
    let n_el = layout.len();
    let n_slices = (trace.duration_ms() / slice_ms).ceil() as usize;
    let interval_ms = trace.interval_s * 1000.0;
    let horizon = interval_ms + 10.0 * params.dwell_on_target_s * 1000.0;
    let held_h = held_probability(params, true, interval_ms, horizon);
    let held_n = held_probability(params, false, interval_ms, horizon);
    let mut held = vec![vec![0.0; n_el]; n_slices];
    for rec in trace.critical_intervals() {
        let e = element_of_event(layout, rec.drone_index, rec.kind)?;
        let onset = rec.onset_s * 1000.0;
        let series = if rec.highlighted { &held_h } else { &held_n };
        let first = (onset / slice_ms).floor() as usize;
        let last = (((onset + horizon) / slice_ms).ceil() as usize).min(n_slices);
        for (k, row) in held.iter_mut().enumerate().take(last).skip(first) {
            let a = k as f64 * slice_ms - onset;
            row[e] += slice_mean(series, a, a + slice_ms);
        }
    }
    let probs = held
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            let scale = if total > 1.0 { 1.0 / total } else { 1.0 };
            let rest = (1.0 - total * scale) / n_el as f64;
            row.iter().map(|h| h * scale + rest).collect()
        })
        .collect();
    Ok(AttentionGroundTruth { slice_ms, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dronesim::{simulate_task, SimConfig};
    use crate::gazeproc::detect_fixations;

    fn scenario() -> ScenarioTrace {
        simulate_task(&SimConfig::desk_default(), 1, 5).unwrap()
    }

    #[test]
    fn deterministic_and_covers_task() {
        let tr = scenario();
        let lay = Layout::default_layout();
        let p = BehaviorParams::default();
        let a = generate_session(&tr, &lay, &p, 3, 11).unwrap();
        let b = generate_session(&tr, &lay, &p, 3, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_session(&tr, &lay, &p, 4, 11).unwrap();
        assert_ne!(a.gaze.samples, c.gaze.samples);
        let s = &a.gaze.samples;
        assert_eq!(s[0].t_ms, 0.0);
        assert!((s.last().unwrap().t_ms - tr.duration_ms()).abs() < 4.0);
        assert!(s.windows(2).all(|w| (w[1].t_ms - w[0].t_ms - 4.0).abs() < 1e-9));
        for g in s.iter().filter(|g| g.valid) {
            assert!(g.x_px >= 0.0 && g.y_px >= 0.0 && g.x_px < 1920.0 && g.y_px < 1200.0);
        }
    }

    #[test]
    fn fixations_are_recovered() {
        let tr = scenario();
        let lay = Layout::default_layout();
        let s = generate_session(&tr, &lay, &BehaviorParams::default(), 0, 1).unwrap();
        let fx = detect_fixations(&s.gaze.samples, 25.0, 50.0);
        let rate = fx.len() as f64 / (tr.duration_ms() / 1000.0);
        assert!((2.5..5.0).contains(&rate), "{rate} fixations/s");
        let on_icons = fx.iter().filter(|f| lay.element_index_at(f.x, f.y).is_some()).count();
        assert!(on_icons as f64 > 0.8 * fx.len() as f64);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = BehaviorParams {
            capture_prob: 1.5,
            ..Default::default()
        };
        assert_eq!(p.validate(), Err(GazeGenError::InvalidParams("capture_prob")));
    }

    #[test]
    fn ground_truth_rows_sum_to_one() {
        let tr = scenario();
        let lay = Layout::default_layout();
        let gt = behavior_ground_truth(&tr, &lay, &BehaviorParams::default()).unwrap();
        assert_eq!(gt.probs.len(), 3000);
        for row in &gt.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn highlighted_target_dominates_after_onset() {
        let grid = TimeGrid::default();
        let p = BehaviorParams::default();
        let h = target_attention(&p, true, 15.0, &grid, 32);
        for k in 0..grid.len() {
            let t = grid.t_rel_s(k);
            if (0.3..1.5).contains(&t) {
                assert!(h[k] > (1.0 - h[k]) / 31.0, "t={t}");
            }
            if t < 0.0 {
                assert!((h[k] - 1.0 / 32.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn held_probability_matches_monte_carlo() {
        let p = BehaviorParams::default();
        let held = held_probability(&p, true, 15_000.0, 3000.0);
        let mut r = rng::stream(9, 9);
        let n = 40_000;
        let probes = [500.0, 800.0, 1000.0, 1500.0, 2500.0];
        let mut hits = [0usize; 5];
        let hazard = Exp::new(p.baseline_detect_hazard).unwrap();
        for _ in 0..n {
            let s = if r.random::<f64>() < p.capture_prob {
                p.capture_latency_s.sample(&mut r)
            } else {
                hazard.sample(&mut r)
            } * 1000.0;
            let d = p.dwell().sample(&mut r) * 1000.0;
            for (h, &t) in hits.iter_mut().zip(&probes) {
                if s <= t && t < s + d {
                    *h += 1;
                }
            }
        }
        for (h, &t) in hits.iter().zip(&probes) {
            let mc = *h as f64 / n as f64;
            let an = held[(t / GT_STEP_MS) as usize];
            assert!((mc - an).abs() < 0.015, "t={t} mc={mc} analytic={an}");
        }
    }
}
