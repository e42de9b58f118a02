//! Gaze preprocessing and behavioral metrics: dispersion-threshold fixation
//! detection, calibration-quality filtering, trial segmentation, detection
//! performance, AOI engagement/exploration metrics and split-half
//! reliability of pooled fixation maps.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dronesim::{IntervalRecord, ScenarioTrace};
use crate::layout::{BBox, Layout};
use crate::metrics;
use crate::saliency::{convolve, pixel_of, Kernel, SaliencyMap};

pub const DEFAULT_DISPERSION_PX: f64 = 25.0;
pub const DEFAULT_MIN_DURATION_MS: f64 = 50.0;

#[derive(Debug, Error)]
pub enum GazeError {
    #[error("calibration segment spans {0:.0} ms, shorter than the {1:.0} ms window")]
    SegmentTooShort(f64, f64),
    #[error("calibration segment has no valid samples")]
    NoValidSamples,
    #[error("gaze spans [{0}, {1}) ms but the scenario lasts {2} ms")]
    DurationMismatch(f64, f64, f64),
    #[error("split-half reliability needs at least 2 participants, got {0}")]
    TooFewParticipants(usize),
    #[error("span must be positive, got {0}")]
    InvalidSpan(f64),
    #[error("metric: {0}")]
    Metric(#[from] metrics::MetricError),
    #[error("saliency: {0}")]
    Saliency(#[from] crate::saliency::SaliencyError),
    #[error("gaze csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t_ms: f64,
    pub x_px: f64,
    pub y_px: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeTrace {
    pub participant_id: u32,
    pub task_id: u32,
    pub samples: Vec<GazeSample>,
}

impl GazeTrace {
    /// `[first, last + one sample period)` in ms.
    pub fn span_ms(&self) -> (f64, f64) {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => {
                let n = self.samples.len();
                let dt = if n > 1 { (b.t_ms - a.t_ms) / (n - 1) as f64 } else { 0.0 };
                (a.t_ms, b.t_ms + dt)
            }
            _ => (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub start_ms: f64,
    pub end_ms: f64,
    pub duration_ms: f64,
    pub x: f64,
    pub y: f64,
}

fn within(a: &GazeSample, b: &GazeSample, radius: f64) -> bool {
    let (dx, dy) = (a.x_px - b.x_px, a.y_px - b.y_px);
    dx * dx + dy * dy <= radius * radius
}

/// Dispersion-threshold fixation detection.
///
/// A candidate grows from its first sample while each next sample is valid
/// and within `dispersion_px` of that first sample. It is kept if the time
/// from first to last member reaches `min_dur_ms`; otherwise detection
/// resumes at the following sample.
pub fn detect_fixations(samples: &[GazeSample], dispersion_px: f64, min_dur_ms: f64) -> Vec<Fixation> {
    let mut out = Vec::new();
    let n = samples.len();
    let mut i = 0;
    while i < n {
        let first = &samples[i];
        if !first.valid {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && samples[j + 1].valid && within(&samples[j + 1], first, dispersion_px) {
            j += 1;
        }
        let duration = samples[j].t_ms - first.t_ms;
        if duration >= min_dur_ms {
            let m = (j - i + 1) as f64;
            let (sx, sy) = samples[i..=j]
                .iter()
                .fold((0.0, 0.0), |(sx, sy), s| (sx + s.x_px, sy + s.y_px));
            out.push(Fixation {
                start_ms: first.t_ms,
                end_ms: samples[j].t_ms,
                duration_ms: duration,
                x: sx / m,
                y: sy / m,
            });
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityResult {
    pub accept: bool,
    pub offset: (f64, f64),
    pub window_start_ms: f64,
}

/// Picks the `window_s` window whose valid samples lie closest (mean
/// Euclidean distance) to `target` and rejects when the mean x or y offset in
/// that window exceeds `max_offset_px`.
pub fn quality_filter(
    calib: &[GazeSample],
    target: (f64, f64),
    window_s: f64,
    max_offset_px: f64,
) -> Result<QualityResult, GazeError> {
    let window_ms = window_s * 1000.0;
    let n = calib.len();
    if n < 2 {
        return Err(GazeError::SegmentTooShort(0.0, window_ms));
    }
    let dt = (calib[n - 1].t_ms - calib[0].t_ms) / (n - 1) as f64;
    let end = calib[n - 1].t_ms + dt;
    if end - calib[0].t_ms + 1e-9 < window_ms {
        return Err(GazeError::SegmentTooShort(end - calib[0].t_ms, window_ms));
    }
    // Prefix sums over valid samples: count, x, y, distance.
    let mut pre = vec![[0.0f64; 4]; n + 1];
    for (k, s) in calib.iter().enumerate() {
        let mut row = pre[k];
        if s.valid {
            let d = ((s.x_px - target.0).powi(2) + (s.y_px - target.1).powi(2)).sqrt();
            row[0] += 1.0;
            row[1] += s.x_px;
            row[2] += s.y_px;
            row[3] += d;
        }
        pre[k + 1] = row;
    }
    let mut best: Option<(f64, usize, usize)> = None;
    let mut j = 0;
    for i in 0..n {
        if calib[i].t_ms + window_ms > end + 1e-9 {
            break;
        }
        j = j.max(i);
        while j < n && calib[j].t_ms < calib[i].t_ms + window_ms - 1e-9 {
            j += 1;
        }
        let cnt = pre[j][0] - pre[i][0];
        if cnt == 0.0 {
            continue;
        }
        let mean_d = (pre[j][3] - pre[i][3]) / cnt;
        if best.is_none_or(|(b, _, _)| mean_d < b) {
            best = Some((mean_d, i, j));
        }
    }
    let (_, i, j) = best.ok_or(GazeError::NoValidSamples)?;
    let cnt = pre[j][0] - pre[i][0];
    let dx = (pre[j][1] - pre[i][1]) / cnt - target.0;
    let dy = (pre[j][2] - pre[i][2]) / cnt - target.1;
    Ok(QualityResult {
        accept: dx.abs() <= max_offset_px && dy.abs() <= max_offset_px,
        offset: (dx, dy),
        window_start_ms: calib[i].t_ms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialLabel {
    Hit,
    Miss,
    FalseAlarm,
    CorrectRejection,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLabel::Hit => "hit",
            TrialLabel::Miss => "miss",
            TrialLabel::FalseAlarm => "false_alarm",
            TrialLabel::CorrectRejection => "correct_rejection",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub interval: IntervalRecord,
    /// Fixations starting inside the interval.
    pub fixations: Vec<Fixation>,
    /// First key press inside the interval, task time in ms.
    pub keypress_ms: Option<f64>,
    pub label: TrialLabel,
    /// Response time from interval onset, hits only.
    pub rt_s: Option<f64>,
}

impl Trial {
    pub fn is_hit(&self) -> bool {
        self.label == TrialLabel::Hit
    }

    pub fn is_miss(&self) -> bool {
        self.label == TrialLabel::Miss
    }

    pub fn is_false_alarm(&self) -> bool {
        self.label == TrialLabel::FalseAlarm
    }
}

/// One trial per interval. `gaze_span_ms` is the recorded gaze span and must
/// match the scenario duration to within one frame.
pub fn segment_trials(
    fixations: &[Fixation],
    gaze_span_ms: (f64, f64),
    trace: &ScenarioTrace,
    keypresses_ms: &[f64],
) -> Result<Vec<Trial>, GazeError> {
    let duration = trace.duration_ms();
    let tol = 1000.0 / trace.frame_rate_hz as f64;
    if gaze_span_ms.0.abs() > tol || (gaze_span_ms.1 - duration).abs() > tol {
        return Err(GazeError::DurationMismatch(gaze_span_ms.0, gaze_span_ms.1, duration));
    }
    let len_ms = trace.interval_s * 1000.0;
    Ok(trace
        .plan
        .intervals
        .iter()
        .map(|rec| {
            let a = rec.onset_s * 1000.0;
            let b = a + len_ms;
            let press = keypresses_ms.iter().copied().find(|&k| k >= a && k < b);
            let label = match (rec.is_critical, press.is_some()) {
                (true, true) => TrialLabel::Hit,
                (true, false) => TrialLabel::Miss,
                (false, true) => TrialLabel::FalseAlarm,
                (false, false) => TrialLabel::CorrectRejection,
            };
            Trial {
                interval: rec.clone(),
                fixations: fixations
                    .iter()
                    .filter(|f| f.start_ms >= a && f.start_ms < b)
                    .copied()
                    .collect(),
                keypress_ms: press,
                label,
                rt_s: (label == TrialLabel::Hit).then(|| (press.unwrap() - a) / 1000.0),
            }
        })
        .collect())
}

/// Detection performance; `None` marks an empty denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub hit_rate: Option<f64>,
    pub miss_rate: Option<f64>,
    pub mean_rt_s: Option<f64>,
    pub false_alarm_rate: Option<f64>,
}

pub fn detection_metrics(trials: &[Trial]) -> DetectionMetrics {
    let critical: Vec<&Trial> = trials.iter().filter(|t| t.interval.is_critical).collect();
    let nominal = trials.len() - critical.len();
    let hits: Vec<f64> = critical.iter().filter_map(|t| t.rt_s).collect();
    let fas = trials.iter().filter(|t| t.is_false_alarm()).count();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    DetectionMetrics {
        hit_rate: ratio(hits.len(), critical.len()),
        miss_rate: ratio(critical.len() - hits.len(), critical.len()),
        mean_rt_s: (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64),
        false_alarm_rate: ratio(fas, nominal),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GazeMetrics {
    pub fixation_count: usize,
    pub fixation_duration_s: f64,
    pub revisits: usize,
    pub mean_saccade_amplitude_px: f64,
    pub scanpath_len_per_s_px: f64,
    pub aoi_transition_rate_per_s: f64,
}

/// Engagement metrics for one AOI plus exploration metrics over the whole
/// fixation sequence, which covers `span_s` seconds.
pub fn aoi_gaze_metrics(
    fixations: &[Fixation],
    aoi: &BBox,
    layout: &Layout,
    span_s: f64,
) -> Result<GazeMetrics, GazeError> {
    if span_s <= 0.0 || !span_s.is_finite() {
        return Err(GazeError::InvalidSpan(span_s));
    }
    let inside: Vec<bool> = fixations.iter().map(|f| aoi.contains(f.x, f.y)).collect();
    let fixation_count = inside.iter().filter(|&&b| b).count();
    let fixation_duration_s = fixations
        .iter()
        .zip(&inside)
        .filter(|(_, &b)| b)
        .map(|(f, _)| f.duration_ms / 1000.0)
        .sum();
    let runs = inside
        .iter()
        .enumerate()
        .filter(|&(k, &b)| b && (k == 0 || !inside[k - 1]))
        .count();
    let amplitudes: Vec<f64> = fixations
        .windows(2)
        .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
        .collect();
    let total: f64 = amplitudes.iter().sum();
    let transitions = fixations
        .windows(2)
        .filter(|w| layout.element_index_at(w[0].x, w[0].y) != layout.element_index_at(w[1].x, w[1].y))
        .count();
    Ok(GazeMetrics {
        fixation_count,
        fixation_duration_s,
        revisits: runs.saturating_sub(1),
        mean_saccade_amplitude_px: if amplitudes.is_empty() {
            0.0
        } else {
            total / amplitudes.len() as f64
        },
        scanpath_len_per_s_px: total / span_s,
        aoi_transition_rate_per_s: transitions as f64 / span_s,
    })
}

fn pooled_map(groups: &[&Vec<(f64, f64)>], width: u32, height: u32) -> SaliencyMap {
    let mut m = SaliencyMap::zeros(width, height);
    for pts in groups {
        for &(x, y) in pts.iter() {
            if let Some((px, py)) = pixel_of(x, y, width, height) {
                let v = m.get(px, py);
                m.set(px, py, v + 1.0);
            }
        }
    }
    m
}

/// Mean CC between the smoothed pooled fixation maps of two random,
/// equal-sized halves of the participants. With an odd count one randomly
/// chosen participant sits out each iteration.
pub fn split_half_reliability<R: Rng + ?Sized>(
    points_by_participant: &[Vec<(f64, f64)>],
    width: u32,
    height: u32,
    window_px: usize,
    iterations: usize,
    rng: &mut R,
) -> Result<f64, GazeError> {
    let n = points_by_participant.len();
    if n < 2 {
        return Err(GazeError::TooFewParticipants(n));
    }
    let kernel = Kernel::for_window(window_px)?;
    let half = n / 2;
    let mut order: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for _ in 0..iterations.max(1) {
        order.shuffle(rng);
        let a: Vec<&Vec<(f64, f64)>> = order[..half].iter().map(|&i| &points_by_participant[i]).collect();
        let b: Vec<&Vec<(f64, f64)>> = order[half..2 * half]
            .iter()
            .map(|&i| &points_by_participant[i])
            .collect();
        let ma = convolve(&pooled_map(&a, width, height), &kernel);
        let mb = convolve(&pooled_map(&b, width, height), &kernel);
        total += metrics::cc(&ma, &mb)?;
    }
    Ok(total / iterations.max(1) as f64)
}

pub fn write_gaze_csv<W: Write>(samples: &[GazeSample], out: W) -> Result<(), GazeError> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_gaze_csv<R: Read>(input: R) -> Result<Vec<GazeSample>, GazeError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(GazeError::from))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct FixationRow {
    start_ms: f64,
    end_ms: f64,
    duration_ms: f64,
    x_px: f64,
    y_px: f64,
}

pub fn write_fixations_csv<W: Write>(fixations: &[Fixation], out: W) -> Result<(), GazeError> {
    let mut w = csv::Writer::from_writer(out);
    for f in fixations {
        w.serialize(FixationRow {
            start_ms: f.start_ms,
            end_ms: f.end_ms,
            duration_ms: f.duration_ms,
            x_px: f.x,
            y_px: f.y,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_fixations_csv<R: Read>(input: R) -> Result<Vec<Fixation>, GazeError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| {
            let r: FixationRow = r?;
            Ok(Fixation {
                start_ms: r.start_ms,
                end_ms: r.end_ms,
                duration_ms: r.duration_ms,
                x: r.x_px,
                y: r.y_px,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct TrialRow {
    interval: usize,
    critical: bool,
    highlighted: bool,
    label: &'static str,
    rt_s: Option<f64>,
}

/// Trial summary CSV: `interval,critical,highlighted,label,rt_s`.
pub fn write_trials_csv<W: Write>(trials: &[Trial], out: W) -> Result<(), GazeError> {
    let mut w = csv::Writer::from_writer(out);
    for t in trials {
        w.serialize(TrialRow {
            interval: t.interval.index,
            critical: t.interval.is_critical,
            highlighted: t.interval.highlighted,
            label: t.label.as_str(),
            rt_s: t.rt_s,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
