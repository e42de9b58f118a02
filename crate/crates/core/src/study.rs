//! Cohort runs: shared task scenarios, one synthetic session per participant
//! and task, fixation detection, calibration screening and pooled NS series
//! around every critical event.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dronesim::{simulate_task, ScenarioTrace, SimConfig, SimError};
use crate::gazegen::{generate_session, BehaviorParams, GazeGenError};
use crate::gazeproc::{
    detect_fixations, quality_filter, Fixation, GazeError, QualityResult, DEFAULT_DISPERSION_PX,
    DEFAULT_MIN_DURATION_MS,
};
use crate::layout::{IconKind, Layout};
use crate::saliency::{ns_slices, Coverage, Kernel, NsSeries, NsSlices, SaliencyError, DEFAULT_WINDOW_PX};
use crate::timegrid::TimeGrid;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("simulate: {0}")]
    Sim(#[from] SimError),
    #[error("gaze generation: {0}")]
    GazeGen(#[from] GazeGenError),
    #[error("gaze processing: {0}")]
    Gaze(#[from] GazeError),
    #[error("saliency: {0}")]
    Saliency(#[from] SaliencyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub seed: u64,
    pub participants: u32,
    pub tasks: u32,
    pub sim: SimConfig,
    pub behavior: BehaviorParams,
    pub grid: TimeGrid,
    pub dispersion_px: f64,
    pub min_fixation_ms: f64,
    pub smoothing_window_px: usize,
    pub calibration_window_s: f64,
    pub max_offset_px: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            seed: 7,
            participants: 28,
            tasks: 4,
            sim: SimConfig::desk_default(),
            behavior: BehaviorParams::default(),
            grid: TimeGrid::default(),
            dispersion_px: DEFAULT_DISPERSION_PX,
            min_fixation_ms: DEFAULT_MIN_DURATION_MS,
            smoothing_window_px: DEFAULT_WINDOW_PX,
            calibration_window_s: 1.0,
            max_offset_px: 70.0,
        }
    }
}

/// Processed recording of one participant on one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub participant: u32,
    pub task_id: u32,
    pub fixations: Vec<Fixation>,
    pub keypresses_ms: Vec<f64>,
    pub gaze_span_ms: (f64, f64),
    pub quality: QualityResult,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub scenarios: Vec<ScenarioTrace>,
    pub recordings: Vec<Recording>,
}

impl Cohort {
    /// Recordings that passed calibration screening.
    pub fn accepted(&self) -> impl Iterator<Item = &Recording> {
        self.recordings.iter().filter(|r| r.quality.accept)
    }

    /// Fixation centroids per accepted participant, all tasks pooled.
    pub fn points_by_participant(&self) -> Vec<Vec<(f64, f64)>> {
        let mut ids: Vec<u32> = self.accepted().map(|r| r.participant).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.iter()
            .map(|&p| {
                self.accepted()
                    .filter(|r| r.participant == p)
                    .flat_map(|r| r.fixations.iter().map(|f| (f.x, f.y)))
                    .collect()
            })
            .collect()
    }
}

/// Task ids run from 1; all participants see the same scenarios.
pub fn simulate_tasks(cfg: &StudyConfig) -> Result<Vec<ScenarioTrace>, StudyError> {
    (1..=cfg.tasks)
        .map(|t| Ok(simulate_task(&cfg.sim, t, cfg.seed)?))
        .collect()
}

pub fn run_cohort(cfg: &StudyConfig, layout: &Layout) -> Result<Cohort, StudyError> {
    let scenarios = simulate_tasks(cfg)?;
    let mut recordings = Vec::new();
    for p in 0..cfg.participants {
        for sc in &scenarios {
            let s = generate_session(sc, layout, &cfg.behavior, p, cfg.seed)?;
            let quality = quality_filter(&s.calibration, s.calibration_target, cfg.calibration_window_s, cfg.max_offset_px)?;
            recordings.push(Recording {
                participant: p,
                task_id: sc.task_id,
                fixations: detect_fixations(&s.gaze.samples, cfg.dispersion_px, cfg.min_fixation_ms),
                keypresses_ms: s.keypresses_ms,
                gaze_span_ms: s.gaze.span_ms(),
                quality,
            });
        }
    }
    Ok(Cohort { scenarios, recordings })
}

/// Pooled NS around one critical event.
#[derive(Debug, Clone)]
pub struct EventNs {
    pub task_id: u32,
    pub interval: usize,
    pub onset_ms: f64,
    pub drone: usize,
    pub kind: IconKind,
    pub highlighted: bool,
    pub element: usize,
    pub slices: NsSlices,
}

impl EventNs {
    pub fn target_series(&self, layout: &Layout) -> NsSeries {
        self.slices.series(layout, self.element)
    }
}

/// NS of all elements around every critical event whose window lies inside
/// the recording, from the fixations of all accepted participants pooled
/// into one map per slice.
pub fn pooled_event_ns(cohort: &Cohort, layout: &Layout, cfg: &StudyConfig) -> Result<Vec<EventNs>, StudyError> {
    let kernel = Kernel::for_window(cfg.smoothing_window_px)?;
    let grid = &cfg.grid;
    let mut out = Vec::new();
    for sc in &cohort.scenarios {
        let recs: Vec<&Recording> = cohort.accepted().filter(|r| r.task_id == sc.task_id).collect();
        let pooled: Vec<Fixation> = recs.iter().flat_map(|r| r.fixations.iter().copied()).collect();
        let coverage = Coverage {
            start_ms: recs.iter().map(|r| r.gaze_span_ms.0).fold(0.0, f64::max),
            end_ms: recs.iter().map(|r| r.gaze_span_ms.1).fold(sc.duration_ms(), f64::min),
        };
        for rec in sc.critical_intervals() {
            let onset = rec.onset_s * 1000.0;
            if onset + (grid.window_start_ms as f64) < coverage.start_ms
                || onset + (grid.window_end_ms as f64) > coverage.end_ms
            {
                continue;
            }
            let element = layout
                .find(rec.drone_index, rec.kind)
                .ok_or(SaliencyError::UnknownElement(rec.drone_index))?;
            out.push(EventNs {
                task_id: sc.task_id,
                interval: rec.index,
                onset_ms: onset,
                drone: rec.drone_index,
                kind: rec.kind,
                highlighted: rec.highlighted,
                element,
                slices: ns_slices(&pooled, layout, onset, grid, coverage, &kernel)?,
            });
        }
    }
    Ok(out)
}

/// Element-wise mean of target NS series over events.
pub fn mean_target_series<'a>(events: impl IntoIterator<Item = &'a EventNs>, layout: &Layout) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for e in events {
        let s = e.target_series(layout).ns;
        match acc.as_mut() {
            None => acc = Some(s),
            Some(a) => a.iter_mut().zip(&s).for_each(|(x, y)| *x += y),
        }
        n += 1;
    }
    acc.map(|a| a.into_iter().map(|x| x / n as f64).collect())
}
