//! Training pairs from pooled event NS: one stacked raster per trial and one
//! (temporal input, target NS) pair per slice of the event window.

use attnlab_core::dronesim::{IntervalRecord, ScenarioTrace};
use attnlab_core::rng;
use attnlab_core::saliency::NsSeries;
use attnlab_core::study::EventNs;
use attnlab_core::{Layout, TimeGrid};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::inputs::{stacked_frame_at, temporal_inputs, StackedInput, TemporalInput};
use crate::model::{HismModel, Item, Mode};
use crate::HismError;

/// Offset after onset at which a trial's raster is taken, so the frame
/// already shows the event's display state.
pub const RASTER_OFFSET_MS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub task_id: u32,
    pub interval: usize,
    pub onset_ms: f64,
    pub element: usize,
    pub highlighted: bool,
    /// Observed NS of the target element per slice.
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub trial: usize,
    pub slice: usize,
    pub temporal: TemporalInput,
    pub target: f64,
    /// Slice at or after the onset of a highlighted event.
    pub highlighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub grid: TimeGrid,
    pub images: Vec<StackedInput>,
    pub trials: Vec<Trial>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn highlighted_pairs(&self) -> usize {
        self.samples.iter().filter(|s| s.highlighted).count()
    }

    pub fn items<'a>(&'a self, idx: &[usize]) -> Vec<Item<'a>> {
        idx.iter()
            .map(|&i| Item {
                image: self.samples[i].trial,
                temporal: &self.samples[i].temporal,
            })
            .collect()
    }

    pub fn targets(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.samples[i].target).collect()
    }

    /// Sample indices whose trial lies in `split`.
    pub fn indices(&self, splits: &[Split], split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| splits[self.samples[i].trial] == split)
            .collect()
    }

    /// Eval-mode predictions in chunks.
    pub fn predict(&self, model: &HismModel, idx: &[usize]) -> Result<Vec<f64>, HismError> {
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(240) {
            out.extend(model.forward_batch(&self.images, &self.items(chunk), Mode::Eval)?);
        }
        Ok(out)
    }

    pub fn mse(&self, model: &HismModel, idx: &[usize]) -> Result<f64, HismError> {
        if idx.is_empty() {
            return Err(HismError::EmptySplit("evaluation"));
        }
        let p = self.predict(model, idx)?;
        Ok(p.iter().zip(self.targets(idx)).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / idx.len() as f64)
    }
}

fn interval_of(trace: &ScenarioTrace, index: usize) -> Result<&IntervalRecord, HismError> {
    trace
        .plan
        .intervals
        .get(index)
        .ok_or(HismError::MissingInterval(trace.task_id, index))
}

/// Builds the pair set from the first `per_condition` highlighted and the
/// first `per_condition` un-highlighted events (task then interval order).
pub fn build_dataset(
    scenarios: &[ScenarioTrace],
    events: &[EventNs],
    layout: &Layout,
    grid: &TimeGrid,
    image_size: usize,
    per_condition: usize,
) -> Result<Dataset, HismError> {
    let mut chosen: Vec<&EventNs> = Vec::new();
    for cond in [true, false] {
        let picked: Vec<&EventNs> = events.iter().filter(|e| e.highlighted == cond).take(per_condition).collect();
        if picked.len() < per_condition {
            return Err(HismError::NotEnoughEvents {
                highlighted: cond,
                want: per_condition,
                have: picked.len(),
            });
        }
        chosen.extend(picked);
    }
    let mut images = Vec::new();
    let mut trials = Vec::new();
    let mut samples = Vec::new();
    for (ti, ev) in chosen.iter().enumerate() {
        let trace = scenarios
            .iter()
            .find(|s| s.task_id == ev.task_id)
            .ok_or(HismError::MissingInterval(ev.task_id, ev.interval))?;
        let rec = interval_of(trace, ev.interval)?;
        images.push(stacked_frame_at(trace, layout, ev.element, ev.onset_ms + RASTER_OFFSET_MS, image_size)?);
        let target = ev.target_series(layout).ns;
        for (k, &y) in target.iter().enumerate() {
            let (_, end) = grid.slice_bounds_ms(k);
            samples.push(Sample {
                trial: ti,
                slice: k,
                temporal: temporal_inputs(trace, rec, layout, ev.element, end, grid)?,
                target: y,
                highlighted: ev.highlighted && grid.slice_start_ms(k) >= 0,
            });
        }
        trials.push(Trial {
            task_id: ev.task_id,
            interval: ev.interval,
            onset_ms: ev.onset_ms,
            element: ev.element,
            highlighted: ev.highlighted,
            target,
        });
    }
    Ok(Dataset {
        grid: *grid,
        images,
        trials,
        samples,
    })
}

/// Trial-level split, stratified by highlight condition. Per condition the
/// test and validation counts are the rounded fractions; the rest trains.
pub fn split_trials(trials: &[Trial], fractions: [f64; 3], seed: u64) -> Result<Vec<Split>, HismError> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(HismError::BadSplit(fractions));
    }
    let mut out = vec![Split::Train; trials.len()];
    for cond in [true, false] {
        let mut idx: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].highlighted == cond).collect();
        idx.shuffle(&mut rng::stream(seed, rng::label(&[0x5911, cond as u64])));
        let n = idx.len() as f64;
        let n_test = (fractions[2] * n).round() as usize;
        let n_val = (fractions[1] * n).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            out[i] = if k < n_test {
                Split::Test
            } else if k < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    for (s, name) in [(Split::Train, "train"), (Split::Val, "validation"), (Split::Test, "test")] {
        if !out.contains(&s) {
            return Err(HismError::EmptySplit(name));
        }
    }
    Ok(out)
}

/// Predicted NS of `element` over the event window of `interval`: one
/// eval-mode forward per slice, queried at the slice end.
pub fn predict_series(
    model: &HismModel,
    trace: &ScenarioTrace,
    interval: &IntervalRecord,
    layout: &Layout,
    element: usize,
    grid: &TimeGrid,
) -> Result<NsSeries, HismError> {
    let onset = interval.onset_s * 1000.0;
    let image = stacked_frame_at(trace, layout, element, onset + RASTER_OFFSET_MS, model.config.image_size)?;
    let tins = (0..grid.len())
        .map(|k| temporal_inputs(trace, interval, layout, element, grid.slice_bounds_ms(k).1, grid))
        .collect::<Result<Vec<_>, _>>()?;
    let items: Vec<Item> = tins.iter().map(|t| Item { image: 0, temporal: t }).collect();
    let ns = model.forward_batch(std::slice::from_ref(&image), &items, Mode::Eval)?;
    Ok(NsSeries {
        element_id: layout.elements()[element].id.clone(),
        t_rel_s: grid.t_rel_all(),
        undefined: vec![false; ns.len()],
        ns,
    })
}
