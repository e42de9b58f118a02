//! Stage runner. Stages execute in a fixed order over shared in-memory
//! state; each writes its artifacts under the output directory and the
//! manifest is rewritten after every stage so partial runs stay described.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use attnlab_core::dronesim::{write_events_csv, write_trace_jsonl, ScenarioTrace};
use attnlab_core::gazegen::generate_session;
use attnlab_core::gazeproc::{
    segment_trials, split_half_reliability, write_fixations_csv, write_gaze_csv, write_trials_csv,
    Fixation,
};
use attnlab_core::itti::itti_saliency;
use attnlab_core::metrics::{self, MetricReport, Split as ReportSplit};
use attnlab_core::render::{render_frame, write_png};
use attnlab_core::saliency::{
    fixation_active, normalized_saliency_all, pixel_of, smooth_map, write_ns_csv, write_smap,
    NsSeries, SaliencyMap,
};
use attnlab_core::stats::{self, TestResult};
use attnlab_core::study::{
    mean_target_series, pooled_event_ns, run_cohort, Cohort, EventNs, StudyConfig,
};
use attnlab_core::{rng, Layout};
use attnlab_hism::checkpoint;
use attnlab_hism::dataset::RASTER_OFFSET_MS;
use attnlab_hism::train::write_history_csv;
use attnlab_hism::{build_dataset, train, Dataset, Split, TrainResult};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::export;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Simulate,
    GazeGen,
    Fixations,
    Saliency,
    Ns,
    Itti,
    Dataset,
    Train,
    Predict,
    Eval,
    Stats,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::Simulate,
        Stage::GazeGen,
        Stage::Fixations,
        Stage::Saliency,
        Stage::Ns,
        Stage::Itti,
        Stage::Dataset,
        Stage::Train,
        Stage::Predict,
        Stage::Eval,
        Stage::Stats,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::GazeGen => "gaze-gen",
            Stage::Fixations => "fixations",
            Stage::Saliency => "saliency",
            Stage::Ns => "ns",
            Stage::Itti => "itti",
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Eval => "eval",
            Stage::Stats => "stats",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s || st.name().replace('-', "_") == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Error)]
#[error("stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

type StageResult = Result<(), Box<dyn std::error::Error>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_sha256: String,
    pub stages: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Held-out trial prediction.
#[derive(Debug, Clone)]
pub struct TrialPrediction {
    pub trial: usize,
    pub highlighted: bool,
    pub predicted: Vec<f64>,
    pub observed: Vec<f64>,
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    study: StudyConfig,
    layout: Layout,
    out: PathBuf,
    artifacts: BTreeMap<String, Artifact>,
    stages: Vec<String>,
    scenarios: Vec<ScenarioTrace>,
    cohort: Option<Cohort>,
    maps: Vec<(&'static str, SaliencyMap)>,
    events: Vec<EventNs>,
    itti_maps: Vec<(&'static str, SaliencyMap)>,
    dataset: Option<Dataset>,
    trained: Option<TrainResult>,
    predictions: Vec<TrialPrediction>,
}

impl Ctx<'_> {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes)?;
        self.artifacts.insert(
            rel.to_string(),
            Artifact {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> StageResult {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(rel, &text)?;
        Ok(())
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            seed: self.cfg.seed,
            config_sha256: sha256_hex(self.cfg.to_toml().as_bytes()),
            stages: self.stages.clone(),
            artifacts: self.artifacts.values().cloned().collect(),
        }
    }

    fn cohort(&self) -> &Cohort {
        self.cohort.as_ref().expect("fixations stage ran")
    }

    fn dataset(&self) -> &Dataset {
        self.dataset.as_ref().expect("dataset stage ran")
    }

    fn trained(&self) -> &TrainResult {
        self.trained.as_ref().expect("train stage ran")
    }
}

/// Runs every stage up to and including `until`; returns the manifest that
/// was written to `<out>/manifest.json`.
pub fn run_pipeline(cfg: &PipelineConfig, until: Stage) -> Result<Manifest, PipelineError> {
    let setup = |e: &dyn fmt::Display| PipelineError {
        stage: Stage::Simulate,
        message: e.to_string(),
    };
    cfg.validate().map_err(|e| setup(&e))?;
    let layout = cfg.layout().map_err(|e| setup(&e))?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| setup(&e))?;
    let mut ctx = Ctx {
        cfg,
        study: cfg.study(),
        layout,
        out: cfg.out_dir.clone(),
        artifacts: BTreeMap::new(),
        stages: Vec::new(),
        scenarios: Vec::new(),
        cohort: None,
        maps: Vec::new(),
        events: Vec::new(),
        itti_maps: Vec::new(),
        dataset: None,
        trained: None,
        predictions: Vec::new(),
    };
    ctx.write("config.toml", cfg.to_toml().as_bytes())
        .map_err(|e| setup(&e))?;
    for stage in Stage::ALL.into_iter().filter(|&s| s <= until) {
        let res = match stage {
            Stage::Simulate => simulate(&mut ctx),
            Stage::GazeGen => gaze_gen(&mut ctx),
            Stage::Fixations => fixations(&mut ctx),
            Stage::Saliency => saliency(&mut ctx),
            Stage::Ns => ns(&mut ctx),
            Stage::Itti => itti(&mut ctx),
            Stage::Dataset => dataset(&mut ctx),
            Stage::Train => train_stage(&mut ctx),
            Stage::Predict => predict(&mut ctx),
            Stage::Eval => eval(&mut ctx),
            Stage::Stats => stats_stage(&mut ctx),
            Stage::Export => export_stage(&mut ctx),
        };
        let fail = |message: String| PipelineError { stage, message };
        res.map_err(|e| fail(e.to_string()))?;
        ctx.stages.push(stage.name().to_string());
        let m = ctx.manifest();
        let mut text = serde_json::to_vec_pretty(&m).map_err(|e| fail(e.to_string()))?;
        text.push(b'\n');
        std::fs::write(ctx.out.join("manifest.json"), text).map_err(|e| fail(e.to_string()))?;
    }
    Ok(ctx.manifest())
}

fn simulate(ctx: &mut Ctx) -> StageResult {
    ctx.scenarios = attnlab_core::study::simulate_tasks(&ctx.study)?;
    for i in 0..ctx.scenarios.len() {
        let (mut trace, mut events) = (Vec::new(), Vec::new());
        write_trace_jsonl(&ctx.scenarios[i], &mut trace)?;
        write_events_csv(&ctx.scenarios[i], &mut events)?;
        let id = ctx.scenarios[i].task_id;
        ctx.write(&format!("simulate/task_{id}.jsonl"), &trace)?;
        ctx.write(&format!("simulate/events_task_{id}.csv"), &events)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SessionRow {
    participant: u32,
    task: u32,
    samples: usize,
    valid_fraction: f64,
    keypresses: usize,
    tracker_offset_x: f64,
    tracker_offset_y: f64,
}

/// Sessions are regenerated in later stages rather than kept: one task of
/// raw 250 Hz gaze is tens of thousands of samples per participant.
fn gaze_gen(ctx: &mut Ctx) -> StageResult {
    let mut summary = csv::Writer::from_writer(Vec::new());
    let mut presses = String::from("participant,task,t_ms\n");
    for p in 0..ctx.study.participants {
        for i in 0..ctx.scenarios.len() {
            let sc = &ctx.scenarios[i];
            let s = generate_session(sc, &ctx.layout, &ctx.study.behavior, p, ctx.study.seed)?;
            let valid = s.gaze.samples.iter().filter(|g| g.valid).count();
            summary.serialize(SessionRow {
                participant: p,
                task: sc.task_id,
                samples: s.gaze.samples.len(),
                valid_fraction: valid as f64 / s.gaze.samples.len().max(1) as f64,
                keypresses: s.keypresses_ms.len(),
                tracker_offset_x: s.tracker_offset.0,
                tracker_offset_y: s.tracker_offset.1,
            })?;
            for k in &s.keypresses_ms {
                presses.push_str(&format!("{p},{},{k}\n", sc.task_id));
            }
            if ctx.cfg.gaze.write_raw {
                let mut raw = Vec::new();
                write_gaze_csv(&s.gaze.samples, &mut raw)?;
                let task = sc.task_id;
                ctx.write(&format!("gaze/p{p:02}_task{task}.csv"), &raw)?;
            }
        }
    }
    let summary = summary.into_inner()?;
    ctx.write("gaze/sessions.csv", &summary)?;
    ctx.write("gaze/keypresses.csv", presses.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct QualityRow {
    participant: u32,
    task: u32,
    accept: bool,
    offset_x: f64,
    offset_y: f64,
    fixations: usize,
}

fn fixations(ctx: &mut Ctx) -> StageResult {
    let cohort = run_cohort(&ctx.study, &ctx.layout)?;
    let mut quality = csv::Writer::from_writer(Vec::new());
    let mut trials_all = Vec::new();
    for r in &cohort.recordings {
        quality.serialize(QualityRow {
            participant: r.participant,
            task: r.task_id,
            accept: r.quality.accept,
            offset_x: r.quality.offset.0,
            offset_y: r.quality.offset.1,
            fixations: r.fixations.len(),
        })?;
        let mut buf = Vec::new();
        write_fixations_csv(&r.fixations, &mut buf)?;
        ctx.write(
            &format!("fixations/p{:02}_task{}.csv", r.participant, r.task_id),
            &buf,
        )?;
        let sc = cohort
            .scenarios
            .iter()
            .find(|s| s.task_id == r.task_id)
            .expect("scenario");
        let trials = segment_trials(&r.fixations, r.gaze_span_ms, sc, &r.keypresses_ms)?;
        let mut buf = Vec::new();
        write_trials_csv(&trials, &mut buf)?;
        ctx.write(
            &format!(
                "fixations/trials_p{:02}_task{}.csv",
                r.participant, r.task_id
            ),
            &buf,
        )?;
        trials_all.extend(trials);
    }
    let q = quality.into_inner()?;
    ctx.write("fixations/quality.csv", &q)?;
    let d = attnlab_core::gazeproc::detection_metrics(&trials_all);
    ctx.write_json(
        "fixations/detection.json",
        &serde_json::json!({
            "hit_rate": d.hit_rate,
            "miss_rate": d.miss_rate,
            "mean_rt_s": d.mean_rt_s,
            "false_alarm_rate": d.false_alarm_rate,
        }),
    )?;
    ctx.cohort = Some(cohort);
    Ok(())
}

/// Raw fixation-count map over the first `window_s` after each selected
/// onset, pooled over accepted participants.
fn event_fixation_points(cohort: &Cohort, highlighted: bool, window_s: f64) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    for sc in &cohort.scenarios {
        for rec in sc
            .critical_intervals()
            .filter(|r| r.highlighted == highlighted)
        {
            let a = rec.onset_s * 1000.0;
            let b = a + window_s * 1000.0;
            for r in cohort.accepted().filter(|r| r.task_id == sc.task_id) {
                pts.extend(
                    r.fixations
                        .iter()
                        .filter(|f| fixation_active(f, a, b))
                        .map(|f| (f.x, f.y)),
                );
            }
        }
    }
    pts
}

fn count_map(points: &[(f64, f64)], w: u32, h: u32) -> SaliencyMap {
    let mut m = SaliencyMap::zeros(w, h);
    for &(x, y) in points {
        if let Some((px, py)) = pixel_of(x, y, w, h) {
            let v = m.get(px, py);
            m.set(px, py, v + 1.0);
        }
    }
    m
}

fn saliency(ctx: &mut Ctx) -> StageResult {
    let (w, h) = (ctx.layout.width_px(), ctx.layout.height_px());
    let cohort = ctx.cohort.take().expect("fixations stage ran");
    let mut maps = Vec::new();
    for (name, cond) in [("highlight", true), ("no_highlight", false)] {
        let pts = event_fixation_points(&cohort, cond, ctx.cfg.analysis.map_window_s);
        let m = smooth_map(&count_map(&pts, w, h), ctx.study.smoothing_window_px)?;
        let mut buf = Vec::new();
        write_smap(&m, &mut buf)?;
        ctx.write(&format!("saliency/{name}.smap"), &buf)?;
        maps.push((name, m));
    }
    let reliability = split_half_reliability(
        &cohort.points_by_participant(),
        w,
        h,
        ctx.study.smoothing_window_px,
        ctx.cfg.analysis.reliability_iterations,
        &mut rng::stream(ctx.cfg.seed, rng::label(&[0x5a11])),
    )?;
    ctx.write_json(
        "saliency/reliability.json",
        &serde_json::json!({ "split_half_cc": reliability, "iterations": ctx.cfg.analysis.reliability_iterations }),
    )?;
    ctx.maps = maps;
    ctx.cohort = Some(cohort);
    Ok(())
}

#[derive(Serialize)]
struct EventRow<'a> {
    event: usize,
    task: u32,
    interval: usize,
    onset_ms: f64,
    element_id: &'a str,
    highlighted: bool,
    peak_ns: f64,
    peak_t_s: f64,
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

fn ns(ctx: &mut Ctx) -> StageResult {
    let events = pooled_event_ns(ctx.cohort(), &ctx.layout, &ctx.study)?;
    let grid = ctx.study.grid;
    let mut rows = csv::Writer::from_writer(Vec::new());
    let mut series = String::from("event,t_rel_s,ns,flag\n");
    for (i, e) in events.iter().enumerate() {
        let s = e.target_series(&ctx.layout);
        let k = argmax(&s.ns);
        rows.serialize(EventRow {
            event: i,
            task: e.task_id,
            interval: e.interval,
            onset_ms: e.onset_ms,
            element_id: &s.element_id,
            highlighted: e.highlighted,
            peak_ns: s.ns[k],
            peak_t_s: grid.t_rel_s(k),
        })?;
        for (j, v) in s.ns.iter().enumerate() {
            series.push_str(&format!(
                "{i},{:.1},{v},{}\n",
                grid.t_rel_s(j),
                u8::from(s.undefined[j])
            ));
        }
    }
    let rows = rows.into_inner()?;
    ctx.write("ns/events.csv", &rows)?;
    ctx.write("ns/target_series.csv", series.as_bytes())?;
    for (name, cond) in [("highlight", true), ("no_highlight", false)] {
        if let Some(mean) =
            mean_target_series(events.iter().filter(|e| e.highlighted == cond), &ctx.layout)
        {
            let s = NsSeries {
                element_id: format!("target_{name}"),
                t_rel_s: grid.t_rel_all(),
                undefined: vec![false; mean.len()],
                ns: mean,
            };
            let mut buf = Vec::new();
            write_ns_csv(std::slice::from_ref(&s), &mut buf)?;
            ctx.write(&format!("ns/mean_{name}.csv"), &buf)?;
        }
    }
    ctx.events = events;
    Ok(())
}

/// Bottom-up map of the frame shown just after an event's onset, upsampled
/// to layout resolution.
fn itti_map(
    ctx: &Ctx,
    task_id: u32,
    onset_ms: f64,
) -> Result<SaliencyMap, Box<dyn std::error::Error>> {
    let sc = ctx
        .scenarios
        .iter()
        .find(|s| s.task_id == task_id)
        .ok_or("missing scenario")?;
    let a = &ctx.cfg.analysis;
    let frame = render_frame(
        &ctx.layout,
        sc.frame_at_ms(onset_ms + RASTER_OFFSET_MS),
        a.itti_width,
        a.itti_height,
    );
    Ok(itti_saliency(&frame)?.resize_bilinear(ctx.layout.width_px(), ctx.layout.height_px()))
}

#[derive(Serialize)]
struct IttiRow<'a> {
    event: usize,
    highlighted: bool,
    element_id: &'a str,
    target_ns: f64,
    target_rank: usize,
    max_ns: f64,
}

fn itti(ctx: &mut Ctx) -> StageResult {
    let mut rows = csv::Writer::from_writer(Vec::new());
    let mut examples = Vec::new();
    for i in 0..ctx.events.len() {
        let (task, onset, element, hl) = {
            let e = &ctx.events[i];
            (e.task_id, e.onset_ms, e.element, e.highlighted)
        };
        let map = itti_map(ctx, task, onset)?;
        let (ns, _) = normalized_saliency_all(&map, &ctx.layout)?;
        let rank = ns.iter().filter(|&&v| v > ns[element]).count() + 1;
        rows.serialize(IttiRow {
            event: i,
            highlighted: hl,
            element_id: &ctx.layout.elements()[element].id,
            target_ns: ns[element],
            target_rank: rank,
            max_ns: ns.iter().copied().fold(0.0, f64::max),
        })?;
        let name = if hl { "highlight" } else { "no_highlight" };
        if !examples.iter().any(|(n, _)| *n == name) {
            let mut buf = Vec::new();
            write_smap(&map, &mut buf)?;
            ctx.write(&format!("itti/example_{name}.smap"), &buf)?;
            examples.push((name, map));
        }
    }
    let rows = rows.into_inner()?;
    ctx.write("itti/event_ns.csv", &rows)?;
    ctx.itti_maps = examples;
    Ok(())
}

#[derive(Serialize)]
struct TrialRow<'a> {
    trial: usize,
    task: u32,
    interval: usize,
    element_id: &'a str,
    highlighted: bool,
    split: Split,
}

fn dataset(ctx: &mut Ctx) -> StageResult {
    let c = ctx.cfg;
    let ds = build_dataset(
        &ctx.scenarios,
        &ctx.events,
        &ctx.layout,
        &ctx.study.grid,
        c.dataset.image_size,
        c.dataset.per_condition,
    )?;
    let splits = attnlab_hism::split_trials(&ds.trials, c.train.split, c.seed)?;
    let mut trials = csv::Writer::from_writer(Vec::new());
    for (i, t) in ds.trials.iter().enumerate() {
        trials.serialize(TrialRow {
            trial: i,
            task: t.task_id,
            interval: t.interval,
            element_id: &ctx.layout.elements()[t.element].id,
            highlighted: t.highlighted,
            split: splits[i],
        })?;
    }
    let mut pairs = String::from("trial,slice,t_rel_s,target,highlighted,v,c\n");
    for s in &ds.samples {
        let v: Vec<String> = s.temporal.v.iter().map(|x| format!("{x}")).collect();
        let cv: Vec<String> = s.temporal.c.iter().map(|x| format!("{x:.6}")).collect();
        pairs.push_str(&format!(
            "{},{},{:.1},{},{},{},{}\n",
            s.trial,
            s.slice,
            ds.grid.t_rel_s(s.slice),
            s.target,
            s.highlighted,
            v.join(" "),
            cv.join(" ")
        ));
    }
    let trials = trials.into_inner()?;
    ctx.write("dataset/trials.csv", &trials)?;
    ctx.write("dataset/pairs.csv", pairs.as_bytes())?;
    let count = |sp: Split| splits.iter().filter(|&&s| s == sp).count();
    ctx.write_json(
        "dataset/summary.json",
        &serde_json::json!({
            "pairs": ds.samples.len(),
            "highlighted_pairs": ds.highlighted_pairs(),
            "trials": ds.trials.len(),
            "train_trials": count(Split::Train),
            "val_trials": count(Split::Val),
            "test_trials": count(Split::Test),
            "image_size": c.dataset.image_size,
        }),
    )?;
    for (i, im) in ds.images.iter().enumerate() {
        let n = im.size * im.size;
        let mut frame =
            attnlab_core::render::RgbFrame::filled(im.size as u32, im.size as u32, [0.0; 3]);
        for p in 0..n {
            for ch in 0..3 {
                frame.data[p * 3 + ch] = im.data[ch * n + p] as f32;
            }
        }
        let path = ctx.out.join(format!("dataset/images/trial_{i:02}.png"));
        std::fs::create_dir_all(path.parent().expect("parent"))?;
        write_png(&frame, &path)?;
        let bytes = std::fs::read(&path)?;
        ctx.write(&format!("dataset/images/trial_{i:02}.png"), &bytes)?;
    }
    ctx.dataset = Some(ds);
    Ok(())
}

fn train_stage(ctx: &mut Ctx) -> StageResult {
    let tc = ctx.cfg.train_config();
    let res = train(ctx.dataset(), ctx.cfg.variant, &tc, ctx.cfg.seed)?;
    let bytes = checkpoint::to_bytes(&res.model);
    ctx.write(&format!("train/{}.hism", ctx.cfg.variant), &bytes)?;
    let mut hist = Vec::new();
    write_history_csv(&res.history, &mut hist)?;
    ctx.write("train/history.csv", &hist)?;
    ctx.write_json(
        "train/summary.json",
        &serde_json::json!({
            "variant": ctx.cfg.variant.as_str(),
            "epochs": res.history.len(),
            "best_epoch": res.best_epoch,
            "best_val_mse": res.best_val,
            "parameters": res.model.param_count(),
        }),
    )?;
    ctx.trained = Some(res);
    Ok(())
}

fn predict(ctx: &mut Ctx) -> StageResult {
    let ds = ctx.dataset();
    let res = ctx.trained();
    let mut out = String::from("trial,highlighted,t_rel_s,predicted,observed\n");
    let mut preds = Vec::new();
    for (ti, t) in ds.trials.iter().enumerate() {
        if res.splits[ti] != Split::Test {
            continue;
        }
        let idx: Vec<usize> = (0..ds.samples.len())
            .filter(|&i| ds.samples[i].trial == ti)
            .collect();
        let p = ds.predict(&res.model, &idx)?;
        for (k, (&a, &b)) in p.iter().zip(&t.target).enumerate() {
            out.push_str(&format!(
                "{ti},{},{:.1},{a},{b}\n",
                t.highlighted,
                ds.grid.t_rel_s(k)
            ));
        }
        preds.push(TrialPrediction {
            trial: ti,
            highlighted: t.highlighted,
            predicted: p,
            observed: t.target.clone(),
        });
    }
    ctx.write("predict/test_series.csv", out.as_bytes())?;
    ctx.predictions = preds;
    Ok(())
}

/// Map metrics of the bottom-up map of one trial's onset frame against the
/// smoothed fixations of its first `window_s` seconds.
fn trial_map_metrics(ctx: &Ctx, trial: usize) -> Result<[f64; 5], Box<dyn std::error::Error>> {
    let t = &ctx.dataset().trials[trial];
    let (w, h) = (ctx.layout.width_px(), ctx.layout.height_px());
    let a = t.onset_ms;
    let b = a + ctx.cfg.analysis.map_window_s * 1000.0;
    let pts: Vec<(f64, f64)> = ctx
        .cohort()
        .accepted()
        .filter(|r| r.task_id == t.task_id)
        .flat_map(|r| r.fixations.iter())
        .filter(|f: &&Fixation| fixation_active(f, a, b))
        .map(|f| (f.x, f.y))
        .collect();
    let pixels: Vec<(u32, u32)> = pts
        .iter()
        .filter_map(|&(x, y)| pixel_of(x, y, w, h))
        .collect();
    let gt = smooth_map(&count_map(&pts, w, h), ctx.study.smoothing_window_px)?;
    let pred = itti_map(ctx, t.task_id, t.onset_ms)?;
    Ok([
        metrics::auc_judd(&pred, &pixels)?,
        metrics::nss(&pred, &pixels)?,
        metrics::sim(&pred, &gt)?,
        metrics::cc(&pred, &gt)?,
        metrics::kl(&gt, &pred, metrics::KL_EPS)?,
    ])
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-split report rows plus the trial partition behind them.
pub fn metric_rows(
    preds: &[TrialPrediction],
    map_metrics: &BTreeMap<usize, [f64; 5]>,
) -> Vec<(MetricReport, Vec<usize>)> {
    let mut rows = Vec::new();
    for split in [
        ReportSplit::Highlight,
        ReportSplit::NoHighlight,
        ReportSplit::All,
    ] {
        let members: Vec<&TrialPrediction> = preds
            .iter()
            .filter(|p| match split {
                ReportSplit::Highlight => p.highlighted,
                ReportSplit::NoHighlight => !p.highlighted,
                ReportSplit::All => true,
            })
            .collect();
        let pred: Vec<f64> = members
            .iter()
            .flat_map(|p| p.predicted.iter().copied())
            .collect();
        let obs: Vec<f64> = members
            .iter()
            .flat_map(|p| p.observed.iter().copied())
            .collect();
        let reg = metrics::regression_metrics(&pred, &obs).ok();
        let col = |k: usize| {
            let v: Vec<f64> = members
                .iter()
                .filter_map(|p| map_metrics.get(&p.trial))
                .map(|m| m[k])
                .collect();
            mean(&v)
        };
        rows.push((
            MetricReport {
                split,
                auc: col(0),
                nss: col(1),
                sim: col(2),
                cc: col(3),
                kl: col(4),
                mse: reg.map(|r| r.mse),
                mae: reg.map(|r| r.mae),
            },
            members.iter().map(|p| p.trial).collect(),
        ));
    }
    rows
}

#[derive(Serialize)]
struct PeakRow {
    trial: usize,
    highlighted: bool,
    predicted_peak_t_s: f64,
    observed_peak_t_s: f64,
    predicted_peak: f64,
    observed_peak: f64,
    predicted_mean: f64,
}

fn eval(ctx: &mut Ctx) -> StageResult {
    let mut map_metrics = BTreeMap::new();
    for p in &ctx.predictions {
        map_metrics.insert(p.trial, trial_map_metrics(ctx, p.trial)?);
    }
    let rows = metric_rows(&ctx.predictions, &map_metrics);
    let reports: Vec<MetricReport> = rows.iter().map(|(r, _)| *r).collect();
    let mut buf = Vec::new();
    metrics::write_report_csv(&reports, &mut buf)?;
    ctx.write("eval/report.csv", &buf)?;
    let partition: BTreeMap<String, Vec<usize>> = rows
        .iter()
        .map(|(r, t)| {
            (
                serde_json::to_value(r.split)
                    .unwrap()
                    .as_str()
                    .unwrap_or("")
                    .to_string(),
                t.clone(),
            )
        })
        .collect();
    ctx.write_json(
        "eval/report.json",
        &serde_json::json!({ "rows": reports, "trials": partition }),
    )?;
    let grid = ctx.study.grid;
    let mut peaks = csv::Writer::from_writer(Vec::new());
    for p in &ctx.predictions {
        let (kp, ko) = (argmax(&p.predicted), argmax(&p.observed));
        peaks.serialize(PeakRow {
            trial: p.trial,
            highlighted: p.highlighted,
            predicted_peak_t_s: grid.t_rel_s(kp),
            observed_peak_t_s: grid.t_rel_s(ko),
            predicted_peak: p.predicted[kp],
            observed_peak: p.observed[ko],
            predicted_mean: mean(&p.predicted).unwrap_or(0.0),
        })?;
    }
    let peaks = peaks.into_inner()?;
    ctx.write("eval/peaks.csv", &peaks)?;
    Ok(())
}

#[derive(Serialize)]
struct TestRow {
    comparison: &'static str,
    test: &'static str,
    statistic: f64,
    df: Option<f64>,
    p_value: f64,
    n_a: usize,
    n_b: usize,
}

fn stats_stage(ctx: &mut Ctx) -> StageResult {
    let cohort = ctx.cohort();
    // Response times of hits, pooled and per participant.
    let mut rt = [Vec::new(), Vec::new()];
    let mut per_part: BTreeMap<u32, [Vec<f64>; 2]> = BTreeMap::new();
    for r in cohort.accepted() {
        let sc = cohort
            .scenarios
            .iter()
            .find(|s| s.task_id == r.task_id)
            .expect("scenario");
        for t in segment_trials(&r.fixations, r.gaze_span_ms, sc, &r.keypresses_ms)? {
            if let (true, Some(x)) = (t.interval.is_critical, t.rt_s) {
                let k = usize::from(!t.interval.highlighted);
                rt[k].push(x);
                per_part.entry(r.participant).or_default()[k].push(x);
            }
        }
    }
    let (pa, pb): (Vec<f64>, Vec<f64>) = per_part
        .values()
        .filter_map(|[a, b]| Some((mean(a)?, mean(b)?)))
        .unzip();
    let peak = |cond: bool| -> Vec<f64> {
        ctx.events
            .iter()
            .filter(|e| e.highlighted == cond)
            .map(|e| {
                e.target_series(&ctx.layout)
                    .ns
                    .iter()
                    .copied()
                    .fold(0.0, f64::max)
            })
            .collect()
    };
    let (peak_h, peak_n) = (peak(true), peak(false));
    let (pred, obs): (Vec<f64>, Vec<f64>) = ctx
        .predictions
        .iter()
        .flat_map(|p| p.predicted.iter().copied().zip(p.observed.iter().copied()))
        .unzip();
    let diffs: Vec<f64> = pa.iter().zip(&pb).map(|(a, b)| a - b).collect();

    let mut out = csv::Writer::from_writer(Vec::new());
    let mut emit = |comparison: &'static str,
                    r: Result<TestResult, stats::StatsError>,
                    n_a: usize,
                    n_b: usize|
     -> StageResult {
        // Degenerate inputs (too few values) are reported as skipped rows.
        let (statistic, df, p_value, test) = match r {
            Ok(t) => (t.statistic, t.df, t.p_value, t.test_kind.as_str()),
            Err(_) => (f64::NAN, None, f64::NAN, "skipped"),
        };
        out.serialize(TestRow {
            comparison,
            test,
            statistic,
            df,
            p_value,
            n_a,
            n_b,
        })?;
        Ok(())
    };
    emit(
        "rt_highlight_vs_none",
        stats::mann_whitney_u(&rt[0], &rt[1]),
        rt[0].len(),
        rt[1].len(),
    )?;
    emit(
        "rt_highlight_vs_none",
        stats::t_test_ind(&rt[0], &rt[1]),
        rt[0].len(),
        rt[1].len(),
    )?;
    emit(
        "rt_participant_means",
        stats::paired_t_test(&pa, &pb),
        pa.len(),
        pb.len(),
    )?;
    emit(
        "rt_participant_mean_diff_normality",
        stats::shapiro_wilk(&diffs),
        diffs.len(),
        0,
    )?;
    emit(
        "peak_ns_highlight_vs_none",
        stats::mann_whitney_u(&peak_h, &peak_n),
        peak_h.len(),
        peak_n.len(),
    )?;
    emit(
        "peak_ns_highlight_vs_none",
        stats::t_test_ind(&peak_h, &peak_n),
        peak_h.len(),
        peak_n.len(),
    )?;
    emit(
        "predicted_vs_observed_ns",
        stats::pearson(&pred, &obs),
        pred.len(),
        obs.len(),
    )?;
    let buf = out.into_inner()?;
    ctx.write("stats/tests.csv", &buf)?;
    Ok(())
}

fn export_stage(ctx: &mut Ctx) -> StageResult {
    let maps: Vec<(String, SaliencyMap)> = ctx
        .maps
        .iter()
        .map(|(n, m)| (format!("fixation_{n}"), m.clone()))
        .chain(
            ctx.itti_maps
                .iter()
                .map(|(n, m)| (format!("itti_{n}"), m.clone())),
        )
        .collect();
    for (name, m) in &maps {
        ctx.write(&format!("export/{name}.png"), &export::heatmap_png(m)?)?;
        ctx.write(&format!("export/{name}.csv"), &export::map_csv(m, 10))?;
    }
    let grid = ctx.study.grid;
    let t = grid.t_rel_all();
    let means: Vec<(&str, Vec<f64>)> = [("highlight", true), ("no_highlight", false)]
        .into_iter()
        .filter_map(|(n, c)| {
            Some((
                n,
                mean_target_series(
                    ctx.events.iter().filter(|e| e.highlighted == c),
                    &ctx.layout,
                )?,
            ))
        })
        .collect();
    for (name, v) in &means {
        let series = [(*name, v.as_slice())];
        let svg = export::ns_svg(&format!("Target NS, {name}"), &t, &series);
        ctx.write(&format!("export/ns_{name}.svg"), svg.as_bytes())?;
        let mut buf = Vec::new();
        export::write_series_csv(&t, &series, &mut buf)?;
        ctx.write(&format!("export/ns_{name}.csv"), &buf)?;
    }
    let preds = std::mem::take(&mut ctx.predictions);
    for p in &preds {
        let series = [
            ("predicted", p.predicted.as_slice()),
            ("observed", p.observed.as_slice()),
        ];
        let kind = if p.highlighted {
            "highlight"
        } else {
            "no highlight"
        };
        let svg = export::ns_svg(&format!("Trial {} ({kind})", p.trial), &t, &series);
        ctx.write(
            &format!("export/prediction_trial_{:02}.svg", p.trial),
            svg.as_bytes(),
        )?;
        let mut buf = Vec::new();
        export::write_series_csv(&t, &series, &mut buf)?;
        ctx.write(&format!("export/prediction_trial_{:02}.csv", p.trial), &buf)?;
    }
    ctx.predictions = preds;
    Ok(())
}

/// Output directory helper for callers that only know the config.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.json")
}
