//! Acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p attnlab --test acceptance`.

use std::time::{Duration, Instant};

use attnlab::PipelineConfig;
use attnlab_core::dronesim::{
    schedule_intervals, simulate_task, write_trace_jsonl, DroneReading, PlanConfig,
};
use attnlab_core::gazegen::target_attention;
use attnlab_core::gazeproc::{detect_fixations, split_half_reliability, GazeSample};
use attnlab_core::itti::itti_saliency;
use attnlab_core::metrics::{self, LossWeights, KL_EPS};
use attnlab_core::render::{render_frame, RgbFrame};
use attnlab_core::saliency::{normalized_saliency_all, smooth_map, SaliencyMap};
use attnlab_core::stats::{mann_whitney_u, shapiro_wilk, t_test_ind};
use attnlab_core::study::{
    mean_target_series, pooled_event_ns, run_cohort, Cohort, EventNs, StudyConfig,
};
use attnlab_core::{rng, IconKind, Layout};
use attnlab_hism::{
    build_dataset, checkpoint, grad_check, train, Dataset, HismModel, Item, ModelConfig, Split,
    Variant,
};
use attnlab_hism::{StackedInput, TemporalInput};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Shared state for the criteria that need the synthetic cohort and the
/// trained predictor.
struct Study {
    cfg: PipelineConfig,
    layout: Layout,
    study: StudyConfig,
    cohort: Option<Cohort>,
    events: Vec<EventNs>,
    dataset: Option<Dataset>,
    trained: Option<attnlab_hism::TrainResult>,
}

fn ns_correctness(s: &mut Study) -> Outcome {
    let lay = &s.layout;
    let mut worst: f64 = 0.0;
    let mut slices = 0;
    for e in &s.events {
        for row in &e.slices.ns {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            slices += 1;
        }
    }
    let (w, h) = (lay.width_px(), lay.height_px());
    let (uni, _) = normalized_saliency_all(
        &SaliencyMap::from_values(w, h, vec![0.7; (w * h) as usize]),
        lay,
    )
    .unwrap();
    let uni_err = uni
        .iter()
        .map(|v| (v - 1.0 / 32.0).abs())
        .fold(0.0, f64::max);
    let mut scale_err: f64 = 0.0;
    for seed in 0..3 {
        let mut r = rng::stream(seed, 0xac1);
        let mut raw = SaliencyMap::zeros(w, h);
        for _ in 0..200 {
            let (x, y) = (r.random_range(0..w), r.random_range(0..h));
            raw.set(x, y, r.random::<f64>());
        }
        let m = smooth_map(&raw, 35).unwrap();
        let (base, _) = normalized_saliency_all(&m, lay).unwrap();
        worst = worst.max((base.iter().sum::<f64>() - 1.0).abs());
        for c in [0.5, 2.0, 10.0] {
            let (sc, _) = normalized_saliency_all(&m.scaled(c), lay).unwrap();
            scale_err = base
                .iter()
                .zip(&sc)
                .map(|(a, b)| (a - b).abs())
                .fold(scale_err, f64::max);
        }
    }
    let pass = slices > 0 && worst <= 1e-9 && uni_err <= 1e-12 && scale_err <= 1e-12;
    outcome(
        pass,
        format!("{slices} event slices, max |sum-1| {worst:.1e}, uniform err {uni_err:.1e}, scale err {scale_err:.1e}"),
    )
}

/// Brute force: for each start, grow while every member is valid and within
/// the radius of the start sample, re-checking the whole window each time.
fn reference_fixations(s: &[GazeSample], radius: f64, min_ms: f64) -> Vec<(f64, f64, f64, f64)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let within = |k: usize| {
            s[i..=k]
                .iter()
                .all(|p| p.valid && (p.x_px - s[i].x_px).hypot(p.y_px - s[i].y_px) <= radius)
        };
        let mut j = None;
        for k in i..s.len() {
            if within(k) {
                j = Some(k);
            } else {
                break;
            }
        }
        match j {
            Some(j) if s[j].t_ms - s[i].t_ms >= min_ms => {
                let n = (j - i + 1) as f64;
                let x = s[i..=j].iter().map(|p| p.x_px).sum::<f64>() / n;
                let y = s[i..=j].iter().map(|p| p.y_px).sum::<f64>() / n;
                out.push((s[i].t_ms, s[j].t_ms, x, y));
                i = j + 1;
            }
            _ => i += 1,
        }
    }
    out
}

fn random_trace(seed: u64) -> Vec<GazeSample> {
    let mut r = rng::stream(seed, 0xf1c);
    let mut out = Vec::with_capacity(500);
    while out.len() < 500 {
        let (cx, cy) = (r.random_range(0.0..1920.0), r.random_range(0.0..1200.0));
        let spread = r.random_range(1.0..22.0);
        let invalid = r.random::<f64>() < 0.08;
        for _ in 0..r.random_range(1..80) {
            if out.len() == 500 {
                break;
            }
            out.push(GazeSample {
                t_ms: out.len() as f64 * 4.0,
                x_px: cx + r.random_range(-spread..spread),
                y_px: cy + r.random_range(-spread..spread),
                valid: !invalid && r.random::<f64>() > 0.01,
            });
        }
    }
    out
}

fn fixation_oracle(_: &mut Study) -> Outcome {
    let mut mismatched = 0;
    let mut total = 0;
    for seed in 0..1000 {
        let s = random_trace(seed);
        let got: Vec<(f64, f64, f64, f64)> = detect_fixations(&s, 25.0, 50.0)
            .iter()
            .map(|f| (f.start_ms, f.end_ms, f.x, f.y))
            .collect();
        let want = reference_fixations(&s, 25.0, 50.0);
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(a, b)| {
                a.0 == b.0 && a.1 == b.1 && (a.2 - b.2).abs() < 1e-9 && (a.3 - b.3).abs() < 1e-9
            });
        mismatched += usize::from(!same);
        total += want.len();
    }
    outcome(
        mismatched == 0 && total > 0,
        format!("1000 traces, {total} fixations, {mismatched} mismatching traces"),
    )
}

fn metric_identities(_: &mut Study) -> Outcome {
    let mut r = rng::stream(3, 0x3e7);
    let m = SaliencyMap::from_values(64, 40, (0..64 * 40).map(|_| r.random::<f64>()).collect());
    let sim = metrics::sim(&m, &m).unwrap();
    let cc = metrics::cc(&m, &m).unwrap();
    let kl = metrics::kl(&m, &m, KL_EPS).unwrap();
    let loss = metrics::composite_loss(&m, &m, LossWeights::PRETRAIN).unwrap();
    let series: Vec<f64> = (0..60).map(|_| r.random()).collect();
    let reg = metrics::regression_metrics(&series, &series).unwrap();
    let mut aucs = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let (w, h) = (r.random_range(8..64), r.random_range(8..64));
        let c = SaliencyMap::from_values(w, h, vec![r.random_range(0.01..5.0); (w * h) as usize]);
        let pts: Vec<(u32, u32)> = (0..r.random_range(1..40))
            .map(|_| (r.random_range(0..w), r.random_range(0..h)))
            .collect();
        aucs.push(metrics::auc_judd(&c, &pts).unwrap());
    }
    let auc_dev = aucs.iter().map(|a| (a - 0.5).abs()).fold(0.0, f64::max);
    let pass = sim == 1.0
        && cc == 1.0
        && kl < 1e-9
        && (mean(&aucs) - 0.5).abs() <= 0.02
        && auc_dev <= 0.02
        && loss == -5.0
        && reg.mse == 0.0
        && reg.mae == 0.0;
    outcome(
        pass,
        format!(
            "sim {sim}, cc {cc}, kl {kl:.1e}, auc mean {:.4} (max dev {auc_dev:.1e}), loss {loss}, mse/mae ({}, {})",
            mean(&aucs),
            reg.mse,
            reg.mae
        ),
    )
}

fn gradient_check(s: &mut Study) -> Outcome {
    let size = s.cfg.train.model.image_size;
    let mut r = rng::stream(17, 0x9c);
    let images: Vec<StackedInput> = (0..2)
        .map(|_| StackedInput {
            size,
            channels: 4,
            data: (0..4 * size * size).map(|_| r.random::<f64>()).collect(),
        })
        .collect();
    let temporal: Vec<TemporalInput> = [10usize, 40]
        .iter()
        .map(|&pad| TemporalInput {
            v: (0..60)
                .map(|k| {
                    if k < pad {
                        0.0
                    } else if k % 7 < 3 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect(),
            c: (0..60)
                .map(|k| if k < pad { 0.0 } else { r.random::<f64>() })
                .collect(),
        })
        .collect();
    let items: Vec<Item> = temporal
        .iter()
        .enumerate()
        .map(|(i, t)| Item {
            image: i,
            temporal: t,
        })
        .collect();
    let targets = [0.6, 0.08];
    let mut parts = Vec::new();
    let mut pass = true;
    for v in Variant::ALL {
        let cfg = ModelConfig {
            variant: v,
            ..s.cfg.train.model.clone()
        };
        let m = HismModel::new(cfg, &mut rng::stream(23, v.tag() as u64)).unwrap();
        let rep = grad_check(
            &m,
            &images,
            &items,
            &targets,
            1e-5,
            200,
            &mut rng::stream(29, v.tag() as u64),
        )
        .unwrap();
        pass &= rep.checked.len() >= 200 && rep.max_rel_error < 1e-4;
        parts.push(format!(
            "{v}: {} coords max rel {:.1e}",
            rep.checked.len(),
            rep.max_rel_error
        ));
    }
    outcome(pass, format!("image {size}px; {}", parts.join("; ")))
}

fn calibration(s: &mut Study) -> Outcome {
    let cohort = run_cohort(&s.study, &s.layout).unwrap();
    s.events = pooled_event_ns(&cohort, &s.layout, &s.study).unwrap();
    let t = s.study.grid.t_rel_all();
    let h = mean_target_series(s.events.iter().filter(|e| e.highlighted), &s.layout).unwrap();
    let n = mean_target_series(s.events.iter().filter(|e| !e.highlighted), &s.layout).unwrap();
    let k = argmax(&h);
    let post: Vec<f64> = (0..t.len())
        .filter(|&i| t[i] >= 0.0)
        .map(|i| n[i])
        .collect();
    let nh = mean(&post);
    let cc = split_half_reliability(
        &cohort.points_by_participant(),
        s.layout.width_px(),
        s.layout.height_px(),
        s.study.smoothing_window_px,
        20,
        &mut rng::stream(s.study.seed, 0x5a11),
    )
    .unwrap();
    let pass = (h[k] - 0.5).abs() <= 0.1
        && (0.0..=1.0).contains(&t[k])
        && (nh - 0.10).abs() <= 0.05
        && cc > 0.8;
    s.cohort = Some(cohort);
    outcome(
        pass,
        format!(
            "28 participants; highlighted peak {:.3} at {:+.1} s; no-highlight mean {nh:.3}; split-half cc {cc:.3}",
            h[k], t[k]
        ),
    )
}

fn training(s: &mut Study) -> Outcome {
    if s.cohort.is_none() {
        return outcome(false, "cohort unavailable".into());
    }
    let scenarios = &s.cohort.as_ref().unwrap().scenarios;
    let ds = build_dataset(
        scenarios,
        &s.events,
        &s.layout,
        &s.study.grid,
        s.cfg.dataset.image_size,
        s.cfg.dataset.per_condition,
    )
    .unwrap();
    let tc = s.cfg.train_config();
    let a = train(&ds, Variant::TranEncTask, &tc, s.cfg.seed).unwrap();
    let b = train(&ds, Variant::TranEncTask, &tc, s.cfg.seed).unwrap();
    let identical = checkpoint::to_bytes(&a.model) == checkpoint::to_bytes(&b.model);
    let train_idx = ds.indices(&a.splits, Split::Train);
    let test_idx = ds.indices(&a.splits, Split::Test);
    let mu = mean(&ds.targets(&train_idx));
    let baseline = mean(
        &ds.targets(&test_idx)
            .iter()
            .map(|y| (y - mu).powi(2))
            .collect::<Vec<_>>(),
    );
    let mse = ds.mse(&a.model, &test_idx).unwrap();
    let ratio = mse / baseline;
    let pass = ds.samples.len() == 1920
        && ds.highlighted_pairs() == 800
        && a.history.len() <= 200
        && ratio <= 0.5
        && identical;
    let detail = format!(
        "{} pairs ({} highlighted), {} epochs (best {}); test mse {mse:.5} vs baseline {baseline:.5} = {:.1}%; reruns identical: {identical}",
        ds.samples.len(),
        ds.highlighted_pairs(),
        a.history.len(),
        a.best_epoch,
        100.0 * ratio
    );
    s.dataset = Some(ds);
    s.trained = Some(a);
    outcome(pass, detail)
}

fn prediction_dynamics(s: &mut Study) -> Outcome {
    let (Some(ds), Some(res)) = (&s.dataset, &s.trained) else {
        return outcome(false, "trained model unavailable".into());
    };
    let grid = &ds.grid;
    let gt = target_attention(
        &s.study.behavior,
        true,
        s.study.sim.plan.interval_s,
        grid,
        s.layout.len(),
    );
    let gt_peak = grid.t_rel_s(argmax(&gt));
    let (mut hits, mut n_h, mut gen_hits) = (0, 0, 0);
    let (mut h_peaks, mut nh_values) = (Vec::new(), Vec::new());
    for (ti, t) in ds.trials.iter().enumerate() {
        if res.splits[ti] != Split::Test {
            continue;
        }
        let idx: Vec<usize> = (0..ds.samples.len())
            .filter(|&i| ds.samples[i].trial == ti)
            .collect();
        let p = ds.predict(&res.model, &idx).unwrap();
        if t.highlighted {
            let tp = grid.t_rel_s(argmax(&p));
            n_h += 1;
            hits += usize::from((tp - grid.t_rel_s(argmax(&t.target))).abs() <= 0.3 + 1e-9);
            gen_hits += usize::from((tp - gt_peak).abs() <= 0.3 + 1e-9);
            h_peaks.push(p[argmax(&p)]);
        } else {
            nh_values.extend(p);
        }
    }
    let frac = hits as f64 / n_h.max(1) as f64;
    let (hp, nm) = (mean(&h_peaks), mean(&nh_values));
    let pass = n_h > 0 && frac >= 0.8 && hp > nm;
    outcome(
        pass,
        format!(
            "peak within 0.3 s of observed on {hits}/{n_h} highlighted test trials ({gen_hits}/{n_h} vs generator peak {gt_peak:+.1} s); mean highlighted peak {hp:.3} > no-highlight mean {nm:.3}"
        ),
    )
}

fn simulator(s: &mut Study) -> Outcome {
    let sim = &s.study.sim;
    let trace = simulate_task(sim, 1, 99).unwrap();
    let frames = trace.frames.len();
    // Flagged frames violate their threshold; no other safety indicator does.
    let mut bad = 0;
    for f in &trace.frames {
        for (d, reading) in f.drones.iter().enumerate() {
            for kind in [
                IconKind::Battery,
                IconKind::Wind,
                IconKind::Rotor,
                IconKind::Zone,
            ] {
                let flagged = f.critical.is_some_and(|c| c.drone == d && c.kind == kind);
                bad += usize::from(reading.violates(kind) != flagged);
            }
        }
    }
    let probe = |battery: f64, wind: f64| DroneReading {
        battery,
        wind,
        ..trace.frames[0].drones[0]
    };
    let edges = !probe(10.0, 5.0).violates(IconKind::Battery)
        && probe(9.999, 5.0).violates(IconKind::Battery)
        && !probe(50.0, 10.0).violates(IconKind::Wind)
        && probe(50.0, 10.001).violates(IconKind::Wind);
    let cfg = PlanConfig::default();
    let (mut n, mut crit, mut high) = (0usize, 0usize, 0usize);
    for seed in 0..10_000u64 {
        for r in schedule_intervals(&mut rng::stream(seed, 0), &cfg)
            .unwrap()
            .intervals
        {
            n += 1;
            crit += usize::from(r.is_critical);
            high += usize::from(r.highlighted);
        }
    }
    let (fc, fh) = (crit as f64 / n as f64, high as f64 / crit as f64);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_trace_jsonl(&trace, &mut a).unwrap();
    write_trace_jsonl(&simulate_task(sim, 1, 99).unwrap(), &mut b).unwrap();
    let exact = a == b;
    let pass = frames == 7200
        && bad == 0
        && edges
        && (fc - 0.8).abs() <= 0.01
        && (fh - 0.5).abs() <= 0.015
        && exact;
    outcome(
        pass,
        format!(
            "{frames} frames; {bad} threshold mismatches; boundaries ok: {edges}; critical {fc:.4}, highlighted {fh:.4}; rerun bit-exact: {exact}"
        ),
    )
}

fn permutation_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let u = |mask: u32| -> f64 {
        let mut u = 0.0;
        for i in (0..n).filter(|i| mask & (1 << i) != 0) {
            for j in (0..n).filter(|j| mask & (1 << j) == 0) {
                u += f64::from(u8::from(pooled[i] > pooled[j]));
            }
        }
        u
    };
    let obs = u((1 << a.len()) - 1);
    let all: Vec<f64> = (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == a.len())
        .map(u)
        .collect();
    let le = all.iter().filter(|&&x| x <= obs).count() as f64 / all.len() as f64;
    let ge = all.iter().filter(|&&x| x >= obs).count() as f64 / all.len() as f64;
    (2.0 * le.min(ge)).min(1.0)
}

fn statistics(_: &mut Study) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..20 {
        let mut r = rng::stream(seed, 0x77);
        let mut pool: Vec<f64> = (0..8).map(|k| k as f64 + r.random::<f64>() * 0.5).collect();
        for i in (1..8).rev() {
            pool.swap(i, r.random_range(0..=i));
        }
        for mask in (0u32..256).filter(|m| m.count_ones() == 4) {
            let a: Vec<f64> = (0..8)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| pool[i])
                .collect();
            let b: Vec<f64> = (0..8)
                .filter(|i| mask & (1 << i) == 0)
                .map(|i| pool[i])
                .collect();
            worst =
                worst.max((mann_whitney_u(&a, &b).unwrap().p_value - permutation_p(&a, &b)).abs());
            cases += 1;
        }
    }
    let t = t_test_ind(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0])
        .unwrap()
        .statistic;
    let sw = shapiro_wilk(&[
        148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0, 236.0,
    ])
    .unwrap();
    let round3 = |x: f64| (x * 1000.0).round() / 1000.0;
    let pass = worst < 1e-12
        && (t + 3.674).abs() <= 1e-3
        && round3(sw.statistic) == 0.789
        && round3(sw.p_value) == 0.007;
    outcome(
        pass,
        format!(
            "{cases} Mann-Whitney splits, max |p - perm| {worst:.1e}; t {t:.4}; Shapiro-Wilk W {:.3} p {:.3}",
            sw.statistic, sw.p_value
        ),
    )
}

fn itti(s: &mut Study) -> Outcome {
    let lay = &s.layout;
    let trace = simulate_task(&s.study.sim, 1, 17).unwrap();
    let mut wins = 0;
    let mut checked = 0;
    for rec in trace.critical_intervals().filter(|r| r.highlighted).take(3) {
        let f = &trace.frames[((rec.onset_s + 1.0) * trace.frame_rate_hz as f64) as usize];
        let map = itti_saliency(&render_frame(lay, f, 480, 300))
            .unwrap()
            .resize_bilinear(lay.width_px(), lay.height_px());
        let (ns, _) = normalized_saliency_all(&map, lay).unwrap();
        wins += usize::from(argmax(&ns) == lay.find(rec.drone_index, rec.kind).unwrap());
        checked += 1;
    }
    let flat = itti_saliency(&RgbFrame::filled(480, 300, [0.4, 0.5, 0.6])).unwrap();
    let m = mean(flat.values());
    let var =
        flat.values().iter().map(|v| (v - m).powi(2)).sum::<f64>() / flat.values().len() as f64;
    let pass = checked > 0 && wins == checked && var < 1e-6;
    outcome(pass, format!("highlighted icon ranks first on {wins}/{checked} frames; uniform frame variance {var:.1e}"))
}

type Criterion = (&'static str, fn(&mut Study) -> Outcome, Option<Duration>);

fn main() {
    let cfg = PipelineConfig::default();
    let mut study = Study {
        layout: cfg.layout().unwrap(),
        study: cfg.study(),
        cfg,
        cohort: None,
        events: Vec::new(),
        dataset: None,
        trained: None,
    };
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    // Calibration runs first since NS correctness and training use its cohort.
    let criteria: [(usize, Criterion); 10] = [
        (5, ("synthetic calibration", calibration, min(10))),
        (1, ("NS correctness", ns_correctness, min(1))),
        (2, ("fixation detector oracle", fixation_oracle, min(2))),
        (3, ("metric identities", metric_identities, min(2))),
        (4, ("gradient verification", gradient_check, min(5))),
        (6, ("training efficacy", training, min(10))),
        (7, ("prediction dynamics", prediction_dynamics, None)),
        (8, ("simulator contracts", simulator, None)),
        (9, ("statistics", statistics, None)),
        (10, ("ITTI sanity", itti, None)),
    ];
    let mut lines = Vec::new();
    for (id, (name, run, limit)) in criteria {
        let t0 = Instant::now();
        let mut o = run(&mut study);
        let took = t0.elapsed();
        if let Some(l) = limit {
            if took > l {
                o.pass = false;
                o.detail
                    .push_str(&format!("; exceeded {} s limit", l.as_secs()));
            }
        }
        let line = format!(
            "{} criterion {id:>2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
        println!("{line}");
        lines.push((id, o.pass, line));
    }
    lines.sort_by_key(|l| l.0);
    let failed = lines.iter().filter(|l| !l.1).count();
    println!("\nsummary ({} criteria, {failed} failed):", lines.len());
    for (_, _, line) in &lines {
        println!("  {line}");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
