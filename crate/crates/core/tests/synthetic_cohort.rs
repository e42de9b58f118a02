//! Synthetic cohort calibration and pipeline closure against the generator's
//! intended attention.

use attnlab_core::dronesim::{simulate_task, PlanConfig, SimConfig};
use attnlab_core::gazegen::{behavior_ground_truth, target_attention, BehaviorParams};
use attnlab_core::gazeproc::{detection_metrics, segment_trials, split_half_reliability};
use attnlab_core::stats::mann_whitney_u;
use attnlab_core::study::{mean_target_series, pooled_event_ns, run_cohort, StudyConfig};
use attnlab_core::{rng, Layout, TimeGrid};

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

#[test]
fn default_cohort_matches_targets_and_ground_truth() {
    let cfg = StudyConfig::default();
    let lay = Layout::default_layout();
    let cohort = run_cohort(&cfg, &lay).unwrap();
    assert_eq!(cohort.accepted().count(), 28 * 4);
    let events = pooled_event_ns(&cohort, &lay, &cfg).unwrap();
    let t = cfg.grid.t_rel_all();
    let h = mean_target_series(events.iter().filter(|e| e.highlighted), &lay).unwrap();
    let n = mean_target_series(events.iter().filter(|e| !e.highlighted), &lay).unwrap();

    let k = argmax(&h);
    assert!((0.4..=0.6).contains(&h[k]), "peak {}", h[k]);
    assert!((0.6..=1.0).contains(&t[k]), "peak at {}", t[k]);

    let post: Vec<f64> = (0..t.len()).filter(|&i| t[i] >= 0.0).map(|i| n[i]).collect();
    let nh_mean = post.iter().sum::<f64>() / post.len() as f64;
    assert!((0.05..=0.15).contains(&nh_mean), "no-highlight mean {nh_mean}");

    let gt = target_attention(&cfg.behavior, true, cfg.sim.plan.interval_s, &cfg.grid, lay.len());
    let g = argmax(&gt);
    assert!((t[k] - t[g]).abs() <= 0.2 + 1e-9);
    assert!((h[k] - gt[g]).abs() <= 0.1);

    let mut r = rng::stream(cfg.seed, 5);
    let cc = split_half_reliability(&cohort.points_by_participant(), 1920, 1200, 35, 20, &mut r).unwrap();
    assert!(cc > 0.8, "split-half cc {cc}");
}

fn peaks(params: &BehaviorParams, seed: u64) -> (f64, f64) {
    let cfg = StudyConfig {
        seed,
        participants: 6,
        tasks: 2,
        behavior: params.clone(),
        ..Default::default()
    };
    let lay = Layout::default_layout();
    let cohort = run_cohort(&cfg, &lay).unwrap();
    let ev = pooled_event_ns(&cohort, &lay, &cfg).unwrap();
    let post = |v: Vec<f64>| v[10..].iter().copied().fold(f64::MIN, f64::max);
    let h = mean_target_series(ev.iter().filter(|e| e.highlighted), &lay).map(post);
    let n = mean_target_series(ev.iter().filter(|e| !e.highlighted), &lay).map(post);
    (h.unwrap_or(f64::NAN), n.unwrap_or(f64::NAN))
}

#[test]
fn no_capture_makes_highlight_irrelevant() {
    // Under this null the test still rejects 5% of seed sets by chance.
    let params = BehaviorParams {
        capture_prob: 0.0,
        ..Default::default()
    };
    let (mut hs, mut ns) = (Vec::new(), Vec::new());
    for seed in 0..50 {
        let (h, n) = peaks(&params, 2000 + seed);
        if h.is_finite() && n.is_finite() {
            hs.push(h);
            ns.push(n);
        }
    }
    assert!(hs.len() >= 40);
    let p = mann_whitney_u(&hs, &ns).unwrap().p_value;
    assert!(p > 0.05, "p = {p}");

    // With capture on, the same comparison separates clearly.
    let (h, n) = peaks(&BehaviorParams::default(), 1000);
    assert!(h > n + 0.15);
}

#[test]
fn capture_speeds_up_responses() {
    let lay = Layout::default_layout();
    let (mut rt_h, mut rt_n) = (0.0, 0.0);
    for seed in 0..50u64 {
        let cfg = StudyConfig {
            seed,
            participants: 1,
            tasks: 1,
            ..Default::default()
        };
        let cohort = run_cohort(&cfg, &lay).unwrap();
        let rec = &cohort.recordings[0];
        let trials = segment_trials(&rec.fixations, rec.gaze_span_ms, &cohort.scenarios[0], &rec.keypresses_ms).unwrap();
        let (h, n): (Vec<_>, Vec<_>) = trials.into_iter().partition(|t| t.interval.highlighted);
        rt_h += detection_metrics(&h).mean_rt_s.unwrap_or(0.0);
        rt_n += detection_metrics(&n).mean_rt_s.unwrap_or(0.0);
    }
    assert!(rt_h < rt_n, "{rt_h} vs {rt_n}");
}

#[test]
fn ground_truth_shapes() {
    let lay = Layout::default_layout();
    let p = BehaviorParams::default();
    let quiet = SimConfig {
        plan: PlanConfig {
            p_critical: 0.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let tr = simulate_task(&quiet, 1, 3).unwrap();
    let gt = behavior_ground_truth(&tr, &lay, &p).unwrap();
    for e in 0..lay.len() {
        let avg = gt.probs.iter().map(|r| r[e]).sum::<f64>() / gt.probs.len() as f64;
        assert!((avg - 1.0 / 32.0).abs() <= 0.02);
    }

    let grid = TimeGrid::default();
    let nh = target_attention(&p, false, 15.0, &grid, 32);
    let avg = nh[10..].iter().sum::<f64>() / 50.0;
    assert!((avg - 0.1).abs() < 0.03, "{avg}");

    let tr = simulate_task(&SimConfig::default(), 2, 3).unwrap();
    let gt = behavior_ground_truth(&tr, &lay, &p).unwrap();
    for rec in tr.critical_intervals().filter(|r| r.highlighted) {
        let e = lay.find(rec.drone_index, rec.kind).unwrap();
        let first = (rec.onset_s * 10.0 + 3.0).round() as usize;
        for row in &gt.probs[first..first + 12] {
            assert!((0..lay.len()).filter(|&j| j != e).all(|j| row[e] > row[j]));
        }
    }
}
