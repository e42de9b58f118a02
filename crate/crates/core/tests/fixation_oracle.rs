//! Fixation detection against an independent O(n^2) reference.

use attnlab_core::gazeproc::{detect_fixations, Fixation, GazeSample};
use attnlab_core::rng;
use rand::Rng;

/// For every start index, the furthest end such that the whole window is
/// valid and within `radius` of its first sample, each window checked from
/// scratch; then a greedy left-to-right pass.
fn reference(samples: &[GazeSample], radius: f64, min_ms: f64) -> Vec<Fixation> {
    let n = samples.len();
    let reach: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if !samples[i].valid {
                return None;
            }
            let mut best = i;
            for k in i..n {
                let ok = samples[i..=k].iter().all(|s| {
                    s.valid && ((s.x_px - samples[i].x_px).powi(2) + (s.y_px - samples[i].y_px).powi(2)).sqrt() <= radius
                });
                if ok {
                    best = k;
                } else {
                    break;
                }
            }
            Some(best)
        })
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        match reach[i] {
            Some(j) if samples[j].t_ms - samples[i].t_ms >= min_ms => {
                let m = (j - i + 1) as f64;
                out.push(Fixation {
                    start_ms: samples[i].t_ms,
                    end_ms: samples[j].t_ms,
                    duration_ms: samples[j].t_ms - samples[i].t_ms,
                    x: samples[i..=j].iter().map(|s| s.x_px).sum::<f64>() / m,
                    y: samples[i..=j].iter().map(|s| s.y_px).sum::<f64>() / m,
                });
                i = j + 1;
            }
            _ => i += 1,
        }
    }
    out
}

/// 2 s at 250 Hz: clusters of varying tightness, jumps and invalid runs.
pub fn random_trace(seed: u64) -> Vec<GazeSample> {
    let mut r = rng::stream(seed, 77);
    let mut out = Vec::with_capacity(500);
    while out.len() < 500 {
        let (cx, cy) = (r.random_range(0.0..1920.0), r.random_range(0.0..1200.0));
        let spread: f64 = [2.0, 8.0, 14.0, 20.0][r.random_range(0..4)];
        let len = r.random_range(1..70);
        let invalid_run = r.random::<f64>() < 0.1;
        for _ in 0..len {
            if out.len() == 500 {
                break;
            }
            let t = out.len() as f64 * 4.0;
            out.push(GazeSample {
                t_ms: t,
                x_px: cx + r.random_range(-spread..spread),
                y_px: cy + r.random_range(-spread..spread),
                valid: !invalid_run && r.random::<f64>() > 0.01,
            });
        }
    }
    out
}

#[test]
fn matches_reference_on_random_traces() {
    let mut total = 0;
    for seed in 0..1000 {
        let s = random_trace(seed);
        let got = detect_fixations(&s, 25.0, 50.0);
        let want = reference(&s, 25.0, 50.0);
        assert_eq!(got.len(), want.len(), "seed {seed}");
        for (a, b) in got.iter().zip(&want) {
            assert_eq!((a.start_ms, a.end_ms, a.duration_ms), (b.start_ms, b.end_ms, b.duration_ms));
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
        total += got.len();
    }
    assert!(total > 1000, "traces should contain fixations: {total}");
}

#[test]
fn fixations_are_ordered_and_disjoint() {
    for seed in 0..200 {
        let f = detect_fixations(&random_trace(seed), 25.0, 50.0);
        for w in f.windows(2) {
            assert!(w[0].end_ms < w[1].start_ms);
        }
        assert!(f.iter().all(|x| x.duration_ms >= 50.0));
    }
}
