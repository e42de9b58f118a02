//! Bottom-up saliency on rendered monitoring frames.

use attnlab_core::dronesim::{simulate_task, SimConfig};
use attnlab_core::itti::itti_saliency;
use attnlab_core::render::render_frame;
use attnlab_core::saliency::normalized_saliency_all;
use attnlab_core::Layout;

#[test]
fn highlighted_icon_wins_element_ns() {
    let lay = Layout::default_layout();
    let trace = simulate_task(&SimConfig::default(), 1, 17).unwrap();
    let mut checked = 0;
    for rec in trace.critical_intervals().filter(|r| r.highlighted).take(3) {
        let frame_idx = ((rec.onset_s + 1.0) * trace.frame_rate_hz as f64) as usize;
        let record = &trace.frames[frame_idx];
        assert!(record.critical.is_some_and(|c| c.highlighted));
        let frame = render_frame(&lay, record, 480, 300);
        let map = itti_saliency(&frame).unwrap().resize_bilinear(lay.width_px(), lay.height_px());
        let (ns, undefined) = normalized_saliency_all(&map, &lay).unwrap();
        assert!(!undefined);
        let target = lay.find(rec.drone_index, rec.kind).unwrap();
        let best = (0..ns.len()).fold(0, |b, i| if ns[i] > ns[b] { i } else { b });
        assert_eq!(best, target, "ns {:?}", ns);
        checked += 1;
    }
    assert_eq!(checked, 3);
}

#[test]
fn unhighlighted_frame_has_no_dominant_icon() {
    let lay = Layout::default_layout();
    let trace = simulate_task(&SimConfig::default(), 1, 17).unwrap();
    let rec = trace.frames.iter().find(|f| f.critical.is_none()).unwrap();
    let map = itti_saliency(&render_frame(&lay, rec, 480, 300))
        .unwrap()
        .resize_bilinear(lay.width_px(), lay.height_px());
    let (ns, _) = normalized_saliency_all(&map, &lay).unwrap();
    let max = ns.iter().copied().fold(0.0, f64::max);
    assert!(max < 0.2, "max element ns {max}");
}
