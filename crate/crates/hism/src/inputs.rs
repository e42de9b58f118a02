//! Model inputs: the stacked frame-plus-mask raster and the per-slice
//! highlight and state vectors leading up to a query time.

use attnlab_core::dronesim::{IntervalRecord, ScenarioTrace};
use attnlab_core::render::{render_frame, RgbFrame};
use attnlab_core::{Layout, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::HismError;

/// Desk-scale raster side.
pub const DEFAULT_IMAGE_SIZE: usize = 96;
/// Full-scale raster side.
pub const FULL_IMAGE_SIZE: usize = 300;

/// Planar `[channels, size, size]` raster: RGB then the element mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedInput {
    pub size: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl StackedInput {
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn mask(&self) -> &[f64] {
        self.plane(self.channels - 1)
    }
}

/// Resizes `frame` to `size` x `size` by area averaging and appends a
/// nearest-neighbor mask of the element's bounding box.
pub fn stack_input(frame: &RgbFrame, layout: &Layout, element: usize, size: usize) -> Result<StackedInput, HismError> {
    let el = layout.elements().get(element).ok_or(HismError::UnknownElement(element))?;
    if size == 0 {
        return Err(HismError::Shape("image size must be positive".into()));
    }
    let small = frame.resize_area(size as u32, size as u32);
    let n = size * size;
    let mut data = vec![0.0; 4 * n];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = f64::from(small.data[i * 3 + c]);
        }
    }
    // Mask in layout pixel coordinates, sampled at output pixel centers.
    let sx = layout.width_px() as f64 / size as f64;
    let sy = layout.height_px() as f64 / size as f64;
    for y in 0..size {
        for x in 0..size {
            let (px, py) = ((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy);
            if el.bbox.contains(px, py) {
                data[3 * n + y * size + x] = 1.0;
            }
        }
    }
    Ok(StackedInput {
        size,
        channels: 4,
        data,
    })
}

/// Schematic frame of the trace at `t_ms`, rendered at four times the target
/// side so the area resize anti-aliases icon edges.
pub fn stacked_frame_at(
    trace: &ScenarioTrace,
    layout: &Layout,
    element: usize,
    t_ms: f64,
    size: usize,
) -> Result<StackedInput, HismError> {
    let side = (size * 4) as u32;
    let frame = render_frame(layout, trace.frame_at_ms(t_ms), side, side);
    stack_input(&frame, layout, element, size)
}

/// Highlight presence `v` and state value `c` per slice, right-aligned and
/// left-padded with zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalInput {
    pub v: Vec<f64>,
    pub c: Vec<f64>,
}

impl TemporalInput {
    /// Number of leading padding entries.
    pub fn padding(&self) -> usize {
        self.v.iter().take_while(|&&x| x == 0.0).count().min(self.v.len())
    }
}

/// Vectors for a query at `t_rel_ms` after the onset of `interval`. Slice
/// `j` of the grid contributes once it has fully elapsed (`end <= t`); the
/// displayed state is read at the slice midpoint.
pub fn temporal_inputs(
    trace: &ScenarioTrace,
    interval: &IntervalRecord,
    layout: &Layout,
    element: usize,
    t_rel_ms: i64,
    grid: &TimeGrid,
) -> Result<TemporalInput, HismError> {
    let el = layout.elements().get(element).ok_or(HismError::UnknownElement(element))?;
    if t_rel_ms < grid.window_start_ms || t_rel_ms > grid.window_end_ms {
        return Err(HismError::OutsideWindow(t_rel_ms));
    }
    let len = grid.len();
    let n = ((t_rel_ms - grid.window_start_ms) / grid.ns_step_ms) as usize;
    let onset = interval.onset_s * 1000.0;
    let mut v = vec![0.0; len];
    let mut c = vec![0.0; len];
    for j in 0..n {
        let (a, b) = grid.slice_bounds_ms(j);
        let t = onset + (a + b) as f64 / 2.0;
        if t < 0.0 || t >= trace.duration_ms() {
            return Err(HismError::OutsideCoverage(t));
        }
        let frame = trace.frame_at_ms(t);
        let lit = frame
            .critical
            .is_some_and(|f| f.highlighted && f.drone == el.drone_index && f.kind == el.icon_kind);
        let pos = len - n + j;
        v[pos] = if lit { 1.0 } else { -1.0 };
        c[pos] = frame
            .drones
            .get(el.drone_index)
            .map_or(0.0, |r| r.normalized(el.icon_kind));
    }
    Ok(TemporalInput { v, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use attnlab_core::dronesim::{simulate_task, CriticalFlag, SimConfig};
    use attnlab_core::render::BACKGROUND;
    use attnlab_core::IconKind;

    #[test]
    fn mask_area_scales_with_raster() {
        let lay = Layout::default_layout();
        let frame = RgbFrame::filled(480, 300, BACKGROUND);
        for size in [96, 300] {
            let s = stack_input(&frame, &lay, 5, size).unwrap();
            assert_eq!(s.data.len(), 4 * size * size);
            let bb = lay.elements()[5].bbox;
            let expect = bb.area() as f64 * (size * size) as f64 / (1920.0 * 1200.0);
            let got: f64 = s.mask().iter().sum();
            // Nearest-neighbor rounding moves each edge by at most one pixel.
            let slack = 2.0 * (bb.w as f64 * size as f64 / 1920.0 + bb.h as f64 * size as f64 / 1200.0) + 4.0;
            assert!((got - expect).abs() <= slack, "size {size}: {got} vs {expect}");
            assert!(s.mask().iter().all(|&m| m == 0.0 || m == 1.0));
        }
    }

    #[test]
    fn different_elements_share_frame_channels() {
        let lay = Layout::default_layout();
        let frame = RgbFrame::filled(192, 120, [0.2, 0.4, 0.6]);
        let a = stack_input(&frame, &lay, 0, 32).unwrap();
        let b = stack_input(&frame, &lay, 9, 32).unwrap();
        assert_eq!(a.data[..3 * 1024], b.data[..3 * 1024]);
        assert_ne!(a.mask(), b.mask());
        assert!(matches!(stack_input(&frame, &lay, 99, 32), Err(HismError::UnknownElement(99))));
    }

    fn highlighted_event() -> (ScenarioTrace, IntervalRecord) {
        let tr = simulate_task(&SimConfig::desk_default(), 1, 3).unwrap();
        let rec = tr
            .critical_intervals()
            .find(|r| r.highlighted && r.index > 0)
            .cloned()
            .expect("a highlighted interval");
        (tr, rec)
    }

    #[test]
    fn trailing_highlight_slices_are_ones() {
        let (tr, rec) = highlighted_event();
        let lay = Layout::default_layout();
        let el = lay.find(rec.drone_index, rec.kind).unwrap();
        let grid = TimeGrid::default();
        let tin = temporal_inputs(&tr, &rec, &lay, el, 500, &grid).unwrap();
        assert_eq!(&tin.v[55..], &[1.0; 5]);
        assert_eq!(tin.v[54], -1.0);
        assert_eq!(tin.padding(), 45);
        assert!(tin.c[..45].iter().all(|&x| x == 0.0));
        let start = temporal_inputs(&tr, &rec, &lay, el, -1000, &grid).unwrap();
        assert!(start.v.iter().all(|&x| x == 0.0));
        assert!(matches!(
            temporal_inputs(&tr, &rec, &lay, el, 5100, &grid),
            Err(HismError::OutsideWindow(5100))
        ));
    }

    #[test]
    fn state_vector_is_min_max_scaled() {
        let (mut tr, rec) = highlighted_event();
        let lay = Layout::default_layout();
        let el = lay.find(0, IconKind::Battery).unwrap();
        for f in tr.frames.iter_mut() {
            f.drones[0].battery = 50.0;
            f.critical = None::<CriticalFlag>;
        }
        let tin = temporal_inputs(&tr, &rec, &lay, el, 5000, &TimeGrid::default()).unwrap();
        assert!(tin.c.iter().all(|&x| x == 0.5));
        assert!(tin.v.iter().all(|&x| x == -1.0));
    }
}
