//! Saliency rasters, fixation maps, Gaussian smoothing and normalized element
//! saliency (NS).
//!
//! NS of element `e` at a time slice is the saliency mass inside `e` divided
//! by the mass inside all elements. Being a ratio it does not depend on how
//! the map was scaled, so it is computed on the raw smoothed map.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gazeproc::Fixation;
use crate::layout::{BBox, Layout};
use crate::timegrid::TimeGrid;

pub const DEFAULT_WINDOW_PX: usize = 35;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("smoothing window must be at least 3 px, got {0}")]
    InvalidWindow(usize),
    #[error("smoothing sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("box {0:?} exceeds the {1}x{2} map")]
    OutOfBounds(BBox, u32, u32),
    #[error("map shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u32, u32, u32, u32),
    #[error("NS window [{0}, {1}) ms is not covered by gaze data [{2}, {3}) ms")]
    NotCovered(f64, f64, f64, f64),
    #[error("unknown element index {0}")]
    UnknownElement(usize),
    #[error("raster i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad SMAP raster: {0}")]
    Format(String),
    #[error("png encode: {0}")]
    Png(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("ns csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Raw,
    UnitMax,
    UnitSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
    norm: NormMode,
}

impl SaliencyMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        SaliencyMap {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
            norm: NormMode::Raw,
        }
    }

    /// Raw map from row-major values. Panics if the length does not match.
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width as usize * height as usize, "raster size");
        SaliencyMap {
            width,
            height,
            values,
            norm: NormMode::Raw,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn norm(&self) -> NormMode {
        self.norm
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        self.values[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_shape(&self, other: &SaliencyMap) -> Result<(), SaliencyError> {
        if self.width != other.width || self.height != other.height {
            return Err(SaliencyError::ShapeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> SaliencyMap {
        SaliencyMap {
            values: self.values.iter().map(|v| v * c).collect(),
            norm: NormMode::Raw,
            ..*self
        }
    }

    /// Rescales to the requested mode. An all-zero map stays all-zero.
    pub fn normalized(&self, mode: NormMode) -> SaliencyMap {
        let denom = match mode {
            NormMode::Raw => 1.0,
            NormMode::UnitMax => self.max(),
            NormMode::UnitSum => self.sum(),
        };
        let values = if denom > 0.0 && denom.is_finite() {
            self.values.iter().map(|v| v / denom).collect()
        } else {
            self.values.clone()
        };
        SaliencyMap {
            width: self.width,
            height: self.height,
            values,
            norm: mode,
        }
    }

    /// Bilinear resize (pixel-center aligned), used to bring low-resolution
    /// model output back to screen size.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> SaliencyMap {
        let (sw, sh) = (self.width as usize, self.height as usize);
        let mut out = Vec::with_capacity(width as usize * height as usize);
        let fx = sw as f64 / width as f64;
        let fy = sh as f64 / height as f64;
        for y in 0..height as usize {
            let sy = ((y as f64 + 0.5) * fy - 0.5).clamp(0.0, (sh - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(sh - 1);
            let ty = sy - y0 as f64;
            for x in 0..width as usize {
                let sx = ((x as f64 + 0.5) * fx - 0.5).clamp(0.0, (sw - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(sw - 1);
                let tx = sx - x0 as f64;
                let v = |xx: usize, yy: usize| self.values[yy * sw + xx];
                let top = v(x0, y0) * (1.0 - tx) + v(x1, y0) * tx;
                let bot = v(x0, y1) * (1.0 - tx) + v(x1, y1) * tx;
                out.push(top * (1.0 - ty) + bot * ty);
            }
        }
        SaliencyMap {
            width,
            height,
            values: out,
            norm: NormMode::Raw,
        }
    }
}

/// Pixel of a gaze point, or `None` when it falls off the raster.
pub fn pixel_of(x: f64, y: f64, width: u32, height: u32) -> Option<(u32, u32)> {
    if !(x >= 0.0 && y >= 0.0) {
        return None;
    }
    let (px, py) = (x.floor(), y.floor());
    (px < width as f64 && py < height as f64).then_some((px as u32, py as u32))
}

/// Whether a fixation overlaps the half-open window `[start, end)`.
pub fn fixation_active(f: &Fixation, start_ms: f64, end_ms: f64) -> bool {
    f.start_ms < end_ms && f.end_ms >= start_ms
}

/// Binary impulse map of fixations active in `bin` (ms, half-open).
pub fn fixation_map(fixations: &[Fixation], bin: (f64, f64), width: u32, height: u32) -> SaliencyMap {
    let mut map = SaliencyMap::zeros(width, height);
    for f in fixations.iter().filter(|f| fixation_active(f, bin.0, bin.1)) {
        if let Some((x, y)) = pixel_of(f.x, f.y, width, height) {
            map.set(x, y, 1.0);
        }
    }
    map
}

/// Truncated Gaussian smoothing kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    weights: Vec<f64>,
    /// Prefix sums: `cdf[i]` is the sum of the first `i` weights.
    cdf: Vec<f64>,
}

impl Kernel {
    /// Window of `window_px` taps (made odd by adding one if even) with
    /// `sigma = window / 6`.
    pub fn for_window(window_px: usize) -> Result<Kernel, SaliencyError> {
        let w = if window_px.is_multiple_of(2) { window_px + 1 } else { window_px };
        Kernel::new(window_px, w as f64 / 6.0)
    }

    pub fn new(window_px: usize, sigma: f64) -> Result<Kernel, SaliencyError> {
        if window_px < 3 {
            return Err(SaliencyError::InvalidWindow(window_px));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SaliencyError::InvalidSigma(sigma));
        }
        let w = if window_px.is_multiple_of(2) { window_px + 1 } else { window_px };
        let r = (w / 2) as i64;
        let mut weights: Vec<f64> = (-r..=r)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= total);
        let mut cdf = Vec::with_capacity(w + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for v in &weights {
            acc += v;
            cdf.push(acc);
        }
        Ok(Kernel { weights, cdf })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn radius(&self) -> usize {
        self.weights.len() / 2
    }

    /// Kernel mass centered at `center` that lands in `[lo, hi)`.
    pub fn mass_in(&self, center: i64, lo: i64, hi: i64) -> f64 {
        let r = self.radius() as i64;
        let a = (lo - center + r).clamp(0, 2 * r + 1) as usize;
        let b = (hi - center + r).clamp(0, 2 * r + 1) as usize;
        if b > a {
            self.cdf[b] - self.cdf[a]
        } else {
            0.0
        }
    }
}

/// Separable zero-padded convolution; skips zero input pixels, which keeps
/// sparse impulse maps cheap.
pub fn convolve(map: &SaliencyMap, kernel: &Kernel) -> SaliencyMap {
    let (w, h) = (map.width as usize, map.height as usize);
    let k = kernel.weights();
    let r = kernel.radius() as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &map.values[y * w..(y + 1) * w];
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, &v) in row.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let lo = (x as i64 - r).max(0) as usize;
            let hi = (x as i64 + r).min(w as i64 - 1) as usize;
            for xx in lo..=hi {
                out[xx] += v * k[(xx as i64 - x as i64 + r) as usize];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = (y as i64 - r).max(0) as usize;
        let hi = (y as i64 + r).min(h as i64 - 1) as usize;
        for x in 0..w {
            let v = tmp[y * w + x];
            if v == 0.0 {
                continue;
            }
            for yy in lo..=hi {
                out[yy * w + x] += v * k[(yy as i64 - y as i64 + r) as usize];
            }
        }
    }
    SaliencyMap {
        width: map.width,
        height: map.height,
        values: out,
        norm: NormMode::Raw,
    }
}

/// Gaussian smoothing followed by max normalization.
pub fn smooth_map(map: &SaliencyMap, window_px: usize) -> Result<SaliencyMap, SaliencyError> {
    let kernel = Kernel::for_window(window_px)?;
    Ok(convolve(map, &kernel).normalized(NormMode::UnitMax))
}

fn check_box(map: &SaliencyMap, b: &BBox) -> Result<(), SaliencyError> {
    if b.x1() > map.width || b.y1() > map.height {
        return Err(SaliencyError::OutOfBounds(*b, map.width, map.height));
    }
    Ok(())
}

/// Saliency mass inside `bbox`.
pub fn element_saliency(map: &SaliencyMap, bbox: &BBox) -> Result<f64, SaliencyError> {
    check_box(map, bbox)?;
    let w = map.width as usize;
    let mut total = 0.0;
    for y in bbox.y as usize..bbox.y1() as usize {
        total += map.values[y * w + bbox.x as usize..y * w + bbox.x1() as usize]
            .iter()
            .sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsValue {
    pub value: f64,
    /// Set when no element carried any saliency; `value` is then `1/n`.
    pub undefined_uniform: bool,
}

/// NS of every element, in layout order.
pub fn normalized_saliency_all(
    map: &SaliencyMap,
    layout: &Layout,
) -> Result<(Vec<f64>, bool), SaliencyError> {
    let s = layout
        .elements()
        .iter()
        .map(|e| element_saliency(map, &e.bbox))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ns_from_masses(&s))
}

/// Turns per-element masses into shares, falling back to uniform.
pub fn ns_from_masses(masses: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = masses.iter().sum();
    if total > 0.0 {
        (masses.iter().map(|m| m / total).collect(), false)
    } else {
        let n = masses.len().max(1) as f64;
        (vec![1.0 / n; masses.len()], true)
    }
}

pub fn normalized_saliency(
    map: &SaliencyMap,
    layout: &Layout,
    element: usize,
) -> Result<NsValue, SaliencyError> {
    if element >= layout.len() {
        return Err(SaliencyError::UnknownElement(element));
    }
    let (ns, undefined) = normalized_saliency_all(map, layout)?;
    Ok(NsValue {
        value: ns[element],
        undefined_uniform: undefined,
    })
}

/// Time span covered by the gaze recordings feeding an NS computation, ms in
/// task time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub start_ms: f64,
    pub end_ms: f64,
}

/// NS of all elements over every slice of the grid around one onset.
#[derive(Debug, Clone, PartialEq)]
pub struct NsSlices {
    pub t_rel_s: Vec<f64>,
    /// `ns[k][j]`: NS of element `j` at slice `k`.
    pub ns: Vec<Vec<f64>>,
    pub undefined: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsSeries {
    pub element_id: String,
    pub t_rel_s: Vec<f64>,
    pub ns: Vec<f64>,
    pub undefined: Vec<bool>,
}

impl NsSlices {
    pub fn series(&self, layout: &Layout, element: usize) -> NsSeries {
        NsSeries {
            element_id: layout.elements()[element].id.clone(),
            t_rel_s: self.t_rel_s.clone(),
            ns: self.ns.iter().map(|row| row[element]).collect(),
            undefined: self.undefined.clone(),
        }
    }
}

fn check_coverage(onset_ms: f64, grid: &TimeGrid, cov: Coverage) -> Result<(), SaliencyError> {
    let a = onset_ms + grid.window_start_ms as f64;
    let b = onset_ms + grid.window_end_ms as f64;
    if a < cov.start_ms || b > cov.end_ms {
        return Err(SaliencyError::NotCovered(a, b, cov.start_ms, cov.end_ms));
    }
    Ok(())
}

/// Distinct impulse pixels of fixations active in `[a, b)`.
fn active_pixels(fixations: &[Fixation], a: f64, b: f64, w: u32, h: u32) -> Vec<(u32, u32)> {
    let mut px: Vec<(u32, u32)> = fixations
        .iter()
        .filter(|f| fixation_active(f, a, b))
        .filter_map(|f| pixel_of(f.x, f.y, w, h))
        .collect();
    px.sort_unstable();
    px.dedup();
    px
}

/// NS of all elements for each 0.1 s slice around `onset_ms`.
///
/// Each slice's smoothed map is a sum of separable kernels, so the mass of an
/// element box is a sum over impulses of products of 1-D kernel masses; no
/// raster is materialized. [`ns_slices_raster`] is the direct route.
pub fn ns_slices(
    fixations: &[Fixation],
    layout: &Layout,
    onset_ms: f64,
    grid: &TimeGrid,
    coverage: Coverage,
    kernel: &Kernel,
) -> Result<NsSlices, SaliencyError> {
    check_coverage(onset_ms, grid, coverage)?;
    let (w, h) = (layout.width_px(), layout.height_px());
    let mut ns = Vec::with_capacity(grid.len());
    let mut undefined = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (a, b) = grid.slice_bounds_ms(k);
        let px = active_pixels(fixations, onset_ms + a as f64, onset_ms + b as f64, w, h);
        let masses: Vec<f64> = layout
            .elements()
            .iter()
            .map(|e| {
                let bb = &e.bbox;
                px.iter()
                    .map(|&(x, y)| {
                        kernel.mass_in(x as i64, bb.x as i64, bb.x1() as i64)
                            * kernel.mass_in(y as i64, bb.y as i64, bb.y1() as i64)
                    })
                    .sum()
            })
            .collect();
        let (v, u) = ns_from_masses(&masses);
        ns.push(v);
        undefined.push(u);
    }
    Ok(NsSlices {
        t_rel_s: grid.t_rel_all(),
        ns,
        undefined,
    })
}

/// Same result as [`ns_slices`], built by rasterizing, smoothing and
/// integrating each slice.
pub fn ns_slices_raster(
    fixations: &[Fixation],
    layout: &Layout,
    onset_ms: f64,
    grid: &TimeGrid,
    coverage: Coverage,
    window_px: usize,
) -> Result<NsSlices, SaliencyError> {
    check_coverage(onset_ms, grid, coverage)?;
    let (w, h) = (layout.width_px(), layout.height_px());
    let mut ns = Vec::with_capacity(grid.len());
    let mut undefined = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (a, b) = grid.slice_bounds_ms(k);
        let fmap = fixation_map(fixations, (onset_ms + a as f64, onset_ms + b as f64), w, h);
        let smooth = smooth_map(&fmap, window_px)?;
        let (v, u) = normalized_saliency_all(&smooth, layout)?;
        ns.push(v);
        undefined.push(u);
    }
    Ok(NsSlices {
        t_rel_s: grid.t_rel_all(),
        ns,
        undefined,
    })
}

/// NS series of one element around one onset.
pub fn ns_time_series(
    fixations: &[Fixation],
    layout: &Layout,
    element: usize,
    onset_ms: f64,
    grid: &TimeGrid,
    coverage: Coverage,
    window_px: usize,
) -> Result<NsSeries, SaliencyError> {
    if element >= layout.len() {
        return Err(SaliencyError::UnknownElement(element));
    }
    let kernel = Kernel::for_window(window_px)?;
    Ok(ns_slices(fixations, layout, onset_ms, grid, coverage, &kernel)?.series(layout, element))
}

const SMAP_MAGIC: &[u8; 4] = b"SMAP";

/// 16-byte header (`SMAP`, width, height, reserved) then row-major LE f32.
pub fn write_smap<W: Write>(map: &SaliencyMap, mut out: W) -> Result<(), SaliencyError> {
    let mut buf = Vec::with_capacity(16 + map.values.len() * 4);
    buf.extend_from_slice(SMAP_MAGIC);
    buf.extend_from_slice(&map.width.to_le_bytes());
    buf.extend_from_slice(&map.height.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in &map.values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_smap<R: Read>(mut input: R) -> Result<SaliencyMap, SaliencyError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != SMAP_MAGIC {
        return Err(SaliencyError::Format("missing SMAP header".into()));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let (w, h) = (u(4), u(8));
    let n = w as usize * h as usize;
    if bytes.len() != 16 + 4 * n {
        return Err(SaliencyError::Format(format!(
            "expected {} data bytes, found {}",
            4 * n,
            bytes.len() - 16
        )));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(SaliencyMap::from_values(w, h, values))
}

/// 8-bit grayscale PNG scaled by the map maximum.
pub fn write_png_gray(map: &SaliencyMap, path: impl AsRef<Path>) -> Result<(), SaliencyError> {
    let m = map.max();
    let data: Vec<u8> = map
        .values
        .iter()
        .map(|v| if m > 0.0 { (v / m * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect();
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, map.width, map.height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()?.write_image_data(&data)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct NsRow {
    t_rel_s: f64,
    element_id: String,
    ns: f64,
    flag: u8,
}

/// NS CSV: `t_rel_s,element_id,ns,flag`; flag 1 marks undefined-uniform.
pub fn write_ns_csv<W: Write>(series: &[NsSeries], out: W) -> Result<(), SaliencyError> {
    let mut w = csv::Writer::from_writer(out);
    for s in series {
        for k in 0..s.ns.len() {
            w.serialize(NsRow {
                t_rel_s: (s.t_rel_s[k] * 10.0).round() / 10.0,
                element_id: s.element_id.clone(),
                ns: s.ns[k],
                flag: u8::from(s.undefined[k]),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ns_csv<R: Read>(input: R) -> Result<Vec<NsSeries>, SaliencyError> {
    let mut out: Vec<NsSeries> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: NsRow = row?;
        match out.last_mut() {
            Some(s) if s.element_id == row.element_id => {
                s.t_rel_s.push(row.t_rel_s);
                s.ns.push(row.ns);
                s.undefined.push(row.flag != 0);
            }
            _ => out.push(NsSeries {
                element_id: row.element_id,
                t_rel_s: vec![row.t_rel_s],
                ns: vec![row.ns],
                undefined: vec![row.flag != 0],
            }),
        }
    }
    Ok(out)
}
