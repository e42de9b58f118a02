//! Bottom-up ITTI saliency: intensity, red-green / blue-yellow opponency and
//! four Gabor orientation channels on 9-level Gaussian pyramids,
//! center-surround differences at `c in {2,3,4}`, `s = c + {3,4}`, the
//! peak-promoting normalization operator `N(.)`, conspicuity maps at level 4
//! and their mean as the final map.
//!
//! Borders replicate edge pixels so that flat regions produce no response.

use thiserror::Error;

use crate::render::RgbFrame;
use crate::saliency::{NormMode, SaliencyMap};

pub const LEVELS: usize = 9;
pub const CENTER_LEVELS: [usize; 3] = [2, 3, 4];
pub const DELTAS: [usize; 2] = [3, 4];
pub const CONSPICUITY_LEVEL: usize = 4;
pub const GABOR_WAVELENGTH: f64 = 7.0;
pub const GABOR_SIGMA: f64 = 2.8;
pub const ORIENTATIONS_DEG: [f64; 4] = [0.0, 45.0, 90.0, 135.0];
pub const MIN_SIDE: u32 = 256;
/// Neighbors closer than this (after scaling to unit max) count as level.
const PLATEAU_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum IttiError {
    #[error("frame {0}x{1} is smaller than the {2}x{2} minimum")]
    TooSmall(u32, u32, u32),
}

/// Single-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub w: usize,
    pub h: usize,
    pub v: Vec<f64>,
}

impl Plane {
    pub fn new(w: usize, h: usize, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), w * h);
        Plane { w, h, v }
    }

    pub fn zeros(w: usize, h: usize) -> Self {
        Plane::new(w, h, vec![0.0; w * h])
    }

    fn at(&self, x: isize, y: isize) -> f64 {
        let xx = x.clamp(0, self.w as isize - 1) as usize;
        let yy = y.clamp(0, self.h as isize - 1) as usize;
        self.v[yy * self.w + xx]
    }

    pub fn max(&self) -> f64 {
        self.v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.v.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane::new(self.w, self.h, self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect())
    }

    fn add_assign(&mut self, other: &Plane) {
        for (a, b) in self.v.iter_mut().zip(&other.v) {
            *a += b;
        }
    }

    /// Bilinear resample to `w` x `h` (pixel-center aligned).
    pub fn resize(&self, w: usize, h: usize) -> Plane {
        if w == self.w && h == self.h {
            return self.clone();
        }
        let fx = self.w as f64 / w as f64;
        let fy = self.h as f64 / h as f64;
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = ((y as f64 + 0.5) * fy - 0.5).max(0.0);
            let y0 = sy.floor() as isize;
            let ty = sy - y0 as f64;
            for x in 0..w {
                let sx = ((x as f64 + 0.5) * fx - 0.5).max(0.0);
                let x0 = sx.floor() as isize;
                let tx = sx - x0 as f64;
                let top = self.at(x0, y0) * (1.0 - tx) + self.at(x0 + 1, y0) * tx;
                let bot = self.at(x0, y0 + 1) * (1.0 - tx) + self.at(x0 + 1, y0 + 1) * tx;
                out.push(top * (1.0 - ty) + bot * ty);
            }
        }
        Plane::new(w, h, out)
    }
}

/// Separable real convolution with edge replication.
fn convolve_sep(p: &Plane, kx: &[f64], ky: &[f64]) -> Plane {
    let (rx, ry) = ((kx.len() / 2) as isize, (ky.len() / 2) as isize);
    let mut tmp = vec![0.0; p.w * p.h];
    for y in 0..p.h {
        for x in 0..p.w {
            tmp[y * p.w + x] = kx
                .iter()
                .enumerate()
                .map(|(i, k)| k * p.at(x as isize + i as isize - rx, y as isize))
                .sum();
        }
    }
    let t = Plane::new(p.w, p.h, tmp);
    let mut out = vec![0.0; p.w * p.h];
    for y in 0..p.h {
        for x in 0..p.w {
            out[y * p.w + x] = ky
                .iter()
                .enumerate()
                .map(|(i, k)| k * t.at(x as isize, y as isize + i as isize - ry))
                .sum();
        }
    }
    Plane::new(p.w, p.h, out)
}

const BLUR5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Levels 0..LEVELS: blur with the 5-tap binomial filter, keep every second
/// pixel.
pub fn gaussian_pyramid(base: &Plane) -> Vec<Plane> {
    let mut levels = vec![base.clone()];
    for _ in 1..LEVELS {
        let prev = levels.last().expect("non-empty");
        let blurred = convolve_sep(prev, &BLUR5, &BLUR5);
        let (w, h) = (prev.w.div_ceil(2), prev.h.div_ceil(2));
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                v.push(blurred.v[(2 * y) * prev.w + 2 * x]);
            }
        }
        levels.push(Plane::new(w, h, v));
    }
    levels
}

/// 1-D complex Gabor factor `exp(i k t) g(t)`, mean-corrected whenever it
/// oscillates so the 2-D kernel has zero response to constant input.
fn gabor_factor(freq: f64) -> (Vec<f64>, Vec<f64>) {
    let r = (3.0 * GABOR_SIGMA).ceil() as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|t| (-(t * t) as f64 / (2.0 * GABOR_SIGMA * GABOR_SIGMA)).exp())
        .collect();
    let gsum: f64 = g.iter().sum();
    let mut re: Vec<f64> = (-r..=r).zip(&g).map(|(t, gv)| gv * (freq * t as f64).cos()).collect();
    let im: Vec<f64> = (-r..=r).zip(&g).map(|(t, gv)| gv * (freq * t as f64).sin()).collect();
    if freq.abs() > 1e-12 {
        // Remove DC: subtract the envelope scaled to the real part's sum.
        let dc: f64 = re.iter().sum::<f64>() / gsum;
        for (v, gv) in re.iter_mut().zip(&g) {
            *v -= dc * gv;
        }
    }
    (re, im)
}

/// Magnitude of the complex Gabor response at orientation `theta_deg`.
pub fn gabor_magnitude(p: &Plane, theta_deg: f64) -> Plane {
    let k = 2.0 * std::f64::consts::PI / GABOR_WAVELENGTH;
    let th = theta_deg.to_radians();
    let (xr, xi) = gabor_factor(k * th.cos());
    let (yr, yi) = gabor_factor(k * th.sin());
    // (xr + i xi)(yr + i yi) = (xr yr - xi yi) + i (xr yi + xi yr)
    let rr = convolve_sep(p, &xr, &yr);
    let ii = convolve_sep(p, &xi, &yi);
    let ri = convolve_sep(p, &xr, &yi);
    let ir = convolve_sep(p, &xi, &yr);
    let mut v = Vec::with_capacity(p.v.len());
    for k in 0..p.v.len() {
        let re = rr.v[k] - ii.v[k];
        let im = ri.v[k] + ir.v[k];
        v.push((re * re + im * im).sqrt());
    }
    Plane::new(p.w, p.h, v)
}

/// Peak-promoting normalization: scale to `[0, 1]` by the global maximum,
/// then multiply by `(1 - m)^2`, where `m` is the mean of the other local
/// maxima above 0.1. Plateaus of neighboring maxima count once. A map with
/// no variation maps to zero.
pub fn normalize_operator(p: &Plane) -> Plane {
    let (mx, mn) = (p.max(), p.min());
    if !(mx > 0.0) || mx - mn <= 1e-12 * mx.abs() {
        return Plane::zeros(p.w, p.h);
    }
    let v: Vec<f64> = p.v.iter().map(|x| (x / mx).max(0.0)).collect();
    let s = Plane::new(p.w, p.h, v);
    let (w, h) = (s.w as isize, s.h as isize);
    let is_max: Vec<bool> = (0..s.v.len())
        .map(|i| {
            let (x, y) = ((i % s.w) as isize, (i / s.w) as isize);
            let c = s.v[i];
            if c <= 0.1 {
                return false;
            }
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) != (0, 0) && nx >= 0 && ny >= 0 && nx < w && ny < h && s.v[(ny * w + nx) as usize] > c + PLATEAU_TOL {
                        return false;
                    }
                }
            }
            true
        })
        .collect();
    // Group adjacent maxima and keep each group's peak.
    let mut seen = vec![false; s.v.len()];
    let mut peaks = Vec::new();
    for start in 0..s.v.len() {
        if !is_max[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut peak = 0.0f64;
        while let Some(i) = stack.pop() {
            peak = peak.max(s.v[i]);
            let (x, y) = ((i % s.w) as isize, (i / s.w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h {
                        let j = (ny * w + nx) as usize;
                        if is_max[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        peaks.push(peak);
    }
    // Drop one group holding the global maximum.
    if let Some(pos) = peaks.iter().position(|&v| v >= 1.0 - PLATEAU_TOL) {
        peaks.swap_remove(pos);
    }
    let mbar = if peaks.is_empty() {
        0.0
    } else {
        peaks.iter().sum::<f64>() / peaks.len() as f64
    };
    let f = (1.0 - mbar).powi(2);
    Plane::new(s.w, s.h, s.v.iter().map(|x| x * f).collect())
}

/// Rectified feature pyramids of one frame.
#[derive(Debug, Clone)]
pub struct FeatureChannels {
    pub intensity: Vec<Plane>,
    pub red: Vec<Plane>,
    pub green: Vec<Plane>,
    pub blue: Vec<Plane>,
    pub yellow: Vec<Plane>,
    /// Gabor magnitudes per orientation; levels below the first center level
    /// are left empty.
    pub orientation: [Vec<Plane>; 4],
}

pub fn feature_channels(frame: &RgbFrame) -> FeatureChannels {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let (r, g, b) = (frame.channel(0), frame.channel(1), frame.channel(2));
    let i: Vec<f64> = (0..w * h).map(|k| (r[k] + g[k] + b[k]) / 3.0).collect();
    let imax = i.iter().copied().fold(0.0, f64::max);
    let mut planes = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
    for k in 0..w * h {
        if i[k] > 0.1 * imax && i[k] > 0.0 {
            let (rn, gn, bn) = (r[k] / i[k], g[k] / i[k], b[k] / i[k]);
            planes[0][k] = (rn - (gn + bn) / 2.0).max(0.0);
            planes[1][k] = (gn - (rn + bn) / 2.0).max(0.0);
            planes[2][k] = (bn - (rn + gn) / 2.0).max(0.0);
            planes[3][k] = ((rn + gn) / 2.0 - (rn - gn).abs() / 2.0 - bn).max(0.0);
        }
    }
    let [pr, pg, pb, py] = planes;
    let intensity = gaussian_pyramid(&Plane::new(w, h, i));
    let orientation = ORIENTATIONS_DEG.map(|th| {
        intensity
            .iter()
            .enumerate()
            .map(|(lvl, p)| {
                if lvl >= CENTER_LEVELS[0] {
                    gabor_magnitude(p, th)
                } else {
                    Plane::zeros(0, 0)
                }
            })
            .collect()
    });
    FeatureChannels {
        red: gaussian_pyramid(&Plane::new(w, h, pr)),
        green: gaussian_pyramid(&Plane::new(w, h, pg)),
        blue: gaussian_pyramid(&Plane::new(w, h, pb)),
        yellow: gaussian_pyramid(&Plane::new(w, h, py)),
        intensity,
        orientation,
    }
}

/// Across-scale sum of normalized center-surround maps at the conspicuity
/// level. `diff(c, s)` returns the feature map for one scale pair.
fn across_scale(target: (usize, usize), mut diff: impl FnMut(usize, usize) -> Plane) -> Plane {
    let mut acc = Plane::zeros(target.0, target.1);
    for c in CENTER_LEVELS {
        for d in DELTAS {
            let fm = normalize_operator(&diff(c, c + d));
            acc.add_assign(&fm.resize(target.0, target.1));
        }
    }
    acc
}

fn center_surround(center: &Plane, surround: &Plane) -> Plane {
    center.zip_map(&surround.resize(center.w, center.h), |a, b| (a - b).abs())
}

/// ITTI saliency map at frame resolution, max-normalized.
pub fn itti_saliency(frame: &RgbFrame) -> Result<SaliencyMap, IttiError> {
    if frame.width < MIN_SIDE || frame.height < MIN_SIDE {
        return Err(IttiError::TooSmall(frame.width, frame.height, MIN_SIDE));
    }
    let fc = feature_channels(frame);
    let lvl = &fc.intensity[CONSPICUITY_LEVEL];
    let target = (lvl.w, lvl.h);

    let i_bar = across_scale(target, |c, s| center_surround(&fc.intensity[c], &fc.intensity[s]));
    let rg = |l: usize| fc.red[l].zip_map(&fc.green[l], |a, b| a - b);
    let by = |l: usize| fc.blue[l].zip_map(&fc.yellow[l], |a, b| a - b);
    let rg_bar = across_scale(target, |c, s| center_surround(&rg(c), &rg(s)));
    let by_bar = across_scale(target, |c, s| center_surround(&by(c), &by(s)));
    let mut c_bar = rg_bar;
    c_bar.add_assign(&by_bar);
    let mut o_bar = Plane::zeros(target.0, target.1);
    for o in &fc.orientation {
        let per = across_scale(target, |c, s| center_surround(&o[c], &o[s]));
        o_bar.add_assign(&normalize_operator(&per));
    }

    let mut sal = normalize_operator(&i_bar);
    sal.add_assign(&normalize_operator(&c_bar));
    sal.add_assign(&normalize_operator(&o_bar));
    for v in sal.v.iter_mut() {
        *v /= 3.0;
    }
    let up = sal.resize(frame.width as usize, frame.height as usize);
    Ok(SaliencyMap::from_values(frame.width, frame.height, up.v).normalized(NormMode::UnitMax))
}
