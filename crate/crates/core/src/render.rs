//! Schematic frame rasters of the monitoring display: flat background, a map
//! panel, one box per icon with a value bar, and a yellow fill on a
//! highlighted critical icon. Also PNG I/O and a fixed heatmap color ramp.

use std::io::BufReader;
use std::path::Path;

use thiserror::Error;

use crate::dronesim::FrameRecord;
use crate::layout::{BBox, Layout};
use crate::saliency::SaliencyMap;

pub const BACKGROUND: [f32; 3] = [0.12, 0.13, 0.15];
pub const MAP_PANEL: [f32; 3] = [0.17, 0.24, 0.20];
pub const ICON_FILL: [f32; 3] = [0.30, 0.31, 0.34];
pub const ICON_BORDER: [f32; 3] = [0.55, 0.56, 0.60];
pub const VALUE_BAR: [f32; 3] = [0.68, 0.72, 0.78];
pub const HIGHLIGHT: [f32; 3] = [1.0, 0.85, 0.0];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("frame i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

/// Interleaved RGB raster with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl RgbFrame {
    pub fn filled(width: u32, height: u32, color: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&color);
        }
        RgbFrame {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn fill_rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, color: [f32; 3]) {
        let (x1, y1) = (x1.min(self.width), y1.min(self.height));
        for y in y0..y1 {
            let row = y as usize * self.width as usize;
            for x in x0..x1 {
                let i = (row + x as usize) * 3;
                self.data[i..i + 3].copy_from_slice(&color);
            }
        }
    }

    /// Channel `c` as a plane of f64.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect()
    }

    /// Area-averaging resize (box filter over the exact source footprint).
    pub fn resize_area(&self, width: u32, height: u32) -> RgbFrame {
        let xs = area_weights(self.width as usize, width as usize);
        let ys = area_weights(self.height as usize, height as usize);
        let sw = self.width as usize;
        let mut data = vec![0f32; width as usize * height as usize * 3];
        for (oy, yw) in ys.iter().enumerate() {
            for (ox, xw) in xs.iter().enumerate() {
                let mut acc = [0f64; 3];
                for &(sy, wy) in yw {
                    for &(sx, wx) in xw {
                        let i = (sy * sw + sx) * 3;
                        let w = wy * wx;
                        for c in 0..3 {
                            acc[c] += self.data[i + c] as f64 * w;
                        }
                    }
                }
                let o = (oy * width as usize + ox) * 3;
                for c in 0..3 {
                    data[o + c] = acc[c] as f32;
                }
            }
        }
        RgbFrame {
            width,
            height,
            data,
        }
    }
}

/// For each output cell, the source indices it covers and their weights
/// (summing to one).
pub fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let a = o as f64 * scale;
            let b = (o + 1) as f64 * scale;
            let mut v = Vec::new();
            let mut s = a.floor() as usize;
            while (s as f64) < b && s < src {
                let lo = a.max(s as f64);
                let hi = b.min((s + 1) as f64);
                if hi > lo {
                    v.push((s, (hi - lo) / scale));
                }
                s += 1;
            }
            v
        })
        .collect()
}

fn scaled_box(b: &BBox, sx: f64, sy: f64) -> (u32, u32, u32, u32) {
    (
        (b.x as f64 * sx).round() as u32,
        (b.y as f64 * sy).round() as u32,
        (b.x1() as f64 * sx).round() as u32,
        (b.y1() as f64 * sy).round() as u32,
    )
}

/// Renders the display state of `record` at `width` x `height` (the layout
/// is scaled to fit).
pub fn render_frame(layout: &Layout, record: &FrameRecord, width: u32, height: u32) -> RgbFrame {
    let sx = width as f64 / layout.width_px() as f64;
    let sy = height as f64 / layout.height_px() as f64;
    let mut f = RgbFrame::filled(width, height, BACKGROUND);
    let panel = BBox::new(
        layout.width_px() * 2 / 3,
        layout.height_px() / 10,
        layout.width_px() * 3 / 10,
        layout.height_px() * 4 / 5,
    );
    let (px0, py0, px1, py1) = scaled_box(&panel, sx, sy);
    f.fill_rect(px0, py0, px1, py1, MAP_PANEL);

    for e in layout.elements() {
        let (x0, y0, x1, y1) = scaled_box(&e.bbox, sx, sy);
        let highlighted = record
            .critical
            .is_some_and(|c| c.highlighted && c.drone == e.drone_index && c.kind == e.icon_kind);
        let inset = |v: u32, d: u32| v.saturating_add(d);
        let border = ((3.0 * sx).round() as u32).max(1);
        f.fill_rect(x0, y0, x1, y1, ICON_BORDER);
        f.fill_rect(
            inset(x0, border),
            inset(y0, border),
            x1.saturating_sub(border),
            y1.saturating_sub(border),
            if highlighted { HIGHLIGHT } else { ICON_FILL },
        );
        if let Some(reading) = record.drones.get(e.drone_index) {
            let v = reading.normalized(e.icon_kind);
            let bx0 = inset(x0, 3 * border);
            let bx1 = x1.saturating_sub(3 * border);
            let by0 = y0 + (y1 - y0) * 5 / 8;
            let by1 = y0 + (y1 - y0) * 3 / 4;
            let len = ((bx1.saturating_sub(bx0)) as f64 * v).round() as u32;
            if len > 0 && by1 > by0 {
                f.fill_rect(bx0, by0, bx0 + len, by1, VALUE_BAR);
            }
        }
    }
    f
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(frame: &RgbFrame, path: impl AsRef<Path>) -> Result<(), RenderError> {
    let bytes: Vec<u8> = frame.data.iter().map(|&v| to_u8(v)).collect();
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, frame.width, frame.height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()?.write_image_data(&bytes)?;
    Ok(())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<RgbFrame, RenderError> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RenderError::Unsupported("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(RenderError::Unsupported(format!("{other:?}"))),
    };
    let n = info.width as usize * info.height as usize;
    let mut data = Vec::with_capacity(n * 3);
    for px in buf[..n * channels].chunks_exact(channels) {
        let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
        data.extend(rgb.iter().map(|&b| b as f32 / 255.0));
    }
    Ok(RgbFrame {
        width: info.width,
        height: info.height,
        data,
    })
}

/// Fixed ramp black -> blue -> red -> yellow -> white over `[0, 1]`.
pub fn ramp(t: f64) -> [f32; 3] {
    const STOPS: [[f32; 3]; 5] = [
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.8],
        [0.9, 0.0, 0.0],
        [1.0, 0.9, 0.0],
        [1.0, 1.0, 1.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = (pos - i as f64) as f32;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f, a[2] + (b[2] - a[2]) * f]
}

/// Heatmap of a saliency map, scaled by its maximum. An all-zero map renders
/// as the ramp's zero color.
pub fn heatmap(map: &SaliencyMap) -> RgbFrame {
    let m = map.max();
    let mut data = Vec::with_capacity(map.values().len() * 3);
    for &v in map.values() {
        data.extend_from_slice(&ramp(if m > 0.0 { v / m } else { 0.0 }));
    }
    RgbFrame {
        width: map.width(),
        height: map.height(),
        data,
    }
}
