//! Figures: heatmap PNGs on the fixed color ramp, NS-over-time SVG line
//! plots, and the CSV data behind each.

use std::fmt::Write as _;
use std::io::{Read, Write};

use attnlab_core::render::heatmap;
use attnlab_core::saliency::SaliencyMap;
use serde::{Deserialize, Serialize};

/// Chance level of element NS with 32 elements.
pub const NS_BASELINE: f64 = 1.0 / 32.0;

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

/// RGB PNG of `map` on the fixed ramp.
pub fn heatmap_png(map: &SaliencyMap) -> Result<Vec<u8>, png::EncodingError> {
    let frame = heatmap(map);
    let bytes: Vec<u8> = frame
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width, frame.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header()?.write_image_data(&bytes)?;
    }
    Ok(out)
}

/// `x,y,value` rows of `map` sampled every `step` pixels.
pub fn map_csv(map: &SaliencyMap, step: u32) -> Vec<u8> {
    let mut s = String::from("x,y,value\n");
    let step = step.max(1);
    for y in (0..map.height()).step_by(step as usize) {
        for x in (0..map.width()).step_by(step as usize) {
            let _ = writeln!(s, "{x},{y},{}", map.get(x, y));
        }
    }
    s.into_bytes()
}

/// Line plot of one or more series over `t_rel_s` with the 1/32 chance
/// level drawn as a dashed rule.
pub fn ns_svg(title: &str, t_rel_s: &[f64], series: &[(&str, &[f64])]) -> String {
    let (t0, t1) = match (t_rel_s.first(), t_rel_s.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => (0.0, 1.0),
    };
    let ymax = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(NS_BASELINE, f64::max)
        .max(0.1)
        * 1.1;
    let px = |t: f64| MARGIN + (t - t0) / (t1 - t0) * (W - 2.0 * MARGIN);
    let py = |v: f64| H - MARGIN - v / ymax * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<line class="axis" x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="#333"/><line class="axis" x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="#333"/>"##,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    if t0 < 0.0 && t1 > 0.0 {
        let _ = writeln!(
            s,
            r##"<line class="onset" x1="{x:.2}" y1="{m}" x2="{x:.2}" y2="{b}" stroke="#999"/>"##,
            x = px(0.0),
            m = MARGIN,
            b = H - MARGIN
        );
    }
    let _ = writeln!(
        s,
        r##"<line class="baseline" x1="{m}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="#555" stroke-dasharray="6 4"/>"##,
        m = MARGIN,
        r = W - MARGIN,
        y = py(NS_BASELINE)
    );
    for (i, (name, values)) in series.iter().enumerate() {
        let pts: Vec<String> = t_rel_s
            .iter()
            .zip(values.iter())
            .map(|(&t, &v)| format!("{:.2},{:.2}", px(t), py(v)))
            .collect();
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(name),
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            W - MARGIN - 120.0,
            MARGIN + 16.0 * i as f64,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">time from onset (s)</text>"#,
        W / 2.0,
        H - 12.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub series: String,
    pub t_rel_s: f64,
    pub value: f64,
}

/// Long-format CSV `series,t_rel_s,value`.
pub fn write_series_csv<W: Write>(
    t_rel_s: &[f64],
    series: &[(&str, &[f64])],
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (name, values) in series {
        for (&t, &v) in t_rel_s.iter().zip(values.iter()) {
            w.serialize(SeriesRow {
                series: name.to_string(),
                t_rel_s: t,
                value: v,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv<R: Read>(input: R) -> csv::Result<Vec<SeriesRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_point_per_slice_and_baseline() {
        let t: Vec<f64> = (0..60).map(|k| -1.0 + 0.1 * k as f64).collect();
        let v: Vec<f64> = (0..60).map(|k| (k as f64 / 60.0).sin() * 0.4).collect();
        let svg = ns_svg("target", &t, &[("highlight", &v)]);
        let poly = svg.lines().find(|l| l.contains("<polyline")).unwrap();
        let pts = poly
            .split("points=\"")
            .nth(1)
            .unwrap()
            .trim_end_matches("\"/>");
        assert_eq!(pts.split(' ').count(), 60);
        assert_eq!(svg.matches("class=\"baseline\"").count(), 1);
    }

    #[test]
    fn zero_map_gives_uniform_png() {
        let map = SaliencyMap::zeros(20, 10);
        let bytes = heatmap_png(&map).unwrap();
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        let px = &buf[..info.buffer_size()];
        assert!(px.chunks(3).all(|c| c == &px[..3]));
    }

    #[test]
    fn series_csv_round_trips() {
        let t = [-0.1, 0.0, 0.1];
        let a = [0.25, 0.5, 0.125];
        let mut buf = Vec::new();
        write_series_csv(&t, &[("a", &a)], &mut buf).unwrap();
        let rows = read_series_csv(&buf[..]).unwrap();
        let back: Vec<f64> = rows.iter().map(|r| r.value).collect();
        assert_eq!(back, a);
    }
}
