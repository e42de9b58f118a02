//! Map-level saliency metrics (AUC-Judd, NSS, SIM, CC, KL), composite
//! losses and scalar regression metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::saliency::SaliencyMap;

pub const KL_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no fixation points")]
    NoFixations,
    #[error("every pixel is fixated; no negatives for the ROC curve")]
    NoNegatives,
    #[error("fixation point ({0}, {1}) lies outside the map")]
    PointOutOfBounds(u32, u32),
    #[error("map has zero variance")]
    ZeroVariance,
    #[error("both maps are all zero")]
    BothZero,
    #[error("shapes differ: {0} vs {1} values")]
    ShapeMismatch(usize, usize),
    #[error("empty series")]
    Empty,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("report csv: {0}")]
    Csv(String),
}

fn same_shape(a: &SaliencyMap, b: &SaliencyMap) -> Result<(), MetricError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricError::ShapeMismatch(a.values().len(), b.values().len()));
    }
    Ok(())
}

fn fixation_mask(pred: &SaliencyMap, points: &[(u32, u32)]) -> Result<Vec<bool>, MetricError> {
    if points.is_empty() {
        return Err(MetricError::NoFixations);
    }
    let mut mask = vec![false; pred.values().len()];
    for &(x, y) in points {
        if x >= pred.width() || y >= pred.height() {
            return Err(MetricError::PointOutOfBounds(x, y));
        }
        mask[y as usize * pred.width() as usize + x as usize] = true;
    }
    Ok(mask)
}

/// AUC-Judd: one ROC point per fixated-pixel saliency threshold; true
/// positives are fixations at or above it, false positives are non-fixated
/// pixels at or above it. Trapezoidal area including (0,0) and (1,1).
pub fn auc_judd(pred: &SaliencyMap, points: &[(u32, u32)]) -> Result<f64, MetricError> {
    let mask = fixation_mask(pred, points)?;
    let mut fix_vals: Vec<f64> = points.iter().map(|&(x, y)| pred.get(x, y)).collect();
    let mut neg: Vec<f64> = pred
        .values()
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| !m)
        .map(|(&v, _)| v)
        .collect();
    if neg.is_empty() {
        return Err(MetricError::NoNegatives);
    }
    let desc = |a: &f64, b: &f64| b.total_cmp(a);
    fix_vals.sort_by(desc);
    neg.sort_by(desc);
    let (nf, nn) = (fix_vals.len() as f64, neg.len() as f64);
    let mut area = 0.0;
    let (mut prev_tp, mut prev_fp) = (0.0, 0.0);
    let mut j = 0;
    let mut i = 0;
    while i < fix_vals.len() {
        let th = fix_vals[i];
        while i < fix_vals.len() && fix_vals[i] >= th {
            i += 1;
        }
        while j < neg.len() && neg[j] >= th {
            j += 1;
        }
        let (tp, fp) = (i as f64 / nf, j as f64 / nn);
        area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    area += (1.0 - prev_fp) * (1.0 + prev_tp) / 2.0;
    Ok(area)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean z-scored saliency at fixation pixels (population standard
/// deviation).
pub fn nss(pred: &SaliencyMap, points: &[(u32, u32)]) -> Result<f64, MetricError> {
    fixation_mask(pred, points)?;
    let (mean, sd) = mean_std(pred.values());
    if sd <= 0.0 || !sd.is_finite() {
        return Err(MetricError::ZeroVariance);
    }
    Ok(points
        .iter()
        .map(|&(x, y)| (pred.get(x, y) - mean) / sd)
        .sum::<f64>()
        / points.len() as f64)
}

fn unit_sum(values: &[f64]) -> Option<Vec<f64>> {
    let s: f64 = values.iter().sum();
    (s > 0.0).then(|| values.iter().map(|v| v / s).collect())
}

/// Histogram intersection of the two maps as distributions. Evaluated as
/// `1 - TV(P, Q)`, which equals `sum(min(P, Q))` for distributions and is
/// exact for identical inputs.
pub fn sim(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64, MetricError> {
    same_shape(pred, gt)?;
    let (p, q) = match (unit_sum(pred.values()), unit_sum(gt.values())) {
        (None, None) => return Err(MetricError::BothZero),
        (None, _) | (_, None) => return Ok(0.0),
        (Some(p), Some(q)) => (p, q),
    };
    let tv: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
    Ok((1.0 - tv).clamp(0.0, 1.0))
}

/// Pearson correlation of the flattened rasters.
pub fn cc(a: &SaliencyMap, b: &SaliencyMap) -> Result<f64, MetricError> {
    same_shape(a, b)?;
    pearson_r(a.values(), b.values())
}

pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn regularized(values: &[f64], eps: f64) -> Vec<f64> {
    let n = values.len() as f64;
    let p = unit_sum(values).unwrap_or_else(|| vec![1.0 / n; values.len()]);
    let floored: Vec<f64> = p.iter().map(|v| v.max(eps)).collect();
    let s: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / s).collect()
}

/// `KL(gt || pred)` after normalizing both to distributions, flooring every
/// entry at `eps` and renormalizing.
pub fn kl(gt: &SaliencyMap, pred: &SaliencyMap, eps: f64) -> Result<f64, MetricError> {
    same_shape(gt, pred)?;
    let p = regularized(gt.values(), eps);
    let q = regularized(pred.values(), eps);
    Ok(p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0))
}

/// Weights of `w_kl * KL + w_cc * CC + w_sim * SIM`; the correlation terms
/// carry negative weights because they are maximized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_kl: f64,
    pub w_cc: f64,
    pub w_sim: f64,
}

impl LossWeights {
    pub const PRETRAIN: LossWeights = LossWeights {
        w_kl: 10.0,
        w_cc: -3.0,
        w_sim: -2.0,
    };
    pub const FINETUNE: LossWeights = LossWeights {
        w_kl: 1.0,
        w_cc: -0.5,
        w_sim: -0.1,
    };
}

pub fn composite_loss(pred: &SaliencyMap, gt: &SaliencyMap, w: LossWeights) -> Result<f64, MetricError> {
    Ok(w.w_kl * kl(gt, pred, KL_EPS)? + w.w_cc * cc(pred, gt)? + w.w_sim * sim(pred, gt)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub mae: f64,
}

pub fn regression_metrics(preds: &[f64], gts: &[f64]) -> Result<RegressionMetrics, MetricError> {
    if preds.len() != gts.len() {
        return Err(MetricError::LengthMismatch(preds.len(), gts.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = preds.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, g) in preds.iter().zip(gts) {
        se += (p - g).powi(2);
        ae += (p - g).abs();
    }
    Ok(RegressionMetrics {
        mse: se / n,
        mae: ae / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Highlight,
    NoHighlight,
    All,
}

/// One row of the evaluation report. Map metrics are `None` when a split has
/// no usable maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Split,
    pub auc: Option<f64>,
    pub nss: Option<f64>,
    pub sim: Option<f64>,
    pub cc: Option<f64>,
    pub kl: Option<f64>,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
}

/// Report CSV: `split,auc,nss,sim,cc,kl,mse,mae`.
pub fn write_report_csv<W: Write>(rows: &[MetricReport], out: W) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| MetricError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| MetricError::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_map(seed: u64, w: u32, h: u32) -> SaliencyMap {
        let mut r = rng::stream(seed, 0);
        SaliencyMap::from_values(w, h, (0..w * h).map(|_| r.random()).collect())
    }

    #[test]
    fn auc_chance_and_perfect() {
        let c = SaliencyMap::from_values(4, 4, vec![0.3; 16]);
        assert!((auc_judd(&c, &[(1, 1), (2, 3)]).unwrap() - 0.5).abs() < 1e-12);
        let m = SaliencyMap::from_values(4, 1, vec![0.1, 0.9, 0.2, 0.8]);
        assert!((auc_judd(&m, &[(1, 0), (3, 0)]).unwrap() - 1.0).abs() < 1e-12);
        // Judd places no ROC point below the lowest fixated value, so the
        // worst ranking still scores (0,0)->(1,0.5)->(1,1) = 0.25.
        assert!((auc_judd(&m, &[(0, 0), (2, 0)]).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(auc_judd(&m, &[]), Err(MetricError::NoFixations));
    }

    fn auc_brute_force(m: &SaliencyMap, pts: &[(u32, u32)]) -> f64 {
        let fixated: Vec<usize> = pts.iter().map(|&(x, y)| (y * m.width() + x) as usize).collect();
        let vals = m.values();
        let mut ths: Vec<f64> = fixated.iter().map(|&k| vals[k]).collect();
        ths.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ths.dedup();
        let mut curve = vec![(0.0, 0.0)];
        for th in ths {
            let tp = fixated.iter().filter(|&&k| vals[k] >= th).count() as f64 / pts.len() as f64;
            let neg: Vec<f64> = (0..vals.len()).filter(|k| !fixated.contains(k)).map(|k| vals[k]).collect();
            let fp = neg.iter().filter(|&&v| v >= th).count() as f64 / neg.len() as f64;
            curve.push((fp, tp));
        }
        curve.push((1.0, 1.0));
        curve.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
    }

    #[test]
    fn auc_matches_brute_force_and_is_rank_based() {
        let m = random_map(4, 20, 10);
        let pts = [(1, 1), (5, 7), (19, 9), (10, 0), (3, 3)];
        let auc = auc_judd(&m, &pts).unwrap();
        assert!((auc - auc_brute_force(&m, &pts)).abs() < 1e-12);
        // Quantized map: many ties between fixated and background pixels.
        let q = SaliencyMap::from_values(20, 10, m.values().iter().map(|v| (v * 4.0).floor()).collect());
        assert!((auc_judd(&q, &pts).unwrap() - auc_brute_force(&q, &pts)).abs() < 1e-12);
        let cubed = SaliencyMap::from_values(20, 10, m.values().iter().map(|v| v.powi(3) + 2.0).collect());
        assert!((auc_judd(&cubed, &pts).unwrap() - auc).abs() < 1e-12);
    }

    #[test]
    fn nss_values() {
        let m = SaliencyMap::from_values(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(nss(&m, &[(2, 0)]).unwrap().abs() < 1e-12);
        // Population sd is sqrt(2); z-score of 4 is 2/sqrt(2).
        assert!((nss(&m, &[(4, 0)]).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let mut v = vec![0.0; 10];
        v[0] = 3.0;
        v[1] = -3.0;
        // mean 0, population variance 18/10; z of 3 = 3/sqrt(1.8)
        let m = SaliencyMap::from_values(10, 1, v);
        assert!((nss(&m, &[(0, 0)]).unwrap() - 3.0 / 1.8f64.sqrt()).abs() < 1e-12);
        let aff = m.scaled(2.5);
        assert!((nss(&aff, &[(0, 0)]).unwrap() - nss(&m, &[(0, 0)]).unwrap()).abs() < 1e-12);
        let flat = SaliencyMap::from_values(3, 1, vec![1.0; 3]);
        assert_eq!(nss(&flat, &[(0, 0)]), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn sim_values() {
        let p = SaliencyMap::from_values(2, 1, vec![1.0, 0.0]);
        let q = SaliencyMap::from_values(2, 1, vec![0.5, 0.5]);
        assert!((sim(&p, &q).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(sim(&p, &p).unwrap(), 1.0);
        let d = SaliencyMap::from_values(2, 1, vec![0.0, 3.0]);
        assert!(sim(&p, &d).unwrap().abs() < 1e-12);
        let z = SaliencyMap::zeros(2, 1);
        assert_eq!(sim(&z, &z), Err(MetricError::BothZero));
        let a = random_map(1, 30, 30);
        let b = random_map(2, 30, 30);
        assert_eq!(sim(&a, &b).unwrap(), sim(&b, &a).unwrap());
        let direct: f64 = {
            let (sa, sb) = (a.sum(), b.sum());
            a.values().iter().zip(b.values()).map(|(x, y)| (x / sa).min(y / sb)).sum()
        };
        assert!((sim(&a, &b).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn cc_values() {
        let a = random_map(3, 100, 100);
        assert_eq!(cc(&a, &a).unwrap(), 1.0);
        let neg = SaliencyMap::from_values(100, 100, a.values().iter().map(|v| 5.0 - v).collect());
        assert!((cc(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        let b = random_map(4, 100, 100);
        assert!(cc(&a, &b).unwrap().abs() < 0.05);
        assert_eq!(cc(&a, &b).unwrap(), cc(&b, &a).unwrap());
    }

    #[test]
    fn kl_values() {
        let a = random_map(5, 10, 10);
        assert!(kl(&a, &a, KL_EPS).unwrap().abs() < 1e-9);
        let gt = SaliencyMap::from_values(2, 1, vec![1.0, 0.0]);
        let pred = SaliencyMap::from_values(2, 1, vec![0.5, 0.5]);
        assert!((kl(&gt, &pred, KL_EPS).unwrap() - 2f64.ln()).abs() < 1e-5);
        let rev = kl(&pred, &gt, KL_EPS).unwrap();
        assert!((rev - kl(&gt, &pred, KL_EPS).unwrap()).abs() > 1.0);
    }

    #[test]
    fn composite_loss_composes() {
        let a = random_map(6, 12, 12);
        assert_eq!(composite_loss(&a, &a, LossWeights::PRETRAIN).unwrap(), -5.0);
        assert!((composite_loss(&a, &a, LossWeights::FINETUNE).unwrap() + 0.6).abs() < 1e-12);
        let b = random_map(7, 12, 12);
        let w = LossWeights::PRETRAIN;
        let manual = 10.0 * kl(&b, &a, KL_EPS).unwrap() - 3.0 * cc(&a, &b).unwrap() - 2.0 * sim(&a, &b).unwrap();
        assert_eq!(composite_loss(&a, &b, w).unwrap(), manual);
    }

    #[test]
    fn regression_values() {
        let r = regression_metrics(&[0.2, 0.4], &[0.2, 0.4]).unwrap();
        assert_eq!((r.mse, r.mae), (0.0, 0.0));
        let r = regression_metrics(&[0.3, 0.5, 0.7], &[0.2, 0.4, 0.6]).unwrap();
        assert!((r.mse - 0.01).abs() < 1e-12 && (r.mae - 0.1).abs() < 1e-12);
        let r = regression_metrics(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!((r.mse, r.mae), (1.0, 1.0));
        assert_eq!(regression_metrics(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn report_csv_header() {
        let row = MetricReport {
            split: Split::NoHighlight,
            auc: Some(0.5),
            nss: None,
            sim: Some(0.25),
            cc: Some(0.1),
            kl: Some(1.0),
            mse: Some(0.01),
            mae: Some(0.1),
        };
        let mut out = Vec::new();
        write_report_csv(&[row], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("split,auc,nss,sim,cc,kl,mse,mae\nno_highlight,0.5,,0.25"));
    }
}
