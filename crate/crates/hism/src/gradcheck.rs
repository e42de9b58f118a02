//! Analytic gradients of the MSE objective against central finite
//! differences.

use rand::Rng;
use serde::Serialize;

use crate::inputs::StackedInput;
use crate::model::{HismModel, Item, Mode};
use crate::HismError;

/// Denominator floor: below this magnitude both gradients are treated as
/// zero-scale and compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct CoordCheck {
    pub param: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub max_rel_error: f64,
    pub checked: Vec<CoordCheck>,
    /// Coordinates dropped because a perturbation crossed a rectifier or
    /// pooling switch.
    pub skipped: usize,
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Checks `n_coords` parameter coordinates: one from every tensor first
/// (so each layer type is exercised), then uniformly at random. Dropout is
/// off throughout.
pub fn grad_check<R: Rng>(
    model: &HismModel,
    images: &[StackedInput],
    items: &[Item<'_>],
    targets: &[f64],
    eps: f64,
    n_coords: usize,
    rng: &mut R,
) -> Result<GradCheckReport, HismError> {
    let coords = pick_coords(model, n_coords, rng);
    check_coords(model, images, items, targets, eps, &coords, n_coords)
}

/// Candidate coordinates: a generous pool so kinked ones can be replaced.
pub fn pick_coords<R: Rng>(model: &HismModel, n_coords: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut coords: Vec<(usize, usize)> = model
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| (i, rng.random_range(0..p.len())))
        .collect();
    let total: usize = model.param_count();
    let starts: Vec<usize> = model
        .params
        .iter()
        .scan(0, |acc, p| {
            let s = *acc;
            *acc += p.len();
            Some(s)
        })
        .collect();
    while coords.len() < 2 * n_coords + model.params.len() {
        let flat = rng.random_range(0..total);
        let i = starts.partition_point(|&s| s <= flat) - 1;
        coords.push((i, flat - starts[i]));
    }
    coords
}

/// Runs the comparison over `coords` in order until `want` smooth
/// coordinates have been checked.
pub fn check_coords(
    model: &HismModel,
    images: &[StackedInput],
    items: &[Item<'_>],
    targets: &[f64],
    eps: f64,
    coords: &[(usize, usize)],
    want: usize,
) -> Result<GradCheckReport, HismError> {
    let (_, grads) = model.loss_and_grad(images, items, targets, Mode::Eval)?;
    let (_, base_sig) = model.eval_loss(images, items, targets)?;
    let mut probe = model.clone();
    let mut checked = Vec::new();
    let mut skipped = 0;
    for &(i, j) in coords {
        if checked.len() >= want {
            break;
        }
        let orig = model.params[i].data[j];
        probe.params[i].data[j] = orig + eps;
        let (lp, sp) = probe.eval_loss(images, items, targets)?;
        probe.params[i].data[j] = orig - eps;
        let (lm, sm) = probe.eval_loss(images, items, targets)?;
        probe.params[i].data[j] = orig;
        if sp != base_sig || sm != base_sig {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = grads[i][j];
        checked.push(CoordCheck {
            param: model.specs[i].name.clone(),
            offset: j,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric),
        });
    }
    if checked.len() < want {
        return Err(HismError::Shape(format!(
            "only {} smooth coordinates found ({} skipped)",
            checked.len(),
            skipped
        )));
    }
    let max_rel_error = checked.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        eps,
        max_rel_error,
        checked,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(rel_error(1.0, 1.0), 0.0);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((rel_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }
}
