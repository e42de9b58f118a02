//! Analytic gradients versus central differences for every temporal variant.

use attnlab_core::rng;
use attnlab_hism::gradcheck::{check_coords, pick_coords};
use attnlab_hism::{grad_check, HismModel, Item, ModelConfig, StackedInput, TemporalInput, Variant};
use rand::Rng;

fn model(variant: Variant) -> HismModel {
    let cfg = ModelConfig {
        variant,
        image_size: 16,
        ..Default::default()
    };
    HismModel::new(cfg, &mut rng::stream(11, variant.tag() as u64)).unwrap()
}

fn inputs(seed: u64) -> (Vec<StackedInput>, Vec<TemporalInput>, Vec<f64>) {
    let mut r = rng::stream(seed, 1);
    let images = (0..2)
        .map(|_| StackedInput {
            size: 16,
            channels: 4,
            data: (0..4 * 256).map(|_| r.random::<f64>()).collect(),
        })
        .collect();
    let temporal = [20, 45]
        .iter()
        .map(|&pad| TemporalInput {
            v: (0..60).map(|k| if k < pad { 0.0 } else if k > 50 { 1.0 } else { -1.0 }).collect(),
            c: (0..60).map(|k| if k < pad { 0.0 } else { r.random::<f64>() }).collect(),
        })
        .collect();
    (images, temporal, vec![0.9, 0.05])
}

#[test]
fn every_variant_matches_finite_differences() {
    for variant in Variant::ALL {
        let m = model(variant);
        let (ims, tins, y) = inputs(3);
        let items: Vec<Item> = tins.iter().enumerate().map(|(i, t)| Item { image: i, temporal: t }).collect();
        let rep = grad_check(&m, &ims, &items, &y, 1e-5, 200, &mut rng::stream(5, variant.tag() as u64)).unwrap();
        assert_eq!(rep.checked.len(), 200);
        assert!(rep.max_rel_error < 1e-4, "{variant}: {}", rep.max_rel_error);
        // Every parameter tensor contributes at least one coordinate.
        for spec in &m.specs {
            assert!(rep.checked.iter().any(|c| c.param == spec.name) || rep.skipped > 0, "{}", spec.name);
        }
    }
}

#[test]
fn smaller_step_reduces_error() {
    let m = model(Variant::TranEncTask);
    let (ims, tins, y) = inputs(4);
    let items: Vec<Item> = tins.iter().enumerate().map(|(i, t)| Item { image: i, temporal: t }).collect();
    let coords = pick_coords(&m, 200, &mut rng::stream(6, 0));
    let coarse = check_coords(&m, &ims, &items, &y, 1e-4, &coords, 200).unwrap();
    let fine = check_coords(&m, &ims, &items, &y, 1e-5, &coords, 200).unwrap();
    // Compare on coordinates present in both runs whose gradient is large
    // enough that rounding noise is negligible.
    let mut worse_coarse = 0.0f64;
    let mut worse_fine = 0.0f64;
    for c in &coarse.checked {
        if c.analytic.abs() < 1e-3 {
            continue;
        }
        if let Some(f) = fine.checked.iter().find(|f| f.param == c.param && f.offset == c.offset) {
            worse_coarse = worse_coarse.max(c.rel_error);
            worse_fine = worse_fine.max(f.rel_error);
        }
    }
    assert!(worse_fine < worse_coarse, "{worse_fine} !< {worse_coarse}");
}
