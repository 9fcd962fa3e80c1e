use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::util::Rng;

/// Feature-space stand-in for crop augmentation: Gaussian jitter with standard
/// deviation `sigma` on every coordinate, then each coordinate zeroed with
/// probability `dropout_p`.
pub fn aug_image(features: ArrayView2<'_, f64>, rng: &mut Rng, sigma: f64, dropout_p: f64) -> Array2<f64> {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    assert!((0.0..1.0).contains(&dropout_p), "dropout_p must lie in [0, 1)");
    let mut out = features.to_owned();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        out.mapv_inplace(|v| v + normal.sample(rng));
    }
    if dropout_p > 0.0 {
        out.mapv_inplace(|v| if rng.gen::<f64>() < dropout_p { 0.0 } else { v });
    }
    out
}
