use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Feature-space stand-ins for image augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    /// Adds N(0, strength²) to every entry.
    GaussianNoise,
    /// Zeroes each entry with probability `strength`, rescaling survivors by
    /// `1 / (1 - strength)`.
    FeatureDropout,
}

impl std::str::FromStr for AugmentMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gaussian_noise" | "noise" => Ok(AugmentMode::GaussianNoise),
            "feature_dropout" | "dropout" => Ok(AugmentMode::FeatureDropout),
            _ => Err(format!("unknown augment mode `{s}`")),
        }
    }
}

pub fn augment(
    features: ArrayView2<'_, f64>,
    mode: AugmentMode,
    strength: f64,
    rng: &mut RngState,
) -> Result<Array2<f64>> {
    if !(strength >= 0.0) {
        return Err(Error::config("augment.strength", "must be >= 0"));
    }
    if strength == 0.0 {
        return Ok(features.to_owned());
    }
    match mode {
        AugmentMode::GaussianNoise => Ok(features.mapv(|v| v + strength * rng.normal())),
        AugmentMode::FeatureDropout => {
            if strength >= 1.0 {
                return Err(Error::config(
                    "augment.strength",
                    "feature dropout probability must be < 1",
                ));
            }
            let keep = 1.0 / (1.0 - strength);
            Ok(features.mapv(|v| if rng.uniform() < strength { 0.0 } else { v * keep }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_strength_is_identity() {
        let x = array![[1.0, -2.0], [3.5, 0.25]];
        let y = augment(x.view(), AugmentMode::GaussianNoise, 0.0, &mut RngState::new(1)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn noise_variance_matches_strength() {
        let x = Array2::<f64>::zeros((1000, 10));
        let y = augment(x.view(), AugmentMode::GaussianNoise, 0.1, &mut RngState::new(11)).unwrap();
        let n = y.len() as f64;
        let mean = y.sum() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.008..=0.012).contains(&var), "variance {var}");
    }

    #[test]
    fn dropout_values_forced_by_rescale() {
        let x = Array2::<f64>::ones((1, 4));
        for seed in 0..20 {
            let y = augment(x.view(), AugmentMode::FeatureDropout, 0.5, &mut RngState::new(seed))
                .unwrap();
            assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
        }
    }

    #[test]
    fn dropout_rejects_certain_drop() {
        let x = Array2::<f64>::ones((1, 4));
        let err = augment(x.view(), AugmentMode::FeatureDropout, 1.0, &mut RngState::new(0));
        assert!(err.unwrap_err().is_config());
    }

    #[test]
    fn deterministic() {
        let x = Array2::<f64>::ones((5, 3));
        let a = augment(x.view(), AugmentMode::FeatureDropout, 0.3, &mut RngState::new(9)).unwrap();
        let b = augment(x.view(), AugmentMode::FeatureDropout, 0.3, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
    }
}
