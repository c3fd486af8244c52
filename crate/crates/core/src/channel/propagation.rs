//! Large-scale propagation: close-in path loss, shadowing and LoS probability.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scenario::ChannelConfig;

/// Free-space loss at the 1 m reference distance for 1 GHz.
pub const CLOSE_IN_INTERCEPT_DB: f64 = 32.4;

static CLAMPED_DISTANCES: AtomicU64 = AtomicU64::new(0);

/// How many path-loss evaluations were clamped to the 1 m reference distance.
pub fn clamped_distance_count() -> u64 {
    CLAMPED_DISTANCES.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModel {
    pub exponent_los: f64,
    pub exponent_nlos: f64,
    pub intercept_db: f64,
    pub shadowing_los_db: f64,
    pub shadowing_nlos_db: f64,
    pub k_factor_db: f64,
    pub clutter_distance_m: f64,
}

impl From<&ChannelConfig> for PathLossModel {
    fn from(c: &ChannelConfig) -> Self {
        Self {
            exponent_los: c.exponent_los,
            exponent_nlos: c.exponent_nlos,
            intercept_db: CLOSE_IN_INTERCEPT_DB,
            shadowing_los_db: c.shadowing_los_db,
            shadowing_nlos_db: c.shadowing_nlos_db,
            k_factor_db: c.k_factor_db,
            clutter_distance_m: c.clutter_distance_m,
        }
    }
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self::from(&ChannelConfig::default())
    }
}

impl PathLossModel {
    pub fn exponent(&self, los: bool) -> f64 {
        if los {
            self.exponent_los
        } else {
            self.exponent_nlos
        }
    }

    pub fn shadowing_sigma_db(&self, los: bool) -> f64 {
        if los {
            self.shadowing_los_db
        } else {
            self.shadowing_nlos_db
        }
    }

    /// Deterministic part of the loss: `32.4 + 20 log10(f_GHz) + 10 n log10(d)`.
    /// Distances below 1 m are clamped.
    pub fn path_loss_db(&self, distance_m: f64, carrier_ghz: f64, los: bool) -> f64 {
        let d = if distance_m < 1.0 {
            CLAMPED_DISTANCES.fetch_add(1, Ordering::Relaxed);
            1.0
        } else {
            distance_m
        };
        self.intercept_db + 20.0 * carrier_ghz.log10() + 10.0 * self.exponent(los) * d.log10()
    }

    pub fn sample_shadowing_db<R: Rng + ?Sized>(&self, rng: &mut R, los: bool) -> f64 {
        let sigma = self.shadowing_sigma_db(los);
        if sigma == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, sigma)
            .expect("sigma validated")
            .sample(rng)
    }

    pub fn los_probability(&self, distance_m: f64) -> f64 {
        los_probability(distance_m, self.clutter_distance_m)
    }
}

/// Indoor-factory style LoS probability `exp(-d / d_clutter)`.
pub fn los_probability(distance_m: f64, clutter_distance_m: f64) -> f64 {
    (-distance_m.max(0.0) / clutter_distance_m)
        .exp()
        .clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_distance_anchor() {
        let m = PathLossModel::default();
        let pl = m.path_loss_db(1.0, 28.0, true);
        assert!((pl - (32.4 + 20.0 * 28f64.log10())).abs() < 1e-12);
    }

    #[test]
    fn decade_slope_for_exponent_two() {
        let m = PathLossModel::default();
        let diff = m.path_loss_db(100.0, 28.0, true) - m.path_loss_db(10.0, 28.0, true);
        assert!((diff - 20.0).abs() < 1e-12);
    }

    #[test]
    fn sub_metre_distances_clamp() {
        let m = PathLossModel::default();
        let before = clamped_distance_count();
        assert_eq!(
            m.path_loss_db(0.2, 28.0, false),
            m.path_loss_db(1.0, 28.0, false)
        );
        assert!(clamped_distance_count() > before);
    }

    #[test]
    fn shadowing_sample_sigma() {
        let m = PathLossModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for los in [true, false] {
            let xs: Vec<f64> = (0..10_000)
                .map(|_| m.sample_shadowing_db(&mut rng, los))
                .collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            let sigma = m.shadowing_sigma_db(los);
            assert!(
                (var.sqrt() - sigma).abs() < 0.05 * sigma,
                "{} vs {sigma}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn los_probability_anchors() {
        assert_eq!(los_probability(0.0, 25.0), 1.0);
        assert!((los_probability(25.0, 25.0) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn los_fraction_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = los_probability(25.0, 25.0);
        let hits = (0..100_000).filter(|_| rng.random::<f64>() < p).count();
        let frac = hits as f64 / 100_000.0;
        assert!((frac - (-1f64).exp()).abs() < 0.01, "{frac}");
    }
}
