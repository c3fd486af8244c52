//! Small-scale fading taps and their per-RB frequency response.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scenario::SUBCARRIERS_PER_RB;

/// Circularly-symmetric complex normal with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Exponential power-delay profile normalised to unit total power.
pub fn exponential_pdp(n_taps: usize, decay_db: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n_taps)
        .map(|k| 10f64.powf(-(k as f64) * decay_db / 10.0))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// Draw a tap vector with unit mean total power.
///
/// LoS links are Rician: a deterministic dominant first tap carrying
/// `K/(K+1)` of the power plus diffuse complex-normal taps following the
/// delay profile. NLoS links are diffuse only.
pub fn small_scale_gain<R: Rng + ?Sized>(
    rng: &mut R,
    los: bool,
    k_factor_db: f64,
    n_taps: usize,
    decay_db: f64,
) -> Vec<Complex64> {
    assert!(n_taps >= 1, "at least one tap");
    let pdp = exponential_pdp(n_taps, decay_db);
    let (specular, diffuse) = if los {
        let k = 10f64.powf(k_factor_db / 10.0);
        (k / (k + 1.0), 1.0 / (k + 1.0))
    } else {
        (0.0, 1.0)
    };
    let mut taps: Vec<Complex64> = pdp
        .iter()
        .map(|p| complex_normal(rng) * (diffuse * p).sqrt())
        .collect();
    taps[0] += Complex64::new(specular.sqrt(), 0.0);
    taps
}

/// Tap spacing that makes the RB-centre grid an exact DFT grid:
/// `1 / (n_rb * 12 * scs)`.
pub fn tap_spacing_s(n_rb: usize, scs_khz: f64) -> f64 {
    1.0 / (n_rb as f64 * SUBCARRIERS_PER_RB as f64 * scs_khz * 1e3)
}

/// Transform of `taps` (spaced by [`tap_spacing_s`]) sampled at the centre
/// frequencies of `n_rb` resource blocks, offsets symmetric around the
/// carrier. With at most `n_rb` taps the per-RB energy satisfies Parseval:
/// `sum |H|^2 = n_rb * sum |tap|^2`.
pub fn frequency_response(taps: &[Complex64], n_rb: usize, scs_khz: f64) -> Vec<Complex64> {
    assert!(!taps.is_empty(), "taps nonempty");
    let rb_hz = SUBCARRIERS_PER_RB as f64 * scs_khz * 1e3;
    let tau = tap_spacing_s(n_rb, scs_khz);
    let centre = (n_rb as f64 - 1.0) / 2.0;
    (0..n_rb)
        .map(|m| {
            let freq = (m as f64 - centre) * rb_hz;
            taps.iter()
                .enumerate()
                .map(|(k, a)| a * Complex64::cis(-2.0 * PI * freq * k as f64 * tau))
                .sum()
        })
        .collect()
}
