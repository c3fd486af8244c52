//! Half-wavelength array steering vectors.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::topology::{Point3, RisPanel};

/// Horizontal axis of every AP's uniform linear array.
pub const AP_ARRAY_AXIS: Point3 = Point3::new(1.0, 0.0, 0.0);

/// ULA response `exp(j pi t cos(angle to axis))` for `n` elements.
pub fn ula_response(n: usize, direction: Point3, axis: Point3) -> Vec<Complex64> {
    let u = direction.dot(axis);
    (0..n).map(|t| Complex64::cis(PI * t as f64 * u)).collect()
}

/// UPA response for a `rows x cols` panel, row-major (row = vertical index).
pub fn upa_response(
    rows: usize,
    cols: usize,
    direction: Point3,
    panel: &RisPanel,
) -> Vec<Complex64> {
    let along = direction.dot(panel.tangent);
    let up = direction.z;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Complex64::cis(PI * (c as f64 * along + r as f64 * up)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadside_ula_is_all_ones() {
        let a = ula_response(32, Point3::new(0.0, 1.0, 0.0), AP_ARRAY_AXIS);
        assert!(a.iter().all(|v| *v == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn endfire_ula_alternates() {
        let a = ula_response(4, AP_ARRAY_AXIS, AP_ARRAY_AXIS);
        for (t, v) in a.iter().enumerate() {
            let expected = if t % 2 == 0 { 1.0 } else { -1.0 };
            assert!((v.re - expected).abs() < 1e-12 && v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn upa_entries_have_unit_modulus() {
        let panel = RisPanel {
            position: Point3::new(0.0, 0.0, 4.0),
            normal: Point3::new(0.0, 1.0, 0.0),
            tangent: Point3::new(1.0, 0.0, 0.0),
        };
        let d = Point3::new(0.3, 0.8, -0.2)
            .direction_to(Point3::default())
            .scale(-1.0);
        let a = upa_response(10, 20, d, &panel);
        assert_eq!(a.len(), 200);
        assert!(a.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }
}
