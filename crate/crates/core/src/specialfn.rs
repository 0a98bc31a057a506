//! Complete elliptic integral of the first kind and Jacobi elliptic
//! functions for parameter `0 <= m < 1`.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("elliptic parameter m = {0} outside [0, 1)")]
pub struct ParameterError(pub f64);

fn check(m: f64) -> Result<(), ParameterError> {
    if (0.0..1.0).contains(&m) {
        Ok(())
    } else {
        Err(ParameterError(m))
    }
}

const MAX_LEVELS: usize = 40;

/// `K(m) = π / (2 AGM(1, sqrt(1 - m)))`.
pub fn elliptic_k(m: f64) -> Result<f64, ParameterError> {
    check(m)?;
    let (mut a, mut b) = (1.0f64, (1.0 - m).sqrt());
    for _ in 0..MAX_LEVELS {
        if (a - b).abs() <= f64::EPSILON * a {
            break;
        }
        (a, b) = (0.5 * (a + b), (a * b).sqrt());
    }
    Ok(FRAC_PI_2 / a)
}

/// `(sn, cn, dn)(z | m)` by the arithmetic-geometric mean scale followed by
/// descending Landen back-substitution.
pub fn jacobi_sn_cn_dn(z: f64, m: f64) -> Result<(f64, f64, f64), ParameterError> {
    check(m)?;
    if m == 0.0 {
        return Ok((z.sin(), z.cos(), 1.0));
    }
    let mut a = vec![1.0f64];
    let mut c = vec![m.sqrt()];
    let mut b = (1.0 - m).sqrt();
    while c.last().unwrap().abs() > f64::EPSILON && a.len() < MAX_LEVELS {
        let an = *a.last().unwrap();
        a.push(0.5 * (an + b));
        c.push(0.5 * (an - b));
        b = (an * b).sqrt();
    }
    let n = a.len() - 1;
    let mut phi = (1u64 << n) as f64 * a[n] * z;
    for i in (1..=n).rev() {
        phi = 0.5 * (phi + (c[i] / a[i] * phi.sin()).asin());
    }
    let (s, co) = phi.sin_cos();
    // dn > 0 for m < 1; this form stays accurate near the zeros of cn
    let dn = (1.0 - m * s * s).sqrt();
    Ok((s, co, dn))
}

/// `cn(z | m)`.
pub fn jacobi_cn(z: f64, m: f64) -> Result<f64, ParameterError> {
    jacobi_sn_cn_dn(z, m).map(|t| t.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn k_reference_values() {
        assert!((elliptic_k(0.0).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((elliptic_k(0.5).unwrap() - 1.854_074_677_301_372).abs() < 1e-14);
        assert!((elliptic_k(0.9).unwrap() - 2.578_092_113_348_173).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_parameter() {
        assert_eq!(elliptic_k(1.0), Err(ParameterError(1.0)));
        assert!(jacobi_cn(0.3, 1.5).is_err());
        assert!(jacobi_cn(0.3, -0.1).is_err());
    }

    #[test]
    fn quarter_period_zero_of_cn() {
        for m in [0.1, 0.5, 0.9, 0.99] {
            let k = elliptic_k(m).unwrap();
            let (s, c, d) = jacobi_sn_cn_dn(k, m).unwrap();
            assert!(c.abs() < 1e-13, "m={m} cn(K)={c}");
            assert!((s - 1.0).abs() < 1e-13);
            assert!((d - (1.0 - m).sqrt()).abs() < 1e-13);
        }
    }

    #[test]
    fn limit_m_zero_is_trigonometric() {
        for z in [-2.0, 0.3, 5.0] {
            assert!((jacobi_cn(z, 0.0).unwrap() - f64::cos(z)).abs() < 1e-15);
            assert!((jacobi_cn(z, 1e-12).unwrap() - f64::cos(z)).abs() < 1e-11);
        }
    }

    #[test]
    fn reference_value() {
        // cn(0.5 | 0.3), sn(0.5 | 0.3)
        let (s, c, _) = jacobi_sn_cn_dn(0.5, 0.3).unwrap();
        assert!((s - 0.474_215_622_711_820_7).abs() < 1e-13, "{s}");
        assert!((c - 0.880_408_736_426_462_4).abs() < 1e-13, "{c}");
    }

    proptest! {
        #[test]
        fn identities_and_period(z in -20.0f64..20.0, m in 0.0f64..0.99) {
            let (s, c, d) = jacobi_sn_cn_dn(z, m).unwrap();
            prop_assert!((s * s + c * c - 1.0).abs() < 1e-13);
            prop_assert!((d * d + m * s * s - 1.0).abs() < 1e-13);
            let k = elliptic_k(m).unwrap();
            let c4 = jacobi_cn(z + 4.0 * k, m).unwrap();
            prop_assert!((c4 - c).abs() < 1e-11);
            let c2 = jacobi_cn(z + 2.0 * k, m).unwrap();
            prop_assert!((c2 + c).abs() < 1e-11);
        }
    }
}
