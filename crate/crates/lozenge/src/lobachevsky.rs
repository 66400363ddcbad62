//! The Lobachevsky function and the lozenge surface tension.

use crate::error::{Error, Result};
use std::f64::consts::PI;
use std::sync::OnceLock;

const TERMS: usize = 30;

/// `ζ(2k) / (k (2k+1))` for `k = 1..=TERMS`.
fn clausen_coeffs() -> &'static [f64; TERMS] {
    static C: OnceLock<[f64; TERMS]> = OnceLock::new();
    C.get_or_init(|| {
        let mut c = [0.0; TERMS];
        for (idx, slot) in c.iter_mut().enumerate() {
            let k = idx as i32 + 1;
            let zeta = if k == 1 {
                PI * PI / 6.0
            } else {
                // Direct sum plus Euler-Maclaurin tail.
                let m = 2000.0f64;
                let s: f64 = (1..2000).rev().map(|j| (j as f64).powi(-2 * k)).sum();
                s + m.powi(1 - 2 * k) / (2 * k - 1) as f64 + 0.5 * m.powi(-2 * k)
            };
            *slot = zeta / (k as f64 * (2 * k + 1) as f64);
        }
        c
    })
}

/// Clausen function `Cl₂(x)` for `0 <= x <= π`.
fn clausen_small(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let r = (x / (2.0 * PI)).powi(2);
    let mut pow = 1.0;
    let mut s = 0.0;
    for c in clausen_coeffs() {
        pow *= r;
        s += c * pow;
    }
    x - x * x.ln() + x * s
}

/// `L(θ) = -∫₀^θ ln(2 sin t) dt` for `0 <= θ <= π`, accurate to about
/// `1e-15`. Computed as `Cl₂(2θ)/2` from the Bernoulli series of the
/// Clausen function, folded with `L(π-θ) = -L(θ)`.
pub fn lobachevsky(theta: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::AngleOutOfRange(theta));
    }
    Ok(lobachevsky_unchecked(theta))
}

pub(crate) fn lobachevsky_unchecked(theta: f64) -> f64 {
    if theta <= PI / 2.0 {
        0.5 * clausen_small(2.0 * theta)
    } else {
        -0.5 * clausen_small(2.0 * (PI - theta))
    }
}

/// Local lozenge densities. The order is `(p_up, p_right, p_empty)`, i.e.
/// the slacks of the triangle constraints in [`crate::mesh`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityTriple {
    pub p_a: f64,
    pub p_b: f64,
    pub p_c: f64,
}

impl DensityTriple {
    pub fn new(p_a: f64, p_b: f64, p_c: f64) -> Result<Self> {
        let t = DensityTriple { p_a, p_b, p_c };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.as_array();
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidTriple(format!("{p:?}: entries must lie in [0, 1]")));
        }
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidTriple(format!("{p:?}: entries must sum to 1")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_a, self.p_b, self.p_c]
    }

    /// Triple from height gradients, `p = (∂ₓh + ∂ₜh, -∂ₜh, 1 - ∂ₓh)`.
    pub fn from_gradient(hx: f64, ht: f64) -> Result<Self> {
        DensityTriple::new(hx + ht, -ht, 1.0 - hx)
    }
}

/// `σ(p) = (L(π p_a) + L(π p_b) + L(π p_c)) / π`.
pub fn surface_tension(p: &DensityTriple) -> Result<f64> {
    p.validate()?;
    Ok(sigma(p.as_array()))
}

/// Unchecked surface tension; entries are clamped into `[0, 1]`.
pub(crate) fn sigma(p: [f64; 3]) -> f64 {
    p.iter()
        .map(|&x| lobachevsky_unchecked(PI * x.clamp(0.0, 1.0)))
        .sum::<f64>()
        / PI
}

/// `dσ/dp = -ln(2 sin πp)` along one coordinate.
pub(crate) fn sigma_prime(p: f64) -> f64 {
    -(2.0 * (PI * p).sin()).ln()
}

/// `d²σ/dp² = -π cot πp`.
pub(crate) fn sigma_second(p: f64) -> f64 {
    -PI / (PI * p).tan()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Adaptive Simpson on `-ln(sin t / t)`; the `-ln(2t)` part is exact.
    fn quad_oracle(theta: f64) -> f64 {
        fn g(t: f64) -> f64 {
            if t == 0.0 {
                0.0
            } else {
                -(t.sin() / t).ln()
            }
        }
        fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
            (b - a) / 6.0 * (fa + 4.0 * fm + fb)
        }
        #[allow(clippy::too_many_arguments)]
        fn rec(a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (g(lm), g(rm));
            let left = simpson(a, m, fa, flm, fm);
            let right = simpson(m, b, fm, frm, fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let (fa, fm, fb) = (g(0.0), g(theta / 2.0), g(theta));
        let whole = simpson(0.0, theta, fa, fm, fb);
        let smooth = rec(0.0, theta, fa, fm, fb, whole, 1e-14, 40);
        let log_part = if theta == 0.0 { 0.0 } else { -(theta * (2.0 * theta).ln() - theta) };
        log_part + smooth
    }

    #[test]
    fn trivial_values() {
        assert_eq!(lobachevsky(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(lobachevsky(PI).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lobachevsky(PI / 2.0).unwrap(), 0.0, epsilon = 1e-15);
        assert!(lobachevsky(-0.1).is_err());
        assert!(lobachevsky(3.2).is_err());
    }

    #[test]
    fn matches_quadrature() {
        for k in 1..=24 {
            let theta = 2.8 * k as f64 / 24.0;
            assert_abs_diff_eq!(lobachevsky(theta).unwrap(), quad_oracle(theta), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(lobachevsky(PI / 3.0).unwrap(), quad_oracle(PI / 3.0), epsilon = 1e-12);
        // Frozen from the oracle.
        assert_abs_diff_eq!(lobachevsky(PI / 3.0).unwrap(), 0.338_313_868_803_218, epsilon = 1e-12);
    }

    #[test]
    fn surface_tension_values() {
        let frozen = DensityTriple::new(1.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(surface_tension(&frozen).unwrap(), 0.0, epsilon = 1e-15);
        let third = 1.0 / 3.0;
        let even = DensityTriple { p_a: third, p_b: third, p_c: third };
        assert_abs_diff_eq!(surface_tension(&even).unwrap(), 3.0 * quad_oracle(PI / 3.0) / PI, epsilon = 1e-12);
        assert_abs_diff_eq!(surface_tension(&even).unwrap(), 0.323_065_947_2, epsilon = 1e-10);
        assert!(DensityTriple::new(0.5, 0.6, -0.1).is_err());
        assert!(DensityTriple::new(0.5, 0.6, 0.1).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for &p in &[0.05, 0.2, 0.5, 0.7, 0.93] {
            let h = 1e-5;
            let f = |x: f64| lobachevsky_unchecked(PI * x) / PI;
            let fd = (f(p + h) - f(p - h)) / (2.0 * h);
            assert_abs_diff_eq!(sigma_prime(p), fd, epsilon = 1e-8);
            let fd2 = (sigma_prime(p + h) - sigma_prime(p - h)) / (2.0 * h);
            assert_abs_diff_eq!(sigma_second(p), fd2, epsilon = 1e-5);
        }
    }

    fn triple() -> impl Strategy<Value = [f64; 3]> {
        (0.0f64..1.0, 0.0f64..1.0).prop_map(|(u, v)| {
            let (a, b) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
            [a, b, 1.0 - a - b]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn sigma_is_concave(p in triple(), q in triple()) {
            let mid = [0, 1, 2].map(|k| 0.5 * (p[k] + q[k]));
            prop_assert!(sigma(mid) >= 0.5 * (sigma(p) + sigma(q)) - 1e-10);
        }

        #[test]
        fn sigma_is_symmetric(p in triple()) {
            let s = sigma(p);
            prop_assert!((s - sigma([p[1], p[0], p[2]])).abs() < 1e-14);
            prop_assert!((s - sigma([p[2], p[1], p[0]])).abs() < 1e-14);
        }
    }
}
