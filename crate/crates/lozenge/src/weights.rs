//! Analytic weights for the drifted walk.
//!
//! A transition from `x` with jump vector `e` has weight
//! `V(x+e/n)/V(x) · Π φ⁺(x_i)^{e_i} φ⁻(x_i)^{1-e_i} · exp(Σ_{i<j} e_i e_j κ(x_i,x_j)/n²)`
//! where `φ± = φ_± exp(ψ±/n)`.

use crate::error::{Error, Result};
use crate::rational::{rat_to_f64, RatStr};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Real-coefficient polynomial, lowest degree first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.0.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn deriv(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect())
    }

    fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

/// `scale · exp(E(z)) · P(z) / Q(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticFn {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub exp: Poly,
    #[serde(default = "unit_poly")]
    pub num: Poly,
    #[serde(default = "unit_poly")]
    pub den: Poly,
}

fn one() -> f64 {
    1.0
}

fn unit_poly() -> Poly {
    Poly::constant(1.0)
}

impl AnalyticFn {
    pub fn constant(c: f64) -> Self {
        AnalyticFn { scale: c, exp: Poly::default(), num: unit_poly(), den: unit_poly() }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn poly(p: Poly) -> Self {
        AnalyticFn { scale: 1.0, exp: Poly::default(), num: p, den: unit_poly() }
    }

    pub fn rational(num: Poly, den: Poly) -> Self {
        AnalyticFn { scale: 1.0, exp: Poly::default(), num, den }
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.scale * self.exp.eval(z).exp() * self.num.eval(z) / self.den.eval(z)
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        self.eval(Complex64::new(x, 0.0)).re
    }

    pub fn deriv(&self, z: Complex64) -> Complex64 {
        let p = self.num.eval(z);
        let q = self.den.eval(z);
        let e = self.exp.eval(z).exp();
        let dp = self.num.deriv().eval(z);
        let dq = self.den.deriv().eval(z);
        let de = self.exp.deriv().eval(z);
        self.scale * e * (de * p / q + dp / q - p * dq / (q * q))
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.scale.is_finite()
            && self.exp.is_finite()
            && self.num.is_finite()
            && self.den.is_finite()
            && self.den.0.iter().any(|&c| c != 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("{name}: non-finite coefficient or zero denominator")))
        }
    }
}

/// Symmetric polynomial `κ(x, y) = Σ c_ij x^i y^j`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Kappa(pub Vec<Vec<f64>>);

impl Kappa {
    pub fn constant(c: f64) -> Self {
        Kappa(vec![vec![c]])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|&c| c == 0.0)
    }

    pub fn eval(&self, x: Complex64, y: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut xi = Complex64::new(1.0, 0.0);
        for row in &self.0 {
            acc += xi * Poly(row.clone()).eval(y);
            xi *= x;
        }
        acc
    }

    /// Antiderivative in the first argument, vanishing at `v = 0`.
    pub fn antiderivative(&self, v: Complex64, w: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut vi = v;
        for (i, row) in self.0.iter().enumerate() {
            acc += vi / (i as f64 + 1.0) * Poly(row.clone()).eval(w);
            vi *= v;
        }
        acc
    }

    fn validate(&self) -> Result<()> {
        let get = |i: usize, j: usize| self.0.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0);
        let dim = self.0.iter().map(Vec::len).chain([self.0.len()]).max().unwrap_or(0);
        for i in 0..dim {
            for j in 0..dim {
                let c = get(i, j);
                if !c.is_finite() {
                    return Err(Error::InvalidInput("kappa: non-finite coefficient".into()));
                }
                if c != get(j, i) {
                    return Err(Error::InvalidInput("kappa must be symmetric".into()));
                }
            }
        }
        Ok(())
    }
}

/// Weight data `(φ_+, φ_-, ψ⁺, ψ⁻, κ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftedWalkWeights {
    pub phi_plus: AnalyticFn,
    pub phi_minus: AnalyticFn,
    pub psi_plus: AnalyticFn,
    pub psi_minus: AnalyticFn,
    pub kappa: Kappa,
}

impl DriftedWalkWeights {
    /// `φ± ≡ 1`, `ψ± ≡ 0`, `κ ≡ 0`: the free nonintersecting walk.
    pub fn trivial() -> Self {
        DriftedWalkWeights {
            phi_plus: AnalyticFn::constant(1.0),
            phi_minus: AnalyticFn::constant(1.0),
            psi_plus: AnalyticFn::zero(),
            psi_minus: AnalyticFn::zero(),
            kappa: Kappa::default(),
        }
    }

    /// `φ_+ = λ(B - z)`, `φ_- = z - A`, `ψ⁺ = -1/(B - z)`, so that
    /// `φ⁺ = λ(B - z - 1/n) + O(1/n²)`, the shape of the uniform hexagon
    /// transition.
    pub fn hexagon_drift(b: f64, a: f64, lambda: f64) -> Self {
        DriftedWalkWeights {
            phi_plus: AnalyticFn { scale: lambda, ..AnalyticFn::poly(Poly(vec![b, -1.0])) },
            phi_minus: AnalyticFn::poly(Poly(vec![-a, 1.0])),
            psi_plus: AnalyticFn::rational(Poly(vec![-1.0]), Poly(vec![b, -1.0])),
            psi_minus: AnalyticFn::zero(),
            kappa: Kappa::default(),
        }
    }

    /// Exact uniform transition of the `a × b × c` hexagon (sides given in
    /// real units) at time `t`, with `ψ± ≡ 0`.
    pub fn hexagon_exact(a: f64, b: f64, c: f64, t: f64, n: i64) -> Self {
        let top = a + c - 1.0 / n as f64;
        DriftedWalkWeights {
            phi_plus: AnalyticFn::poly(Poly(vec![top, -1.0])),
            phi_minus: AnalyticFn::poly(Poly(vec![b - t, 1.0])),
            psi_plus: AnalyticFn::zero(),
            psi_minus: AnalyticFn::zero(),
            kappa: Kappa::default(),
        }
    }

    pub fn with_kappa(mut self, kappa: Kappa) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.phi_plus.validate("phi_plus")?;
        self.phi_minus.validate("phi_minus")?;
        self.psi_plus.validate("psi_plus")?;
        self.psi_minus.validate("psi_minus")?;
        self.kappa.validate()
    }

    /// Full `φ⁺(z) = φ_+(z) exp(ψ⁺(z)/n)`.
    pub fn full_plus(&self, z: Complex64, n: f64) -> Complex64 {
        self.phi_plus.eval(z) * (self.psi_plus.eval(z) / n).exp()
    }

    pub fn full_minus(&self, z: Complex64, n: f64) -> Complex64 {
        self.phi_minus.eval(z) * (self.psi_minus.eval(z) / n).exp()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text)?;
        let w = file.into_weights();
        w.validate()?;
        Ok(w)
    }
}

/// Weights file: a named preset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightsFile {
    Polynomial {
        phi_plus: AnalyticFn,
        phi_minus: AnalyticFn,
        #[serde(default = "AnalyticFn::zero")]
        psi_plus: AnalyticFn,
        #[serde(default = "AnalyticFn::zero")]
        psi_minus: AnalyticFn,
        #[serde(default)]
        kappa: Kappa,
    },
    HexagonDrift {
        #[serde(rename = "B")]
        b: RatStr,
        #[serde(rename = "A")]
        a: RatStr,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default)]
        kappa: Kappa,
    },
}

impl WeightsFile {
    pub fn into_weights(self) -> DriftedWalkWeights {
        match self {
            WeightsFile::Polynomial { phi_plus, phi_minus, psi_plus, psi_minus, kappa } => {
                DriftedWalkWeights { phi_plus, phi_minus, psi_plus, psi_minus, kappa }
            }
            WeightsFile::HexagonDrift { b, a, lambda, kappa } => {
                DriftedWalkWeights::hexagon_drift(rat_to_f64(&b.0), rat_to_f64(&a.0), lambda).with_kappa(kappa)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn derivative_matches_difference() {
        let f = AnalyticFn {
            scale: 0.7,
            exp: Poly(vec![0.0, 0.3, -0.1]),
            num: Poly(vec![1.0, 2.0, 0.5]),
            den: Poly(vec![3.0, -1.0]),
        };
        let z = Complex64::new(0.4, 0.2);
        let h = 1e-6;
        let fd = (f.eval(z + h) - f.eval(z - h)) / (2.0 * h);
        assert_relative_eq!((f.deriv(z) - fd).norm(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn kappa_antiderivative() {
        let k = Kappa(vec![vec![0.5, 1.0], vec![1.0, 2.0]]);
        let (v, w) = (Complex64::new(0.3, 0.1), Complex64::new(-0.2, 0.4));
        let h = 1e-6;
        let fd = (k.antiderivative(v + h, w) - k.antiderivative(v - h, w)) / (2.0 * h);
        assert_relative_eq!((fd - k.eval(v, w)).norm(), 0.0, epsilon = 1e-8);
        assert!(Kappa(vec![vec![0.0, 1.0], vec![2.0]]).validate().is_err());
    }

    #[test]
    fn parse_presets() {
        let w = DriftedWalkWeights::from_json(r#"{"preset":"hexagon_drift","B":"2","A":"-1"}"#).unwrap();
        assert_eq!(w, DriftedWalkWeights::hexagon_drift(2.0, -1.0, 1.0));
        let w = DriftedWalkWeights::from_json(
            r#"{"preset":"polynomial","phi_plus":{"num":[1,1]},"phi_minus":{"scale":2},"kappa":[[0,1],[1,0]]}"#,
        )
        .unwrap();
        assert_relative_eq!(w.phi_plus.eval_real(2.0), 3.0);
        assert_relative_eq!(w.phi_minus.eval_real(5.0), 2.0);
        assert_relative_eq!(w.kappa.eval(Complex64::new(2.0, 0.0), Complex64::new(3.0, 0.0)).re, 5.0);
        assert!(DriftedWalkWeights::from_json(r#"{"preset":"nope"}"#).is_err());
        assert!(DriftedWalkWeights::from_json(r#"{"preset":"polynomial","phi_plus":{"den":[0]},"phi_minus":{}}"#).is_err());
    }
}
