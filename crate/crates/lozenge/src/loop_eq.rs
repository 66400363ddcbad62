//! Dynamical discrete loop equations for one step of the drifted walk.
//!
//! For a configuration `x` and weights `(φ_±, ψ±, κ)` the step law is
//! `P(e) ∝ a_e`, and the quantities
//!
//! ```text
//! 𝒜(z) = Σ a_e Π (z - x_i - e_i/n)/(z - x_i)
//! 𝒢(z) = Π (z - x_i)/(z - x_i - 1/n),     ℬ(z) = 𝒢 φ_+ + φ_-
//! 𝒞(z) = Σ a_e [Π (z - x_i + (1-e_i)/n)/(z - x_i) exp(Σ e_i κ(x_i,z)/n²) φ⁺(z)
//!              + Π (z - x_i - e_i/n)/(z - x_i) φ⁻(z)]
//! ```
//!
//! are evaluated by summing over every jump vector. The contour-integral
//! predictions for `E[∫ dμ_n/(z-x)]` are computed by trapezoidal quadrature
//! on circles.

use crate::domain::ParticleConfiguration;
use crate::error::{Error, Result};
use crate::rational::RatStr;
use crate::sampler::{for_each_jump, keyed_rng, log_weight, DEFAULT_BRUTE_FORCE_CAP};
use crate::weights::DriftedWalkWeights;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::f64::consts::PI;

/// Agreement required between successive node doublings.
pub const QUADRATURE_TOL: f64 = 1e-10;
const MIN_NODES: usize = 64;
const PREDICTION_NODES: usize = 256;
const MAX_NODES: usize = 1 << 16;
const MAX_PREDICTION_NODES: usize = 8192;

/// Neumaier-compensated complex sum.
#[derive(Clone, Copy, Default)]
struct Accum {
    re: f64,
    im: f64,
    cre: f64,
    cim: f64,
}

impl Accum {
    fn add(&mut self, v: Complex64) {
        fn step(s: &mut f64, c: &mut f64, v: f64) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
        step(&mut self.re, &mut self.cre, v.re);
        step(&mut self.im, &mut self.cim, v.im);
    }

    fn value(&self) -> Complex64 {
        Complex64::new(self.re + self.cre, self.im + self.cim)
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// A circle `|w - centre| = radius` with `centre` on the real axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub centre: f64,
    pub radius: f64,
}

impl Circle {
    /// Midpoint nodes `w_k` and weights `dw_k / (2πi)`.
    fn nodes(&self, m: usize) -> impl Iterator<Item = (Complex64, Complex64)> + '_ {
        (0..m).map(move |k| {
            let th = 2.0 * PI * (k as f64 + 0.5) / m as f64;
            let e = Complex64::from_polar(1.0, th);
            (self.centre + self.radius * e, self.radius * e / m as f64)
        })
    }

    fn contains(&self, z: Complex64) -> bool {
        (z - self.centre).norm() < self.radius
    }

    /// `(1/2πi) ∮ f(w) dw`, doubling the node count until two successive
    /// values agree to [`QUADRATURE_TOL`].
    pub fn integrate(&self, f: impl Fn(Complex64) -> Complex64) -> Result<Complex64> {
        let rule = |m: usize| {
            let mut acc = Accum::default();
            for (w, dw) in self.nodes(m) {
                acc.add(f(w) * dw);
            }
            acc.value()
        };
        doubling(MIN_NODES, MAX_NODES, rule)
    }
}

fn doubling(start: usize, cap: usize, mut rule: impl FnMut(usize) -> Complex64) -> Result<Complex64> {
    let mut m = start;
    let mut prev = rule(m);
    while m < cap {
        m *= 2;
        let next = rule(m);
        if (next - prev).norm() <= QUADRATURE_TOL * next.norm().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Convergence(format!("contour quadrature did not settle at {cap} nodes")))
}

/// One configuration with its step law, ready for evaluation of the loop
/// quantities.
#[derive(Clone, Debug)]
pub struct LoopQuantities {
    x: Vec<f64>,
    n: f64,
    weights: DriftedWalkWeights,
    /// `(e, a_e / max a_e)` over jump vectors with nonzero weight.
    terms: Vec<(Vec<u8>, f64)>,
    log_top: f64,
    mass: f64,
}

/// Values returned by [`brute_quantities`]; `a` and `c` carry the factor `Z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BruteValues {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub g: Complex64,
    pub z: f64,
}

impl LoopQuantities {
    pub fn new(c: &ParticleConfiguration, w: &DriftedWalkWeights, n: i64) -> Result<Self> {
        w.validate()?;
        let (level, pos) = c.to_lattice(n)?;
        if pos.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidConfiguration("positions are not strictly increasing".into()));
        }
        if pos.len() > DEFAULT_BRUTE_FORCE_CAP {
            return Err(Error::Capacity { level, states: 1 << pos.len().min(62), cap: 1 << DEFAULT_BRUTE_FORCE_CAP });
        }
        let nf = n as f64;
        let x: Vec<f64> = pos.iter().map(|&p| p as f64 / nf).collect();
        let mut logs = Vec::new();
        for_each_jump(x.len(), |e| {
            if let Some(la) = log_weight(&x, e, w, nf) {
                logs.push((e.to_vec(), la));
            }
        });
        if logs.is_empty() {
            return Err(Error::Stuck);
        }
        let log_top = logs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
        let terms: Vec<(Vec<u8>, f64)> = logs.into_iter().map(|(e, l)| (e, (l - log_top).exp())).collect();
        let mut acc = Accum::default();
        terms.iter().for_each(|(_, a)| acc.add(Complex64::new(*a, 0.0)));
        Ok(LoopQuantities { x, n: nf, weights: w.clone(), terms, log_top, mass: acc.value().re })
    }

    pub fn positions(&self) -> &[f64] {
        &self.x
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn m(&self) -> usize {
        self.x.len()
    }

    pub fn weights(&self) -> &DriftedWalkWeights {
        &self.weights
    }

    pub fn ln_partition(&self) -> f64 {
        self.log_top + self.mass.ln()
    }

    /// `Z = Σ_e a_e`.
    pub fn partition(&self) -> f64 {
        self.ln_partition().exp()
    }

    /// Step probabilities `(e, P(e))`.
    pub fn probabilities(&self) -> impl Iterator<Item = (&[u8], f64)> + '_ {
        self.terms.iter().map(move |(e, a)| (e.as_slice(), a / self.mass))
    }

    fn expect(&self, f: impl Fn(&[u8]) -> Complex64) -> Complex64 {
        let mut acc = Accum::default();
        for (e, a) in &self.terms {
            acc.add(f(e) * *a);
        }
        acc.value() / self.mass
    }

    fn check_point(&self, z: Complex64) -> Result<()> {
        let tiny = 1e-12;
        if self.x.iter().any(|&x| (z - x).norm() < tiny || (z - x - 1.0 / self.n).norm() < tiny) {
            return Err(Error::PoleCollision(format!("{z}")));
        }
        Ok(())
    }

    fn g_raw(&self, z: Complex64) -> Complex64 {
        let h = 1.0 / self.n;
        self.x.iter().map(|&x| (z - x) / (z - x - h)).product()
    }

    fn dlog_g(&self, z: Complex64) -> Complex64 {
        let h = 1.0 / self.n;
        self.x.iter().map(|&x| 1.0 / (z - x) - 1.0 / (z - x - h)).sum()
    }

    fn b_raw(&self, z: Complex64) -> Complex64 {
        self.g_raw(z) * self.weights.phi_plus.eval(z) + self.weights.phi_minus.eval(z)
    }

    fn dlog_b(&self, z: Complex64) -> Complex64 {
        let w = &self.weights;
        let g = self.g_raw(z);
        let db = g * (self.dlog_g(z) * w.phi_plus.eval(z) + w.phi_plus.deriv(z)) + w.phi_minus.deriv(z);
        db / self.b_raw(z)
    }

    pub fn g(&self, z: Complex64) -> Result<Complex64> {
        self.check_point(z)?;
        Ok(self.g_raw(z))
    }

    pub fn b(&self, z: Complex64) -> Result<Complex64> {
        self.check_point(z)?;
        Ok(self.b_raw(z))
    }

    /// `𝒜(z) / Z`.
    pub fn a_normalized(&self, z: Complex64) -> Result<Complex64> {
        self.check_point(z)?;
        Ok(self.a_raw(z))
    }

    fn a_raw(&self, z: Complex64) -> Complex64 {
        let h = 1.0 / self.n;
        self.expect(|e| {
            self.x
                .iter()
                .zip(e)
                .filter(|(_, &ei)| ei == 1)
                .map(|(&x, _)| (z - x - h) / (z - x))
                .product()
        })
    }

    /// `𝒞(z) / Z`.
    pub fn c_normalized(&self, z: Complex64) -> Result<Complex64> {
        self.check_point(z)?;
        Ok(self.c_raw(z))
    }

    fn c_raw(&self, z: Complex64) -> Complex64 {
        let h = 1.0 / self.n;
        let w = &self.weights;
        let plus = w.full_plus(z, self.n);
        let minus = w.full_minus(z, self.n);
        let kz: Vec<Complex64> = if w.kappa.is_zero() {
            vec![c(0.0); self.x.len()]
        } else {
            self.x.iter().map(|&x| w.kappa.eval(c(x), z)).collect()
        };
        self.expect(|e| {
            let mut up = c(1.0);
            let mut down = c(1.0);
            let mut k = c(0.0);
            for (i, (&x, &ei)) in self.x.iter().zip(e).enumerate() {
                if ei == 1 {
                    down *= (z - x - h) / (z - x);
                    k += kz[i];
                } else {
                    up *= (z - x + h) / (z - x);
                }
            }
            up * (k / (self.n * self.n)).exp() * plus + down * minus
        })
    }

    /// `E[∫ dμ_n/(z-x)] = E[Σ e_i (1/(z-x_i-1/n) - 1/(z-x_i))]`.
    pub fn stieltjes_increment(&self, z: Complex64) -> Result<Complex64> {
        self.check_point(z)?;
        Ok(self.expect(|e| self.increment(e, z)))
    }

    fn increment(&self, e: &[u8], z: Complex64) -> Complex64 {
        let h = 1.0 / self.n;
        self.x
            .iter()
            .zip(e)
            .filter(|(_, &ei)| ei == 1)
            .map(|(&x, _)| 1.0 / (z - x - h) - 1.0 / (z - x))
            .sum()
    }

    /// `E₀(z) = n (𝒞/(𝒜ℬ) - 1)`.
    pub fn e0(&self, z: Complex64) -> Result<Complex64> {
        self.check_point(z)?;
        Ok(self.n * (self.c_raw(z) / (self.a_raw(z) * self.b_raw(z)) - 1.0))
    }

    /// The two contours used by the predictions: radii `1.5 R` and `1.2 R`
    /// around the midpoint of `[min x, max x + 1/n]`, with
    /// `R = max(half-width, 1/2)`.
    pub fn default_contours(&self) -> (Circle, Circle) {
        self.contours(1.5, 1.2)
    }

    pub fn contours(&self, outer: f64, inner: f64) -> (Circle, Circle) {
        let (lo, hi) = match (self.x.first(), self.x.last()) {
            (Some(&a), Some(&b)) => (a, b + 1.0 / self.n),
            _ => (0.0, 0.0),
        };
        let centre = 0.5 * (lo + hi);
        let r = (0.5 * (hi - lo)).max(0.5);
        (Circle { centre, radius: outer * r }, Circle { centre, radius: inner * r })
    }
}

/// Exact evaluation of `(𝒜, ℬ, 𝒞, 𝒢, Z)` at `z`.
pub fn brute_quantities(
    c: &ParticleConfiguration,
    w: &DriftedWalkWeights,
    n: i64,
    z: Complex64,
) -> Result<BruteValues> {
    let q = LoopQuantities::new(c, w, n)?;
    let zz = q.partition();
    Ok(BruteValues {
        a: q.a_normalized(z)? * zz,
        b: q.b(z)?,
        c: q.c_normalized(z)? * zz,
        g: q.g(z)?,
        z: zz,
    })
}

/// Residues of `𝒞/Z` at each particle, from circles of the given radius
/// (default `1/(4n)`). Pole candidates are the particle positions; a circle
/// passing within `1/(8n)` of one is rejected.
pub fn analyticity_check(q: &LoopQuantities, radius: Option<f64>) -> Result<Vec<f64>> {
    let n = q.n();
    let r = radius.unwrap_or(0.25 / n);
    let margin = 0.125 / n;
    q.positions()
        .iter()
        .map(|&xk| {
            if let Some(&p) = q.positions().iter().find(|&&p| ((p - xk).abs() - r).abs() < margin) {
                return Err(Error::Contour(format!("circle of radius {r} around {xk} passes near {p}")));
            }
            let circle = Circle { centre: xk, radius: r };
            Ok(circle.integrate(|z| q.c_raw(z))?.norm())
        })
        .collect()
}

/// Precomputed contour data for one node count.
struct Grid<'a> {
    q: &'a LoopQuantities,
    inner: Vec<(Complex64, Complex64, Complex64)>,
    outer: Vec<OuterNode>,
    mass: Complex64,
    winding: Complex64,
}

struct OuterNode {
    w: Complex64,
    dw: Complex64,
    dlog_b: Complex64,
    e1_fixed: Complex64,
    /// `𝒢 φ_+ / ℬ`.
    gp_over_b: Complex64,
}

impl<'a> Grid<'a> {
    fn new(q: &'a LoopQuantities, outer: Circle, inner: Circle, m: usize) -> Result<Self> {
        let w = &q.weights;
        let inner_nodes: Vec<_> = inner.nodes(m).map(|(v, dv)| (v, dv, q.dlog_b(v))).collect();
        let mut mass = Accum::default();
        for &(v, dv, d) in &inner_nodes {
            mass.add(v * d * dv);
        }
        let mut scale = 0.0f64;
        let mut smallest = f64::INFINITY;
        let mut winding = Accum::default();
        let mut outer_nodes = Vec::with_capacity(m);
        for (wz, dw) in outer.nodes(m) {
            let b = q.b_raw(wz);
            scale = scale.max(b.norm());
            smallest = smallest.min(b.norm());
            let dlog_b = q.dlog_b(wz);
            winding.add(dlog_b * dw);
            let g = q.g_raw(wz);
            let pp = w.phi_plus.eval(wz);
            let pm = w.phi_minus.eval(wz);
            let mut s = Accum::default();
            let mut kt = Accum::default();
            for &(v, dv, d) in &inner_nodes {
                s.add(d / (v - wz) * dv);
                if !w.kappa.is_zero() {
                    kt.add(-w.kappa.antiderivative(v, wz) * d * dv);
                }
            }
            let gp = g * pp;
            let e1_fixed = (pm * w.psi_minus.eval(wz)
                + gp * q.dlog_g(wz)
                + gp * (w.psi_plus.eval(wz) + s.value() + kt.value()))
                / b;
            outer_nodes.push(OuterNode { w: wz, dw, dlog_b, e1_fixed, gp_over_b: gp / b });
        }
        if !(smallest > 1e-10 * scale) {
            return Err(Error::Contour(format!("B nearly vanishes on the circle of radius {}", outer.radius)));
        }
        Ok(Grid { q, inner: inner_nodes, outer: outer_nodes, mass: mass.value(), winding: winding.value() })
    }

    fn first(&self, z: Complex64) -> Complex64 {
        let mut acc = Accum::default();
        for o in &self.outer {
            acc.add(o.dlog_b / (o.w - z) * o.dw);
        }
        acc.value()
    }

    fn correction(&self, z: Complex64) -> Complex64 {
        let mut acc = Accum::default();
        for o in &self.outer {
            let e1 = o.e1_fixed + o.gp_over_b / (z - o.w);
            acc.add(e1 / ((o.w - z) * (o.w - z)) * o.dw);
        }
        acc.value() / self.q.n
    }

    fn covariance(&self, z: Complex64, z2: Complex64) -> Complex64 {
        let mut acc = Accum::default();
        for o in &self.outer {
            let d = (z - o.w) * (z - o.w) * (z2 - o.w) * (z2 - o.w);
            acc.add(o.gp_over_b / d * o.dw);
        }
        acc.value()
    }

    /// `S(w) = (1/2πi)∮ ∂ln ℬ(v)/(v-w) dv` and the κ term at an arbitrary
    /// point outside the inner circle.
    fn s_and_kappa(&self, wz: Complex64) -> (Complex64, Complex64) {
        let k = &self.q.weights.kappa;
        let mut s = Accum::default();
        let mut kt = Accum::default();
        for &(v, dv, d) in &self.inner {
            s.add(d / (v - wz) * dv);
            kt.add(-k.antiderivative(v, wz) * d * dv);
        }
        (s.value(), kt.value())
    }
}

/// Contour-integral predictions at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    /// `(1/2πi)∮ (∂ℬ/ℬ)/(w-z) dw`.
    pub first: Complex64,
    /// `first + (1/n)(1/2πi)∮ E₁(w)/(w-z)² dw`.
    pub second: Complex64,
    /// Brute-force `E[∫ dμ_n/(z-x)]`.
    pub brute: Complex64,
    /// `(1/2πi)∮ ∂ln ℬ`; zero when the cancellation assumption holds.
    pub winding: Complex64,
    pub nodes: usize,
}

/// Numerical check of the cancellation assumption on `ℬ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CancelCheck {
    pub winding: f64,
    /// `|F(2ζ)| / |F(ζ)|` for the first-order integral `F` at a far point;
    /// `1/4` under `1/z²` decay, `1/2` under `1/z`.
    pub decay_ratio: f64,
    pub holds: bool,
}

fn check_outside(outer: &Circle, z: Complex64) -> Result<()> {
    if outer.contains(z) || ((z - outer.centre).norm() - outer.radius).abs() < 1e-3 * outer.radius {
        return Err(Error::Contour(format!("{z} is not outside the circle of radius {}", outer.radius)));
    }
    Ok(())
}

fn check_circles(outer: &Circle, inner: &Circle) -> Result<()> {
    if !(inner.radius > 0.0 && inner.radius < outer.radius) {
        return Err(Error::Contour("inner circle must lie strictly inside the outer one".into()));
    }
    Ok(())
}

/// Runs `eval` on grids of increasing size until successive values agree.
fn with_grids(
    q: &LoopQuantities,
    outer: Circle,
    inner: Circle,
    mut eval: impl FnMut(&Grid) -> Vec<Complex64>,
) -> Result<(Vec<Complex64>, usize, Complex64, Complex64)> {
    check_circles(&outer, &inner)?;
    let mut m = PREDICTION_NODES;
    let grid = Grid::new(q, outer, inner, m)?;
    let mut prev = eval(&grid);
    while m < MAX_PREDICTION_NODES {
        m *= 2;
        let grid = Grid::new(q, outer, inner, m)?;
        let next = eval(&grid);
        let settled = prev
            .iter()
            .zip(&next)
            .all(|(a, b)| (a - b).norm() <= QUADRATURE_TOL * b.norm().max(1.0));
        if settled {
            return Ok((next, m, grid.winding, grid.mass));
        }
        prev = next;
    }
    Err(Error::Convergence(format!("prediction quadrature did not settle at {MAX_PREDICTION_NODES} nodes")))
}

/// First-order prediction at `z` on the default contours.
pub fn first_order_prediction(q: &LoopQuantities, z: Complex64) -> Result<Prediction> {
    let (outer, inner) = q.default_contours();
    first_order_prediction_on(q, z, outer, inner)
}

pub fn first_order_prediction_on(q: &LoopQuantities, z: Complex64, outer: Circle, inner: Circle) -> Result<Prediction> {
    check_outside(&outer, z)?;
    let brute = q.stieltjes_increment(z)?;
    let (v, nodes, winding, _) = with_grids(q, outer, inner, |g| vec![g.first(z)])?;
    Ok(Prediction { first: v[0], second: v[0], brute, winding, nodes })
}

/// Second-order prediction at `z` on the default contours. `δβ*` enters only
/// through its Stieltjes transform `S` on the outer circle, computed as a
/// contour integral over the inner one.
pub fn second_order_prediction(q: &LoopQuantities, z: Complex64) -> Result<Prediction> {
    let (outer, inner) = q.default_contours();
    second_order_prediction_on(q, z, outer, inner)
}

pub fn second_order_prediction_on(q: &LoopQuantities, z: Complex64, outer: Circle, inner: Circle) -> Result<Prediction> {
    check_outside(&outer, z)?;
    let brute = q.stieltjes_increment(z)?;
    let (v, nodes, winding, _) = with_grids(q, outer, inner, |g| {
        let f = g.first(z);
        vec![f, f + g.correction(z)]
    })?;
    Ok(Prediction { first: v[0], second: v[1], brute, winding, nodes })
}

/// Pieces of `E₁(w)` at a point `w` between the two default contours.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct E1Terms {
    /// `E₁(w)` for the observation point `z`.
    pub total: Complex64,
    /// `𝒢 φ_+ / ℬ`.
    pub gp_over_b: Complex64,
    /// `(1/2πi)∮ ∂ln ℬ(v)/(v-w) dv`.
    pub stieltjes: Complex64,
    /// `-(1/2πi)∮ K(v,w) ∂ln ℬ(v) dv`, `K` the antiderivative of `κ` in `v`.
    pub kappa: Complex64,
    /// `(1/2πi)∮ v ∂ln ℬ(v) dv`, the total mass of `δβ*`.
    pub mass: Complex64,
}

pub fn e1_terms(q: &LoopQuantities, w: Complex64, z: Complex64, nodes: usize) -> Result<E1Terms> {
    let (outer, inner) = q.default_contours();
    if inner.contains(w) {
        return Err(Error::Contour(format!("{w} lies inside the inner circle")));
    }
    let grid = Grid::new(q, outer, inner, nodes)?;
    let (s, kt) = grid.s_and_kappa(w);
    let ww = q.weights();
    let g = q.g_raw(w);
    let b = q.b_raw(w);
    let gp = g * ww.phi_plus.eval(w);
    let total = (ww.phi_minus.eval(w) * ww.psi_minus.eval(w)
        + gp * q.dlog_g(w)
        + gp * (ww.psi_plus.eval(w) + 1.0 / (z - w) + s + kt))
        / b;
    Ok(E1Terms { total, gp_over_b: gp / b, stieltjes: s, kappa: kt, mass: grid.mass })
}

/// Winding of `ℬ` on the default outer circle and the far-field decay of the
/// first-order integral. Failures are reported, not raised.
pub fn cancel_check(q: &LoopQuantities) -> Result<CancelCheck> {
    let (outer, inner) = q.default_contours();
    let far = Complex64::new(outer.centre, 50.0 * outer.radius);
    let (v, _, winding, _) = with_grids(q, outer, inner, |g| vec![g.first(far), g.first(2.0 * far - outer.centre)])?;
    let decay_ratio = if v[0].norm() > 0.0 { v[1].norm() / v[0].norm() } else { 0.0 };
    let winding = winding.norm();
    Ok(CancelCheck { winding, decay_ratio, holds: winding < 1e-8 })
}

/// `(1/2πi)∮ [f/(f+1)] (z-w)⁻² (z'-w)⁻² dw` with `f = 𝒢 φ_+/φ_-`.
pub fn martingale_cov_prediction(q: &LoopQuantities, z: Complex64, z2: Complex64) -> Result<Complex64> {
    let (outer, inner) = q.default_contours();
    check_outside(&outer, z)?;
    check_outside(&outer, z2)?;
    let (v, ..) = with_grids(q, outer, inner, |g| vec![g.covariance(z, z2)])?;
    Ok(v[0])
}

/// Exact `n·Cov(ΔM(z), ΔM(z'))` under the step law, where
/// `ΔM(z) = Σ e_i (1/(z-x_i-1/n) - 1/(z-x_i)) - E[·]`.
pub fn martingale_cov_exact(q: &LoopQuantities, z: Complex64, z2: Complex64) -> Result<Complex64> {
    q.check_point(z)?;
    q.check_point(z2)?;
    let m1 = q.expect(|e| q.increment(e, z));
    let m2 = q.expect(|e| q.increment(e, z2));
    let mixed = q.expect(|e| (q.increment(e, z) - m1) * (q.increment(e, z2) - m2));
    Ok(q.n * mixed)
}

/// Monte Carlo estimate of a complex covariance with standard errors of
/// the real and imaginary parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovEstimate {
    pub value: Complex64,
    pub sigma_re: f64,
    pub sigma_im: f64,
}

impl CovEstimate {
    /// Largest deviation from `target` in units of the standard errors.
    pub fn z_score(&self, target: Complex64) -> f64 {
        let d = self.value - target;
        // A component with no spread (z' = z̄ makes the sample exactly
        // real) is compared up to rounding.
        let floor = 1e-12 * target.norm().max(self.value.norm());
        let score = |dev: f64, sigma: f64| if dev.abs() <= floor { 0.0 } else { dev.abs() / sigma };
        score(d.re, self.sigma_re).max(score(d.im, self.sigma_im))
    }
}

/// Empirical `n·Cov(ΔM(z), ΔM(z'))` from `samples` independent steps drawn
/// from the exact step law.
pub fn martingale_cov_empirical(
    q: &LoopQuantities,
    pairs: &[(Complex64, Complex64)],
    samples: usize,
    seed: u64,
) -> Result<Vec<CovEstimate>> {
    if samples < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    for &(z, z2) in pairs {
        q.check_point(z)?;
        q.check_point(z2)?;
    }
    let probs: Vec<(&[u8], f64)> = q.probabilities().collect();
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for (_, p) in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let mut rng = keyed_rng(seed, 0x4c4f4f50, 0);
    let draws: Vec<usize> = (0..samples)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * acc;
            cumulative.partition_point(|&c| c <= u).min(probs.len() - 1)
        })
        .collect();
    let sn = q.n.sqrt();
    let nf = samples as f64;
    Ok(pairs
        .iter()
        .map(|&(z, z2)| {
            let inc1: Vec<Complex64> = probs.iter().map(|(e, _)| sn * q.increment(e, z)).collect();
            let inc2: Vec<Complex64> = probs.iter().map(|(e, _)| sn * q.increment(e, z2)).collect();
            let mean1 = draws.iter().map(|&k| inc1[k]).sum::<Complex64>() / nf;
            let mean2 = draws.iter().map(|&k| inc2[k]).sum::<Complex64>() / nf;
            let prods: Vec<Complex64> = draws.iter().map(|&k| (inc1[k] - mean1) * (inc2[k] - mean2)).collect();
            let value = prods.iter().sum::<Complex64>() / (nf - 1.0);
            let var_re = prods.iter().map(|p| (p.re - value.re).powi(2)).sum::<f64>() / (nf - 1.0);
            let var_im = prods.iter().map(|p| (p.im - value.im).powi(2)).sum::<f64>() / (nf - 1.0);
            CovEstimate { value, sigma_re: (var_re / nf).sqrt(), sigma_im: (var_im / nf).sqrt() }
        })
        .collect())
}

/// Particles at `start, start + gap/n, …` below `end`, one block per
/// interval; the same profile is realized at every `n` divisible by the
/// denominators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleProfile {
    #[serde(default = "zero_time")]
    pub t: RatStr,
    pub blocks: Vec<ProfileBlock>,
}

fn zero_time() -> RatStr {
    RatStr(crate::rational::Rat::from_integer(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileBlock {
    pub start: RatStr,
    pub end: RatStr,
    pub gap: i64,
}

impl ParticleProfile {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: ParticleProfile = serde_json::from_str(text)?;
        if p.blocks.iter().any(|b| b.gap < 1) {
            return Err(Error::InvalidInput("gap must be a positive integer".into()));
        }
        Ok(p)
    }

    pub fn at(&self, n: i64) -> Result<ParticleConfiguration> {
        use crate::rational::{from_lattice, to_lattice};
        let mut pos = Vec::new();
        for b in &self.blocks {
            if b.gap < 1 {
                return Err(Error::InvalidInput("gap must be a positive integer".into()));
            }
            let s = to_lattice(&b.start.0, n)
                .ok_or_else(|| Error::InvalidConfiguration(format!("block start {} is not on the 1/{n} grid", b.start)))?;
            let e = to_lattice(&b.end.0, n)
                .ok_or_else(|| Error::InvalidConfiguration(format!("block end {} is not on the 1/{n} grid", b.end)))?;
            pos.extend((s..e).step_by(b.gap as usize));
        }
        let t = to_lattice(&self.t.0, n)
            .ok_or_else(|| Error::InvalidConfiguration(format!("time {} is not on the 1/{n} grid", self.t)))?;
        if pos.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidConfiguration("profile blocks overlap".into()));
        }
        Ok(ParticleConfiguration::new(from_lattice(t, n), pos.into_iter().map(|p| from_lattice(p, n)).collect()))
    }
}

/// Least-squares decay rate of `err ∝ n^{-rate}` with a 95% interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub stderr: f64,
    pub ci95: [f64; 2],
}

pub fn fit_rate(ns: &[f64], errs: &[f64]) -> Result<RateFit> {
    if ns.len() < 3 || ns.len() != errs.len() {
        return Err(Error::InvalidInput("rate fits need at least three values of n".into()));
    }
    if errs.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidInput("errors must be positive for a log-log fit".into()));
    }
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let dof = k - 2.0;
    let stderr = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .inverse_cdf(0.975);
    let rate = -slope;
    Ok(RateFit { rate, stderr, ci95: [rate - t * stderr, rate + t * stderr] })
}

/// One refinement level of an [`ExpansionReport`]. Complex values are
/// `[re, im]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionRow {
    pub n: i64,
    pub m: usize,
    pub brute: Vec<[f64; 2]>,
    pub first: Vec<[f64; 2]>,
    pub second: Vec<[f64; 2]>,
    pub err_first: f64,
    pub err_second: f64,
    pub winding: f64,
    /// Largest change of the second-order value when the contours are
    /// moved to radii `1.35 R` and `1.25 R`.
    pub contour_shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub z_grid: Vec<[f64; 2]>,
    pub rows: Vec<ExpansionRow>,
    pub rate_first: RateFit,
    pub rate_second: RateFit,
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

/// Brute force against both predictions over `z_grid` for each `n`; errors
/// are maxima over the grid.
pub fn expansion_report(
    profile: &ParticleProfile,
    w: &DriftedWalkWeights,
    ns: &[i64],
    z_grid: &[Complex64],
) -> Result<ExpansionReport> {
    if z_grid.is_empty() {
        return Err(Error::InvalidInput("empty z grid".into()));
    }
    let rows = ns
        .par_iter()
        .map(|&n| {
            let q = LoopQuantities::new(&profile.at(n)?, w, n)?;
            let preds = z_grid.iter().map(|&z| second_order_prediction(&q, z)).collect::<Result<Vec<_>>>()?;
            let (outer, inner) = q.contours(1.35, 1.25);
            let mut contour_shift = 0.0f64;
            for (&z, p) in z_grid.iter().zip(&preds) {
                let alt = second_order_prediction_on(&q, z, outer, inner)?;
                contour_shift = contour_shift.max((alt.second - p.second).norm());
            }
            Ok(ExpansionRow {
                n,
                m: q.m(),
                brute: preds.iter().map(|p| pair(p.brute)).collect(),
                first: preds.iter().map(|p| pair(p.first)).collect(),
                second: preds.iter().map(|p| pair(p.second)).collect(),
                err_first: preds.iter().map(|p| (p.brute - p.first).norm()).fold(0.0, f64::max),
                err_second: preds.iter().map(|p| (p.brute - p.second).norm()).fold(0.0, f64::max),
                winding: preds.iter().map(|p| p.winding.norm()).fold(0.0, f64::max),
                contour_shift,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let nf: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let e1: Vec<f64> = rows.iter().map(|r| r.err_first).collect();
    let e2: Vec<f64> = rows.iter().map(|r| r.err_second).collect();
    Ok(ExpansionReport {
        z_grid: z_grid.iter().copied().map(pair).collect(),
        rate_first: fit_rate(&nf, &e1)?,
        rate_second: fit_rate(&nf, &e2)?,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{AnalyticFn, Kappa, Poly};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn config(n: i64, pos: &[i64]) -> ParticleConfiguration {
        ParticleConfiguration::from_lattice(n, 0, pos)
    }

    fn z(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn poly_weights() -> DriftedWalkWeights {
        DriftedWalkWeights {
            phi_plus: AnalyticFn::poly(Poly(vec![2.0, -0.5, 0.3])),
            phi_minus: AnalyticFn::poly(Poly(vec![1.0, 0.4])),
            psi_plus: AnalyticFn::poly(Poly(vec![0.2, 0.1])),
            psi_minus: AnalyticFn::zero(),
            kappa: Kappa(vec![vec![0.0, 0.0], vec![0.0, 1.0]]),
        }
    }

    #[test]
    fn trivial_values() {
        let w = DriftedWalkWeights::trivial();
        let empty = brute_quantities(&config(4, &[]), &w, 4, z(0.3, 0.7)).unwrap();
        assert_eq!(empty.g, c(1.0));
        assert_abs_diff_eq!((empty.a - empty.z).norm(), 0.0, epsilon = 1e-15);
        let one = brute_quantities(&config(4, &[0]), &w, 4, c(1.0)).unwrap();
        assert_abs_diff_eq!((one.g - 4.0 / 3.0).norm(), 0.0, epsilon = 1e-15);
        assert!(matches!(
            brute_quantities(&config(4, &[0]), &w, 4, c(0.25)),
            Err(Error::PoleCollision(_))
        ));
        let many: Vec<i64> = (0..21).map(|i| 2 * i).collect();
        assert!(matches!(LoopQuantities::new(&config(64, &many), &w, 64), Err(Error::Capacity { .. })));
    }

    #[test]
    fn two_particle_enumeration() {
        // Four outcomes written out by hand.
        let n = 5.0;
        let (x1, x2) = (0.2, 0.4);
        let w = poly_weights();
        let pp = |x: f64| w.full_plus(c(x), n).re;
        let pm = |x: f64| w.full_minus(c(x), n).re;
        let k = (x1 * x2) / (n * n);
        let a = [
            (pm(x1) * pm(x2), [0, 0]),
            (pp(x1) * pm(x2) * (x2 - x1 - 1.0 / n) / (x2 - x1), [1, 0]),
            (pm(x1) * pp(x2) * (x2 + 1.0 / n - x1) / (x2 - x1), [0, 1]),
            (pp(x1) * pp(x2) * k.exp(), [1, 1]),
        ];
        let zz: f64 = a.iter().map(|t| t.0).sum();
        let zp = z(0.9, 0.35);
        let expect: Complex64 = a
            .iter()
            .map(|(p, e)| {
                let f1 = if e[0] == 1 { (zp - x1 - 1.0 / n) / (zp - x1) } else { c(1.0) };
                let f2 = if e[1] == 1 { (zp - x2 - 1.0 / n) / (zp - x2) } else { c(1.0) };
                p / zz * f1 * f2
            })
            .sum();
        let q = LoopQuantities::new(&config(5, &[1, 2]), &w, 5).unwrap();
        assert_abs_diff_eq!((q.a_normalized(zp).unwrap() - expect).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q.partition(), zz, epsilon = 1e-12 * zz);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn g_is_a_product_of_ratios(re in -2.0f64..3.0, im in 0.1f64..2.0, sign in proptest::bool::ANY) {
            let q = LoopQuantities::new(&config(8, &[0, 1, 3, 6, 7]), &DriftedWalkWeights::trivial(), 8).unwrap();
            let zp = z(re, if sign { im } else { -im });
            let logs: Complex64 = q.positions().iter().map(|&x| ((zp - x) / (zp - x - 0.125)).ln()).sum();
            prop_assert!((q.g(zp).unwrap() - logs.exp()).norm() <= 1e-12);
        }
    }

    #[test]
    fn single_trivial_particle_is_analytic() {
        let q = LoopQuantities::new(&config(8, &[3]), &DriftedWalkWeights::trivial(), 8).unwrap();
        let r = analyticity_check(&q, None).unwrap();
        assert!(r[0] <= 1e-12, "{r:?}");
    }

    #[test]
    fn polynomial_weights_with_interaction_are_analytic() {
        let q = LoopQuantities::new(&config(6, &[0, 1, 4]), &poly_weights(), 6).unwrap();
        let r = analyticity_check(&q, None).unwrap();
        assert!(r.iter().all(|&v| v <= 1e-10), "{r:?}");
    }

    #[test]
    fn injected_pole_is_detected() {
        let n = 8.0;
        let p = 0.375 + 1.0 / (16.0 * n);
        let eps = 0.05 / n;
        let mut w = DriftedWalkWeights::trivial();
        // φ_+ = 1 + ε/(z - p) = (z - p + ε)/(z - p).
        w.phi_plus = AnalyticFn::rational(Poly(vec![eps - p, 1.0]), Poly(vec![-p, 1.0]));
        let q = LoopQuantities::new(&config(8, &[0, 3, 5]), &w, 8).unwrap();
        let r = analyticity_check(&q, None).unwrap();
        assert!(r[1] > 1e-3, "{r:?}");
    }

    #[test]
    fn circle_near_a_neighbour_is_rejected() {
        let q = LoopQuantities::new(&config(8, &[0, 1]), &DriftedWalkWeights::trivial(), 8).unwrap();
        assert!(matches!(analyticity_check(&q, Some(1.0 / 8.0)), Err(Error::Contour(_))));
    }

    #[test]
    fn e0_stays_bounded() {
        let w = DriftedWalkWeights::hexagon_drift(2.0, -1.0, 1.0).with_kappa(Kappa(vec![vec![0.0, 0.0], vec![0.0, 0.3]]));
        let zp = z(0.6, 0.8);
        let vals: Vec<f64> = [8i64, 16, 32]
            .iter()
            .map(|&n| {
                let pos: Vec<i64> = (0..n / 4).map(|i| 2 * i).collect();
                LoopQuantities::new(&config(n, &pos), &w, n).unwrap().e0(zp).unwrap().norm()
            })
            .collect();
        assert!(vals.iter().all(|&v| v < 5.0), "{vals:?}");
        assert!(vals[2] < 1.5 * vals[0], "{vals:?}");
    }

    #[test]
    fn far_field_decays_like_inverse_square() {
        let n = 16;
        let pos: Vec<i64> = (0..6).map(|i| 2 * i).collect();
        let q = LoopQuantities::new(&config(n, &pos), &DriftedWalkWeights::hexagon_drift(2.0, -1.0, 1.0), n).unwrap();
        let far = z(0.3, 300.0);
        let p = first_order_prediction(&q, far).unwrap();
        let mass = q.expect(|e| c(e.iter().map(|&v| v as f64).sum::<f64>())).re / n as f64;
        let scaled_brute = p.brute * far * far;
        let scaled_pred = p.first * far * far;
        assert_abs_diff_eq!((scaled_brute - mass).norm(), 0.0, epsilon = 0.01 * mass);
        assert_abs_diff_eq!((scaled_pred - scaled_brute).norm(), 0.0, epsilon = 2.0 / n as f64);
        let cc = cancel_check(&q).unwrap();
        assert!(cc.holds && (cc.decay_ratio - 0.25).abs() < 0.01, "{cc:?}");
    }

    #[test]
    fn constant_psi_shifts_e1_linearly() {
        let n = 12;
        let pos = [0i64, 2, 3, 7];
        let base = DriftedWalkWeights::hexagon_drift(2.0, -1.0, 1.0);
        let mut shifted = base.clone();
        let psi = 0.7;
        shifted.psi_plus = AnalyticFn::constant(psi);
        let mut base = base;
        base.psi_plus = AnalyticFn::zero();
        let w = z(0.4, 0.75);
        let zp = z(0.5, 1.4);
        let q0 = LoopQuantities::new(&config(n, &pos), &base, n).unwrap();
        let q1 = LoopQuantities::new(&config(n, &pos), &shifted, n).unwrap();
        let t0 = e1_terms(&q0, w, zp, 512).unwrap();
        let t1 = e1_terms(&q1, w, zp, 512).unwrap();
        assert_abs_diff_eq!((t1.total - t0.total - t0.gp_over_b * psi).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_kappa_term_is_mass() {
        let n = 12;
        let cst = 0.5;
        let w = DriftedWalkWeights::hexagon_drift(2.0, -1.0, 1.0).with_kappa(Kappa::constant(cst));
        let q = LoopQuantities::new(&config(n, &[0, 2, 3, 7]), &w, n).unwrap();
        let t = e1_terms(&q, z(0.4, 0.75), z(0.5, 1.4), 512).unwrap();
        assert_abs_diff_eq!((t.kappa + cst * t.mass).norm(), 0.0, epsilon = 1e-12);
        // Without κ the remaining pieces are unchanged.
        let q0 = LoopQuantities::new(&config(n, &[0, 2, 3, 7]), &DriftedWalkWeights::hexagon_drift(2.0, -1.0, 1.0), n)
            .unwrap();
        let t0 = e1_terms(&q0, z(0.4, 0.75), z(0.5, 1.4), 512).unwrap();
        assert_abs_diff_eq!((t.total - t0.total + t.gp_over_b * cst * t.mass).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn covariance_at_conjugate_points_is_real() {
        let q = LoopQuantities::new(&config(16, &[0, 3, 4, 9]), &poly_weights(), 16).unwrap();
        let zp = z(0.4, 1.1);
        let v = martingale_cov_prediction(&q, zp, zp.conj()).unwrap();
        assert!(v.im.abs() <= 1e-12 * v.norm().max(1e-300), "{v}");
        assert!(v.re > 0.0);
    }

    #[test]
    fn single_particle_variance_is_bernoulli() {
        let n = 10;
        let q = LoopQuantities::new(&config(n, &[4]), &DriftedWalkWeights::trivial(), n).unwrap();
        let zp = z(0.9, 0.6);
        // Two outcomes with probability 1/2 each.
        let d = 1.0 / (zp - 0.5) - 1.0 / (zp - 0.4);
        let var = n as f64 * 0.25 * d * d.conj();
        let est = martingale_cov_empirical(&q, &[(zp, zp.conj())], 100_000, 3).unwrap()[0];
        assert!(est.z_score(var) < 4.0, "{est:?} vs {var}");
        let exact = martingale_cov_exact(&q, zp, zp.conj()).unwrap();
        assert_abs_diff_eq!((exact - var).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn rate_fit_recovers_power() {
        let ns = [8.0, 16.0, 32.0];
        let errs: Vec<f64> = ns.iter().map(|n: &f64| 3.0 * n.powf(-1.7)).collect();
        let fit = fit_rate(&ns, &errs).unwrap();
        assert_abs_diff_eq!(fit.rate, 1.7, epsilon = 1e-12);
        assert!(fit.ci95[0] <= fit.rate && fit.rate <= fit.ci95[1]);
        assert!(fit_rate(&ns[..2], &errs[..2]).is_err());
    }

    #[test]
    fn profile_realization() {
        let p = ParticleProfile::from_json(r#"{"blocks":[{"start":"0","end":"1","gap":2}]}"#).unwrap();
        let c8 = p.at(8).unwrap();
        assert_eq!(c8.to_lattice(8).unwrap().1, vec![0, 2, 4, 6]);
        assert!(p.at(3).is_ok());
        let bad = ParticleProfile::from_json(r#"{"blocks":[{"start":"1/3","end":"1","gap":1}]}"#).unwrap();
        assert!(bad.at(8).is_err());
        assert!(ParticleProfile::from_json(r#"{"blocks":[{"start":"0","end":"1","gap":0}]}"#).is_err());
    }
}
