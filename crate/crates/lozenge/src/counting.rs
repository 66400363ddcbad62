//! Exact tiling counts.
//!
//! `N_t(x)` is the number of walk families from configuration `x` at time
//! `t` to the packed configuration at the top; it satisfies
//! `N_t(x) = Σ_e N_{t+1/n}(x + e/n)` with creation applied at horizontal
//! edge times. The table is filled backwards from the top.

use crate::domain::{create_lattice, lattice_ok, uncreate_lattice, Domain, Iv, ParticleConfiguration, Side};
use crate::error::{Error, Result};
use num_bigint::{BigInt, BigUint};
use num_traits::{One, ToPrimitive, Zero};
use std::collections::HashMap;

pub const DEFAULT_STATE_CAP: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilingCount {
    pub value: BigUint,
    pub domain_hash: String,
    pub start: ParticleConfiguration,
}

/// Per-level constraints of a walk family, in lattice units. Level `j`
/// runs from 0 to `steps`.
#[derive(Clone, Debug)]
pub(crate) struct WalkModel {
    pub steps: i64,
    /// `lower[j]` for `j < steps`.
    pub lower: Vec<Vec<Iv>>,
    /// `upper[j]` for `j ≥ 1`; `upper[0]` is unused.
    pub upper: Vec<Vec<Iv>>,
    /// Positions created at level `j` (applied after arriving there).
    pub created: Vec<Vec<i64>>,
    pub terminal: Vec<i64>,
    pub base: i64,
    pub span: i64,
}

impl WalkModel {
    pub fn from_domain(d: &Domain) -> Result<Self> {
        d.require_one_upper_edge()?;
        let steps = d.steps();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut created = Vec::new();
        let (mut lo, mut hi) = (i64::MAX, i64::MIN);
        for j in 0..=steps {
            let g = d.level(j);
            for iv in g.lower.iter().chain(&g.upper) {
                lo = lo.min(iv.lo);
                hi = hi.max(iv.hi);
            }
            lower.push(g.lower.clone());
            upper.push(g.upper.clone());
            created.push(g.created.clone());
        }
        Ok(WalkModel {
            steps,
            lower,
            upper,
            created,
            terminal: d.terminal_lattice()?,
            base: lo,
            span: (hi - lo).max(1),
        })
    }

    /// Paths in an unconstrained strip from `start` to `end`. Positions
    /// never decrease, so the window `[start_0, end_last]` loses nothing.
    pub fn free_strip(start: &[i64], end: &[i64], steps: i64) -> Self {
        let m = start.len() as i64;
        let lo = start.first().copied().unwrap_or(0).min(end.first().copied().unwrap_or(0));
        let hi = start.last().copied().unwrap_or(0).max(end.last().copied().unwrap_or(0)) + 1;
        let iv = vec![Iv { lo, hi, mass: m }];
        let levels = (steps + 1) as usize;
        WalkModel {
            steps,
            lower: vec![iv.clone(); levels],
            upper: vec![iv; levels],
            created: vec![Vec::new(); levels],
            terminal: end.to_vec(),
            base: lo,
            span: (hi - lo).max(1),
        }
    }

    pub fn key(&self, pos: &[i64]) -> Key {
        let words = (self.span as usize).div_ceil(64);
        let mut k = vec![0u64; words];
        for &p in pos {
            let b = (p - self.base) as usize;
            k[b / 64] |= 1 << (b % 64);
        }
        Key(k.into_boxed_slice())
    }

    pub fn unkey(&self, key: &Key) -> Vec<i64> {
        let mut out = Vec::new();
        for (w, &word) in key.0.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as i64;
                out.push(self.base + 64 * w as i64 + b);
                bits &= bits - 1;
            }
        }
        out
    }

    /// The configuration after arriving at level `j` with positions `y`,
    /// or `None` if it is not admissible there.
    pub fn arrive(&self, j: i64, y: &[i64]) -> Option<Vec<i64>> {
        if !lattice_ok(&self.upper[j as usize], y) {
            return None;
        }
        if j == self.steps {
            return (y == self.terminal.as_slice()).then(|| y.to_vec());
        }
        let z = create_lattice(y, &self.created[j as usize]).ok()?;
        lattice_ok(&self.lower[j as usize], &z).then_some(z)
    }

    /// Calls `f` with every jump vector `e` and resulting `y = x + e` that
    /// respects ordering and the upper slice at `j + 1`.
    pub fn for_each_successor(&self, j: i64, x: &[i64], mut f: impl FnMut(&[u8], &[i64])) {
        let ivs = &self.upper[(j + 1) as usize];
        let m = x.len();
        let mut e = vec![0u8; m];
        let mut y = vec![0i64; m];
        fn rec(
            i: usize,
            x: &[i64],
            ivs: &[Iv],
            e: &mut [u8],
            y: &mut [i64],
            f: &mut dyn FnMut(&[u8], &[i64]),
        ) {
            if i == x.len() {
                if lattice_ok(ivs, y) {
                    f(e, y);
                }
                return;
            }
            for step in 0..2 {
                let p = x[i] + step;
                if i > 0 && p <= y[i - 1] {
                    continue;
                }
                if !ivs.iter().any(|iv| iv.lo <= p && p < iv.hi) {
                    continue;
                }
                e[i] = step as u8;
                y[i] = p;
                rec(i + 1, x, ivs, e, y, f);
            }
        }
        rec(0, x, ivs, &mut e, &mut y, &mut f);
    }

    /// Calls `f` with every admissible configuration at level `j` that
    /// steps to `y` (positions at level `j + 1` before creation).
    fn for_each_predecessor(&self, j: i64, y: &[i64], mut f: impl FnMut(&[i64])) {
        let ivs = &self.lower[j as usize];
        let m = y.len();
        let mut x = vec![0i64; m];
        fn rec(i: usize, y: &[i64], ivs: &[Iv], x: &mut [i64], f: &mut dyn FnMut(&[i64])) {
            if i == y.len() {
                if lattice_ok(ivs, x) {
                    f(x);
                }
                return;
            }
            for step in 0..2 {
                let p = y[i] - step;
                if i > 0 && p <= x[i - 1] {
                    continue;
                }
                if !ivs.iter().any(|iv| iv.lo <= p && p < iv.hi) {
                    continue;
                }
                x[i] = p;
                rec(i + 1, y, ivs, x, f);
            }
        }
        rec(0, y, ivs, &mut x, &mut f);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) struct Key(Box<[u64]>);

/// Counts `N_j(x)` for all relevant configurations at levels
/// `start_level..=steps`.
pub(crate) struct CountTables {
    pub model: WalkModel,
    pub start_level: i64,
    /// `levels[j - start_level]`.
    pub levels: Vec<HashMap<Key, BigUint>>,
}

impl CountTables {
    pub fn get(&self, j: i64, x: &[i64]) -> BigUint {
        self.levels[(j - self.start_level) as usize]
            .get(&self.model.key(x))
            .cloned()
            .unwrap_or_default()
    }

    /// Checks `N_j(x) = Σ_e N_{j+1}(x + e)` for every stored state.
    pub fn audit(&self) -> bool {
        for j in self.start_level..self.model.steps {
            for (key, count) in &self.levels[(j - self.start_level) as usize] {
                let x = self.model.unkey(key);
                let mut total = BigUint::zero();
                self.model.for_each_successor(j, &x, |_, y| {
                    if let Some(z) = self.model.arrive(j + 1, y) {
                        total += self.get(j + 1, &z);
                    }
                });
                if &total != count {
                    return false;
                }
            }
        }
        true
    }
}

/// Backward pass from the terminal configuration down to `start_level`.
/// With `keep_all == false` only the last level is retained.
pub(crate) fn backward(model: WalkModel, start_level: i64, cap: usize, keep_all: bool) -> Result<CountTables> {
    let mut levels: Vec<HashMap<Key, BigUint>> = Vec::new();
    let mut current: HashMap<Key, BigUint> = HashMap::new();
    current.insert(model.key(&model.terminal), BigUint::one());
    for j in (start_level..model.steps).rev() {
        let mut next: HashMap<Key, BigUint> = HashMap::new();
        for (key, count) in &current {
            let z = model.unkey(key);
            let y = if j + 1 == model.steps {
                z
            } else {
                match uncreate_lattice(&z, &model.created[(j + 1) as usize]) {
                    Some(y) => y,
                    None => continue,
                }
            };
            if !lattice_ok(&model.upper[(j + 1) as usize], &y) {
                continue;
            }
            let mut overflow = false;
            model.for_each_predecessor(j, &y, |x| {
                if overflow {
                    return;
                }
                *next.entry(model.key(x)).or_default() += count;
                if next.len() > cap {
                    overflow = true;
                }
            });
            if overflow {
                return Err(Error::Capacity { level: j, states: next.len(), cap });
            }
        }
        if keep_all {
            levels.push(std::mem::take(&mut current));
        }
        current = next;
    }
    levels.push(current);
    if keep_all {
        levels.reverse();
    }
    Ok(CountTables { model, start_level, levels })
}

/// Number of tilings compatible with `c` as the configuration at its time.
pub fn count_dp(d: &Domain, c: &ParticleConfiguration) -> Result<TilingCount> {
    count_dp_with_cap(d, c, DEFAULT_STATE_CAP)
}

pub fn count_dp_with_cap(d: &Domain, c: &ParticleConfiguration, cap: usize) -> Result<TilingCount> {
    d.check_configuration(c, Side::Lower)?;
    let (level, pos) = c.to_lattice(d.n())?;
    let model = WalkModel::from_domain(d)?;
    let tables = backward(model, level, cap, false)?;
    Ok(TilingCount { value: tables.get(level, &pos), domain_hash: d.hash(), start: c.clone() })
}

/// Rebuilds the full table and checks `N_j(x) = Σ_e N_{j+1}(x + e)` at
/// every stored state.
pub fn audit_recursion(d: &Domain, cap: usize) -> Result<bool> {
    let tables = backward(WalkModel::from_domain(d)?, 0, cap, true)?;
    Ok(tables.audit())
}

/// Number of tilings of the whole domain.
pub fn count_tilings(d: &Domain) -> Result<TilingCount> {
    count_dp(d, &d.initial_configuration())
}

/// Path families in a free strip, by the backward recursion. Used to
/// cross-check [`count_lgv`].
pub fn count_free_strip(start: &[i64], end: &[i64], steps: i64) -> Result<BigUint> {
    if start.len() != end.len() {
        return Err(Error::CountMismatch(start.len(), end.len()));
    }
    if steps < 0 {
        return Err(Error::InvalidInput("negative step count".into()));
    }
    if start.windows(2).any(|w| w[0] >= w[1]) || end.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfiguration("positions are not strictly increasing".into()));
    }
    let model = WalkModel::free_strip(start, end, steps);
    let tables = backward(model, 0, DEFAULT_STATE_CAP, false)?;
    Ok(tables.get(0, start))
}

fn binomial(n: i64, k: i64) -> BigUint {
    if k < 0 || k > n || n < 0 {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= BigUint::from((n - i) as u64);
        acc /= BigUint::from((i + 1) as u64);
    }
    acc
}

/// Fraction-free Gaussian elimination.
fn bareiss_det(mut a: Vec<Vec<BigInt>>) -> BigInt {
    let m = a.len();
    if m == 0 {
        return BigInt::one();
    }
    let mut sign = BigInt::one();
    let mut prev = BigInt::one();
    for k in 0..m - 1 {
        if a[k][k].is_zero() {
            match (k + 1..m).find(|&r| !a[r][k].is_zero()) {
                Some(r) => {
                    a.swap(k, r);
                    sign = -sign;
                }
                None => return BigInt::zero(),
            }
        }
        for i in k + 1..m {
            for j in k + 1..m {
                let v = &a[i][j] * &a[k][k] - &a[i][k] * &a[k][j];
                a[i][j] = v / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    sign * a[m - 1][m - 1].clone()
}

/// Lindström–Gessel–Viennot determinant of single-path binomial counts.
/// Positions in lattice units.
pub fn count_lgv_lattice(start: &[i64], end: &[i64], steps: i64) -> Result<BigUint> {
    if start.len() != end.len() {
        return Err(Error::CountMismatch(start.len(), end.len()));
    }
    let m = start.len();
    let a: Vec<Vec<BigInt>> = (0..m)
        .map(|i| (0..m).map(|j| BigInt::from(binomial(steps, end[j] - start[i]))).collect())
        .collect();
    let det = bareiss_det(a);
    det.to_biguint().ok_or_else(|| Error::InvalidConfiguration("negative path determinant".into()))
}

/// [`count_lgv_lattice`] on configurations; both must share the grid `n`.
pub fn count_lgv(start: &ParticleConfiguration, end: &ParticleConfiguration, steps: i64, n: i64) -> Result<BigUint> {
    if start.len() != end.len() {
        return Err(Error::CountMismatch(start.len(), end.len()));
    }
    let (_, s) = start.to_lattice(n)?;
    let (_, e) = end.to_lattice(n)?;
    count_lgv_lattice(&s, &e, steps)
}

/// MacMahon's box formula for the `a × b × c` hexagon.
pub fn count_hexagon_product(a: u32, b: u32, c: u32) -> BigUint {
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 1..=a {
        for j in 1..=b {
            for k in 1..=c {
                num *= BigUint::from(i + j + k - 1);
                den *= BigUint::from(i + j + k - 2);
            }
        }
    }
    num / den
}

/// Natural log of a big integer.
pub fn ln_biguint(v: &BigUint) -> f64 {
    if v.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = v.bits();
    let shift = bits.saturating_sub(60);
    let top = (v >> shift).to_f64().unwrap_or(f64::NAN);
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// `(1/n²) ln N` for the whole domain.
pub fn log_count_density(d: &Domain) -> Result<f64> {
    let c = count_tilings(d)?;
    let n = d.n() as f64;
    Ok(ln_biguint(&c.value) / (n * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PolygonalDomain;

    fn hex(n: i64, a: i64, b: i64, c: i64) -> Domain {
        Domain::new(PolygonalDomain::hexagon(n, a, b, c)).unwrap()
    }

    #[test]
    fn small_hexagons() {
        assert_eq!(count_tilings(&hex(1, 1, 1, 1)).unwrap().value, BigUint::from(2u32));
        assert_eq!(count_tilings(&hex(1, 2, 2, 2)).unwrap().value, BigUint::from(20u32));
        assert_eq!(count_tilings(&hex(1, 1, 1, 2)).unwrap().value, BigUint::from(3u32));
    }

    #[test]
    fn product_formula() {
        assert_eq!(count_hexagon_product(1, 1, 2), BigUint::from(3u32));
        assert_eq!(count_hexagon_product(1, 2, 2), BigUint::from(6u32));
        assert_eq!(count_hexagon_product(1, 1, 1), BigUint::from(2u32));
        assert_eq!(count_hexagon_product(2, 2, 2), BigUint::from(20u32));
    }

    #[test]
    fn parallelogram_is_frozen() {
        // Slope-1 and slope-∞ sides only, bottom and top edges of length 2.
        for v in [[(0, 0), (2, 0), (5, 3), (3, 3)], [(0, 0), (2, 0), (2, 3), (0, 3)]] {
            let d = Domain::new(PolygonalDomain::from_lattice_vertices(1, &v)).unwrap();
            assert_eq!(count_tilings(&d).unwrap().value, BigUint::one());
            assert_eq!(log_count_density(&d).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_path() {
        assert_eq!(count_lgv_lattice(&[0], &[3], 5).unwrap(), BigUint::from(10u32));
        assert_eq!(count_lgv_lattice(&[0], &[6], 5).unwrap(), BigUint::zero());
        assert_eq!(count_free_strip(&[0], &[3], 5).unwrap(), BigUint::from(10u32));
        assert!(count_lgv_lattice(&[0, 1], &[3], 5).is_err());
    }

    #[test]
    fn key_round_trip() {
        let d = hex(2, 4, 3, 5);
        let m = WalkModel::from_domain(&d).unwrap();
        let pos = vec![m.base, m.base + 3, m.base + 70.min(m.span - 1)];
        assert_eq!(m.unkey(&m.key(&pos)), pos);
    }

    #[test]
    fn capacity_is_reported() {
        let d = hex(1, 3, 3, 3);
        let err = count_dp_with_cap(&d, &d.initial_configuration(), 2).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
        assert!(err.is_resource());
    }

    #[test]
    fn tables_are_consistent() {
        assert!(audit_recursion(&hex(1, 2, 3, 2), DEFAULT_STATE_CAP).unwrap());
    }

    #[test]
    fn log_density() {
        let v = log_count_density(&hex(1, 2, 2, 2)).unwrap();
        assert!((v - 20f64.ln()).abs() < 1e-12);
        let big = count_hexagon_product(6, 6, 6);
        let direct: f64 = big.to_string().parse::<f64>().unwrap().ln();
        assert!((ln_biguint(&big) - direct).abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn lgv_matches_dp(
            gaps_s in proptest::collection::vec(1i64..3, 1..4),
            shifts in proptest::collection::vec(0i64..4, 1..4),
            steps in 0i64..7,
        ) {
            let m = gaps_s.len().min(shifts.len());
            let start: Vec<i64> = gaps_s[..m].iter().scan(0, |acc, g| { *acc += g; Some(*acc) }).collect();
            let mut end: Vec<i64> = start.iter().zip(&shifts[..m]).map(|(s, d)| s + d).collect();
            for i in 1..m {
                if end[i] <= end[i - 1] {
                    end[i] = end[i - 1] + 1;
                }
            }
            proptest::prop_assert_eq!(count_lgv_lattice(&start, &end, steps).unwrap(), count_free_strip(&start, &end, steps).unwrap());
        }
    }
}
