//! Samplers: exact uniform walks from the counting tables, single steps of
//! the drifted walk, and a local-flip Markov chain for large domains.

use crate::counting::{backward, CountTables, WalkModel, DEFAULT_STATE_CAP};
use crate::domain::{Domain, ParticleConfiguration};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::weights::DriftedWalkWeights;
use num_bigint::{BigUint, RandBigInt};
use num_complex::Complex64;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Largest particle count for which the drifted step table is enumerated.
pub const DEFAULT_BRUTE_FORCE_CAP: usize = 20;

/// Configurations at every lattice time `0, 1/n, …, T`. Entries before `T`
/// are taken after creation; the last one is the packed top row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkTrajectory {
    pub seed: u64,
    pub configurations: Vec<ParticleConfiguration>,
}

impl WalkTrajectory {
    pub(crate) fn from_lattice(seed: u64, n: i64, rows: &[Vec<i64>]) -> Self {
        let configurations = rows
            .iter()
            .enumerate()
            .map(|(j, r)| ParticleConfiguration::from_lattice(n, j as i64, r))
            .collect();
        WalkTrajectory { seed, configurations }
    }

    /// Rows in lattice units.
    pub fn lattice_rows(&self, n: i64) -> Result<Vec<Vec<i64>>> {
        self.configurations.iter().map(|c| c.to_lattice(n).map(|(_, p)| p)).collect()
    }
}

/// Independent generator for `(seed, stream, level)`.
pub fn keyed_rng(seed: u64, stream: u64, level: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&level.to_le_bytes());
    key[24..].copy_from_slice(b"lozenge!");
    ChaCha8Rng::from_seed(key)
}

/// Exact uniform sampler. Holds the full table of `N_j` for the domain.
pub struct ExactSampler {
    tables: CountTables,
    n: i64,
}

/// One row of the exact step law: `N_{j+1}(z) / N_j(x)` for each successor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactStepTable {
    pub total: BigUint,
    pub entries: Vec<(Vec<u8>, BigUint)>,
}

impl ExactSampler {
    pub fn new(d: &Domain) -> Result<Self> {
        Self::with_cap(d, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(d: &Domain, cap: usize) -> Result<Self> {
        let model = WalkModel::from_domain(d)?;
        let tables = backward(model, 0, cap, true)?;
        Ok(ExactSampler { tables, n: d.n() })
    }

    /// Total number of tilings.
    pub fn count(&self) -> BigUint {
        let m = &self.tables.model;
        let start = crate::domain::create_lattice(&[], &m.created[0]).unwrap_or_default();
        self.tables.get(0, &start)
    }

    /// Successor weights from lattice configuration `x` at level `j`.
    pub fn step_table(&self, j: i64, x: &[i64]) -> ExactStepTable {
        let m = &self.tables.model;
        let mut entries = Vec::new();
        m.for_each_successor(j, x, |e, y| {
            if let Some(z) = m.arrive(j + 1, y) {
                let c = self.tables.get(j + 1, &z);
                if !c.is_zero() {
                    entries.push((e.to_vec(), c));
                }
            }
        });
        ExactStepTable { total: self.tables.get(j, x), entries }
    }

    /// Sample number `index` for `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> Result<WalkTrajectory> {
        let m = &self.tables.model;
        let mut x = crate::domain::create_lattice(&[], &m.created[0]).unwrap_or_default();
        if self.tables.get(0, &x).is_zero() {
            return Err(Error::NoTiling("the domain admits no tiling".into()));
        }
        let mut rows = vec![x.clone()];
        for j in 0..m.steps {
            let table = self.step_table(j, &x);
            let mut rng = keyed_rng(seed, index, j as u64);
            let mut r = rng.gen_biguint_below(&table.total);
            let mut chosen = None;
            for (e, c) in &table.entries {
                if &r < c {
                    chosen = Some(e.clone());
                    break;
                }
                r -= c;
            }
            let e = chosen.expect("step weights sum to the level count");
            let y: Vec<i64> = x.iter().zip(&e).map(|(p, s)| p + *s as i64).collect();
            x = m.arrive(j + 1, &y).expect("sampled successor is admissible");
            rows.push(x.clone());
        }
        Ok(WalkTrajectory::from_lattice(seed, self.n, &rows))
    }

    /// Every tiling of the domain, for small instances.
    pub fn enumerate(&self, limit: usize) -> Result<Vec<Vec<Vec<i64>>>> {
        let m = &self.tables.model;
        let start = crate::domain::create_lattice(&[], &m.created[0]).unwrap_or_default();
        let mut out = Vec::new();
        let mut path = vec![start];
        self.enumerate_rec(0, &mut path, &mut out, limit)?;
        Ok(out)
    }

    fn enumerate_rec(&self, j: i64, path: &mut Vec<Vec<i64>>, out: &mut Vec<Vec<Vec<i64>>>, limit: usize) -> Result<()> {
        let m = &self.tables.model;
        if j == m.steps {
            if out.len() >= limit {
                return Err(Error::Capacity { level: j, states: out.len(), cap: limit });
            }
            out.push(path.clone());
            return Ok(());
        }
        let x = path.last().unwrap().clone();
        let mut next = Vec::new();
        m.for_each_successor(j, &x, |_, y| {
            if let Some(z) = m.arrive(j + 1, y) {
                if !self.tables.get(j + 1, &z).is_zero() {
                    next.push(z);
                }
            }
        });
        for z in next {
            path.push(z);
            self.enumerate_rec(j + 1, path, out, limit)?;
            path.pop();
        }
        Ok(())
    }
}

/// One uniformly random tiling.
pub fn exact_sample(d: &Domain, seed: u64) -> Result<WalkTrajectory> {
    ExactSampler::new(d)?.sample(seed, 0)
}

/// Probabilities of all jump vectors with nonzero weight.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution {
    pub entries: Vec<(Vec<u8>, f64)>,
}

impl StepDistribution {
    pub fn prob(&self, e: &[u8]) -> f64 {
        self.entries.iter().find(|(k, _)| k == e).map_or(0.0, |(_, p)| *p)
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> &[u8] {
        let mut u: f64 = rng.gen();
        for (e, p) in &self.entries {
            if u < *p {
                return e;
            }
            u -= p;
        }
        &self.entries.last().expect("distribution is nonempty").0
    }
}

/// Log of the (unnormalized) weight `a_e`, or `None` if it vanishes.
pub(crate) fn log_weight(x: &[f64], e: &[u8], w: &DriftedWalkWeights, n: f64) -> Option<f64> {
    let m = x.len();
    let mut la = 0.0;
    for i in 0..m {
        let yi = x[i] + e[i] as f64 / n;
        for j in i + 1..m {
            let yj = x[j] + e[j] as f64 / n;
            let r = (yj - yi) / (x[j] - x[i]);
            if r <= 0.0 {
                return None;
            }
            la += r.ln();
        }
        let z = Complex64::new(x[i], 0.0);
        let phi = if e[i] == 1 { w.full_plus(z, n).re } else { w.full_minus(z, n).re };
        if phi <= 0.0 || !phi.is_finite() {
            return None;
        }
        la += phi.ln();
    }
    if !w.kappa.is_zero() {
        let mut k = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                if e[i] == 1 && e[j] == 1 {
                    k += w.kappa.eval(Complex64::new(x[i], 0.0), Complex64::new(x[j], 0.0)).re;
                }
            }
        }
        la += k / (n * n);
    }
    Some(la)
}

pub(crate) fn for_each_jump(m: usize, mut f: impl FnMut(&[u8])) {
    let mut e = vec![0u8; m];
    for mask in 0u64..(1u64 << m) {
        for (i, slot) in e.iter_mut().enumerate() {
            *slot = ((mask >> i) & 1) as u8;
        }
        f(&e);
    }
}

/// The drifted-walk law of the jump vector from `c`.
pub fn drifted_step_distribution(c: &ParticleConfiguration, w: &DriftedWalkWeights, n: i64) -> Result<StepDistribution> {
    drifted_step_distribution_with_cap(c, w, n, DEFAULT_BRUTE_FORCE_CAP)
}

pub fn drifted_step_distribution_with_cap(
    c: &ParticleConfiguration,
    w: &DriftedWalkWeights,
    n: i64,
    cap: usize,
) -> Result<StepDistribution> {
    let (_, pos) = c.to_lattice(n)?;
    if pos.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidConfiguration("positions are not strictly increasing".into()));
    }
    if pos.len() > cap {
        return Err(Error::Capacity { level: 0, states: pos.len(), cap });
    }
    let x: Vec<f64> = pos.iter().map(|&p| p as f64 / n as f64).collect();
    let nf = n as f64;
    let mut logs: Vec<(Vec<u8>, f64)> = Vec::new();
    for_each_jump(x.len(), |e| {
        if let Some(la) = log_weight(&x, e, w, nf) {
            logs.push((e.to_vec(), la));
        }
    });
    if logs.is_empty() {
        return Err(Error::Stuck);
    }
    let top = logs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|(_, l)| (l - top).exp()).sum();
    let entries = logs.into_iter().map(|(e, l)| (e, (l - top).exp() / z)).collect();
    Ok(StepDistribution { entries })
}

/// Statistics of one sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepStats {
    /// Sites where a flip was possible.
    pub flippable: u64,
    /// Sites where the coin was tossed.
    pub attempts: u64,
    pub flips: u64,
}

/// Single-cube flip chain on the walk picture.
///
/// A site is a particle at an intermediate level `0 < j < T` that was not
/// created there. It is flippable when its neighbours in time are one step
/// apart, so it can sit at either of the two positions; the update picks one
/// of them with probability 1/2 each.
pub struct Mcmc {
    model: WalkModel,
    rows: Vec<Vec<i64>>,
    /// `prev[j][i]`: index at level `j-1` of particle `i`, or `usize::MAX`
    /// if it is created at level `j`.
    prev: Vec<Vec<usize>>,
    /// `next[j][i]`: index at level `j+1`.
    next: Vec<Vec<usize>>,
    /// Lower and upper interval index of each site; flips stay inside them.
    n: i64,
    rng: ChaCha8Rng,
    seed: u64,
}

impl Mcmc {
    pub fn new(d: &Domain, seed: u64) -> Result<Self> {
        let model = WalkModel::from_domain(d)?;
        let rows = greedy_rows(d, &model)?;
        Self::from_rows(model, rows, d.n(), seed, 0)
    }

    /// A chain for `stream`, so parallel chains draw from disjoint streams.
    pub fn with_stream(d: &Domain, seed: u64, stream: u64) -> Result<Self> {
        let model = WalkModel::from_domain(d)?;
        let rows = greedy_rows(d, &model)?;
        Self::from_rows(model, rows, d.n(), seed, stream)
    }

    fn from_rows(model: WalkModel, rows: Vec<Vec<i64>>, n: i64, seed: u64, stream: u64) -> Result<Self> {
        let levels = rows.len();
        let mut prev = vec![Vec::new(); levels];
        let mut next = vec![Vec::new(); levels];
        for j in 0..levels {
            let created = if j + 1 < levels { &model.created[j] } else { &Vec::new() };
            let mut k = 0usize;
            prev[j] = rows[j]
                .iter()
                .map(|p| {
                    if j > 0 && created.binary_search(p).is_err() {
                        k += 1;
                        k - 1
                    } else {
                        usize::MAX
                    }
                })
                .collect();
        }
        for j in 1..levels {
            next[j - 1] = vec![usize::MAX; rows[j - 1].len()];
            for (i, &p) in prev[j].iter().enumerate() {
                if p != usize::MAX {
                    next[j - 1][p] = i;
                }
            }
            if next[j - 1].contains(&usize::MAX) {
                return Err(Error::NoTiling("initial rows do not form a walk family".into()));
            }
        }
        Ok(Mcmc { model, rows, prev, next, n, rng: keyed_rng(seed, stream, u64::MAX), seed })
    }

    /// One raster sweep over all sites.
    pub fn sweep(&mut self) -> SweepStats {
        let mut stats = SweepStats::default();
        let steps = self.model.steps as usize;
        for j in 1..steps {
            for i in 0..self.rows[j].len() {
                let pi = self.prev[j][i];
                if pi == usize::MAX {
                    continue;
                }
                let lo = self.rows[j - 1][pi];
                let hi = self.rows[j + 1][self.next[j][i]];
                if hi - lo != 1 {
                    continue;
                }
                let x = self.rows[j][i];
                let alt = lo + hi - x;
                if !self.can_move(j, i, x, alt) {
                    continue;
                }
                stats.flippable += 1;
                stats.attempts += 1;
                if self.rng.gen::<bool>() {
                    self.rows[j][i] = alt;
                    stats.flips += 1;
                }
            }
        }
        stats
    }

    fn can_move(&self, j: usize, i: usize, x: i64, alt: i64) -> bool {
        let row = &self.rows[j];
        if i > 0 && row[i - 1] >= alt {
            return false;
        }
        if i + 1 < row.len() && row[i + 1] <= alt {
            return false;
        }
        let same = |ivs: &[crate::domain::Iv]| {
            let find = |p: i64| ivs.iter().position(|iv| iv.lo <= p && p < iv.hi);
            matches!((find(x), find(alt)), (Some(a), Some(b)) if a == b)
        };
        same(&self.model.lower[j]) && same(&self.model.upper[j])
    }

    pub fn run(&mut self, sweeps: u64) -> SweepStats {
        let mut total = SweepStats::default();
        for _ in 0..sweeps {
            let s = self.sweep();
            total.flippable += s.flippable;
            total.attempts += s.attempts;
            total.flips += s.flips;
        }
        total
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    pub fn trajectory(&self) -> WalkTrajectory {
        WalkTrajectory::from_lattice(self.seed, self.n, &self.rows)
    }
}

/// The tiling with maximal height function, read off row by row.
fn greedy_rows(d: &Domain, model: &WalkModel) -> Result<Vec<Vec<i64>>> {
    let mesh = Mesh::new(d, 1)?;
    let h = mesh.extremal_heights(false)?;
    let rows = rows_from_heights(&mesh, &h, model)?;
    Ok(rows)
}

/// Particle rows of an integer height function on the lattice mesh.
pub(crate) fn rows_from_heights(mesh: &Mesh, h: &[i64], model: &WalkModel) -> Result<Vec<Vec<i64>>> {
    let mut rows = Vec::with_capacity(model.steps as usize + 1);
    for j in 0..=model.steps {
        let ivs = if j < model.steps { &model.lower[j as usize] } else { &model.upper[j as usize] };
        let mut row = Vec::new();
        for iv in ivs {
            for x in iv.lo..iv.hi {
                let (a, b) = match (mesh.node(x, j), mesh.node(x + 1, j)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(Error::NoTiling(format!("missing mesh node near ({x}, {j})"))),
                };
                match h[b] - h[a] {
                    0 => {}
                    1 => row.push(x),
                    _ => return Err(Error::NoTiling("height increment outside {0, 1}".into())),
                }
            }
        }
        rows.push(row);
    }
    for j in 0..model.steps {
        let (x, z) = (&rows[j as usize], &rows[j as usize + 1]);
        let ok = model.arrive(j + 1, &step_target(model, j + 1, z)).is_some_and(|zz| &zz == z)
            && x.len() + model.created[j as usize + 1].len() * usize::from(j + 1 < model.steps) == z.len();
        if !ok {
            return Err(Error::NoTiling(format!("height rows are not a walk family at level {j}")));
        }
    }
    Ok(rows)
}

/// Positions before creation at level `j`.
fn step_target(model: &WalkModel, j: i64, z: &[i64]) -> Vec<i64> {
    if j == model.steps {
        z.to_vec()
    } else {
        crate::domain::uncreate_lattice(z, &model.created[j as usize]).unwrap_or_default()
    }
}

/// Runs `sweeps` sweeps from the greedy tiling.
pub fn mcmc_sample(d: &Domain, sweeps: u64, seed: u64) -> Result<WalkTrajectory> {
    let mut chain = Mcmc::new(d, seed)?;
    chain.run(sweeps);
    Ok(chain.trajectory())
}
