//! Height fluctuations of sampled tilings: integer height grids, linear
//! statistics, normality diagnostics and the Gaussian free field prediction
//! pulled back through the complex slope.

use crate::domain::{Domain, ParticleConfiguration};
use crate::error::{Error, Result};
use crate::limit_shape::{gradient_to_slope, solve_variational, ArcticCurve, ComplexSlopeField, HeightField, SolverOptions, LIQUID_EPS};
use crate::mesh::Mesh;
use crate::rational::{rat_to_f64, to_lattice, RatStr};
use crate::sampler::{ExactSampler, Mcmc, WalkTrajectory};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;

/// Integer height function on the lattice mesh (`k = 1`).
#[derive(Clone, Debug)]
pub struct HeightGrid {
    pub n: i64,
    pub mesh: Mesh,
    pub heights: Vec<i64>,
}

impl HeightGrid {
    pub fn at(&self, i: i64, j: i64) -> Option<i64> {
        self.mesh.node(i, j).map(|v| self.heights[v])
    }

    /// Particle positions on row `j`, read off the unit height increments.
    pub fn row_configuration(&self, j: i64) -> ParticleConfiguration {
        ParticleConfiguration::from_lattice(self.n, j, &row_particles(&self.mesh, &self.heights, j))
    }
}

fn row_particles(mesh: &Mesh, h: &[i64], j: i64) -> Vec<i64> {
    mesh.nodes
        .iter()
        .enumerate()
        .filter(|(_, &(_, jj))| jj == j)
        .filter_map(|(v, &(i, _))| mesh.node(i + 1, j).filter(|&w| h[w] - h[v] == 1).map(|_| i))
        .collect()
}

/// Fills the lattice mesh row by row: each maximal run of nodes starts at a
/// boundary node and gains one unit across every particle box.
fn heights_from_rows(mesh: &Mesh, rows: &[Vec<i64>]) -> Result<Vec<i64>> {
    if rows.len() as i64 != mesh.t_steps + 1 {
        return Err(Error::InvalidConfiguration(format!(
            "trajectory has {} rows, domain has {} levels",
            rows.len(),
            mesh.t_steps + 1
        )));
    }
    let mut h = vec![i64::MIN; mesh.len()];
    for (v, &(i, j)) in mesh.nodes.iter().enumerate() {
        let row = &rows[j as usize];
        let value = match mesh.node(i - 1, j) {
            Some(u) if h[u] != i64::MIN => h[u] + i64::from(row.binary_search(&(i - 1)).is_ok()),
            _ => mesh.pins[v].ok_or_else(|| {
                Error::InvalidConfiguration(format!("run at ({i}, {j}) does not start on the boundary"))
            })?,
        };
        if let Some(p) = mesh.pins[v] {
            if p != value {
                return Err(Error::InvalidConfiguration(format!(
                    "height {value} at boundary node ({i}, {j}) differs from {p}"
                )));
            }
        }
        h[v] = value;
    }
    for (j, row) in rows.iter().enumerate() {
        let j = j as i64;
        if row.iter().any(|&p| mesh.node(p, j).is_none() || mesh.node(p + 1, j).is_none()) {
            return Err(Error::InvalidConfiguration(format!("particle outside the slice at level {j}")));
        }
    }
    if !mesh.admissible(&h) {
        return Err(Error::InvalidConfiguration("rows do not form a tiling".into()));
    }
    Ok(h)
}

/// Height grid of a sampled trajectory: `H = n β^P` on the boundary,
/// increasing by one across each particle box.
pub fn height_from_trajectory(d: &Domain, traj: &WalkTrajectory) -> Result<HeightGrid> {
    let mesh = Mesh::new(d, 1)?;
    let rows = traj.lattice_rows(d.n())?;
    let heights = heights_from_rows(&mesh, &rows)?;
    Ok(HeightGrid { n: d.n(), mesh, heights })
}

/// `Σ ln((z-x_i)/(z-x_i-1/n))`, the integral of the box density against
/// `1/(z-x)`.
pub fn empirical_stieltjes(c: &ParticleConfiguration, n: i64, z: Complex64) -> Result<Complex64> {
    let (_, pos) = c.to_lattice(n)?;
    let h = 1.0 / n as f64;
    let mut s = Complex64::new(0.0, 0.0);
    for p in pos {
        let x = p as f64 * h;
        if (z - x).norm() < 1e-12 || (z - x - h).norm() < 1e-12 {
            return Err(Error::PoleCollision(format!("{z}")));
        }
        s += ((z - x) / (z - x - h)).ln();
    }
    Ok(s)
}

/// How samples are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SamplingMethod {
    /// Independent exact samples from the counting tables.
    Exact,
    /// `chains` independent flip chains from the maximal tiling; each is run
    /// for `burn_in` sweeps and then sampled every `thin` sweeps.
    Mcmc { burn_in: u64, thin: u64, chains: usize },
}

/// `K` sampled height grids on one domain.
#[derive(Clone, Debug)]
pub struct FluctuationEnsemble {
    pub domain: Domain,
    pub n: i64,
    pub mesh: Mesh,
    pub samples: Vec<Vec<i64>>,
    pub mean: Vec<f64>,
}

impl FluctuationEnsemble {
    pub fn from_trajectories(d: &Domain, trajs: &[WalkTrajectory]) -> Result<Self> {
        let mesh = Mesh::new(d, 1)?;
        let samples = trajs
            .iter()
            .map(|t| heights_from_rows(&mesh, &t.lattice_rows(d.n())?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_heights(d, mesh, samples)
    }

    fn from_heights(d: &Domain, mesh: Mesh, samples: Vec<Vec<i64>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty ensemble".into()));
        }
        let k = samples.len() as f64;
        let mean = (0..mesh.len()).map(|v| samples.iter().map(|s| s[v] as f64).sum::<f64>() / k).collect();
        Ok(FluctuationEnsemble { domain: d.clone(), n: d.n(), mesh, samples, mean })
    }

    /// Draws `count` samples. Chains run in parallel; sample order is fixed
    /// by (chain, draw) so results do not depend on scheduling.
    pub fn generate(d: &Domain, count: usize, method: SamplingMethod, seed: u64) -> Result<Self> {
        let mesh = Mesh::new(d, 1)?;
        let samples: Vec<Vec<i64>> = match method {
            SamplingMethod::Exact => {
                let sampler = ExactSampler::new(d)?;
                (0..count as u64)
                    .into_par_iter()
                    .map(|k| heights_from_rows(&mesh, &sampler.sample(seed, k)?.lattice_rows(d.n())?))
                    .collect::<Result<_>>()?
            }
            SamplingMethod::Mcmc { burn_in, thin, chains } => {
                if chains == 0 || thin == 0 {
                    return Err(Error::InvalidInput("need at least one chain and a positive thinning".into()));
                }
                let per_chain: Vec<usize> = (0..chains).map(|c| count / chains + usize::from(c < count % chains)).collect();
                let blocks: Vec<Vec<Vec<i64>>> = per_chain
                    .par_iter()
                    .enumerate()
                    .map(|(c, &m)| {
                        let mut chain = Mcmc::with_stream(d, seed, c as u64)?;
                        chain.run(burn_in);
                        let mut out = Vec::with_capacity(m);
                        for _ in 0..m {
                            chain.run(thin);
                            out.push(heights_from_rows(&mesh, chain.rows())?);
                        }
                        Ok(out)
                    })
                    .collect::<Result<_>>()?;
                blocks.into_iter().flatten().collect()
            }
        };
        Self::from_heights(d, mesh, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid(&self, k: usize) -> HeightGrid {
        HeightGrid { n: self.n, mesh: self.mesh.clone(), heights: self.samples[k].clone() }
    }

    pub fn mean_at(&self, i: i64, j: i64) -> Option<f64> {
        self.mesh.node(i, j).map(|v| self.mean[v])
    }

    /// `max |mean H/n - h*|` against a limit shape solved on the same
    /// lattice mesh.
    pub fn mean_distance(&self, hf: &HeightField) -> Result<f64> {
        if hf.mesh().resolution != self.n || hf.mesh().len() != self.mesh.len() {
            return Err(Error::InvalidInput("limit shape must be solved on the lattice mesh".into()));
        }
        let h = hf.heights();
        Ok(self.mean.iter().zip(&h).map(|(m, h)| (m / self.n as f64 - h).abs()).fold(0.0, f64::max))
    }

    /// Values of one probe across the ensemble.
    pub fn probe_values(&self, probe: &Probe) -> Result<Vec<f64>> {
        match probe {
            Probe::Point { .. } => {
                let nodes = self.probe_nodes(probe)?;
                let w = 1.0 / nodes.len() as f64;
                Ok(self.samples.iter().map(|s| nodes.iter().map(|&v| s[v] as f64).sum::<f64>() * w).collect())
            }
            Probe::Stieltjes { t, z, part } => {
                let j = to_lattice(&t.0, self.n)
                    .ok_or_else(|| Error::InvalidInput(format!("probe time {t} is not on the grid")))?;
                let zz = Complex64::new(z[0], z[1]);
                self.samples
                    .iter()
                    .map(|s| {
                        let pos = row_particles(&self.mesh, s, j);
                        let c = ParticleConfiguration::from_lattice(self.n, j, &pos);
                        let v = empirical_stieltjes(&c, self.n, zz)?;
                        Ok(match part {
                            Part::Re => v.re,
                            Part::Im => v.im,
                        })
                    })
                    .collect()
            }
        }
    }

    /// Mesh nodes averaged by a point probe.
    pub fn probe_nodes(&self, probe: &Probe) -> Result<Vec<usize>> {
        let Probe::Point { x, t, radius } = probe else {
            return Err(Error::InvalidInput("not a point probe".into()));
        };
        let (i0, j0) = match (to_lattice(&x.0, self.n), to_lattice(&t.0, self.n)) {
            (Some(i), Some(j)) => (i, j),
            _ => return Err(Error::InvalidInput(format!("probe ({x}, {t}) is not on the grid"))),
        };
        let r = *radius;
        if r < 0 {
            return Err(Error::InvalidInput("negative probe radius".into()));
        }
        let mut nodes = Vec::new();
        for dj in -r..=r {
            for di in -r..=r {
                if di * di + dj * dj <= r * r {
                    let v = self
                        .mesh
                        .node(i0 + di, j0 + dj)
                        .ok_or_else(|| Error::InvalidInput(format!("probe disc around ({x}, {t}) leaves the domain")))?;
                    nodes.push(v);
                }
            }
        }
        Ok(nodes)
    }
}

/// Real or imaginary part of a complex statistic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    #[default]
    Re,
    Im,
}

/// A linear statistic of the height function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Probe {
    /// Average of `H` over lattice nodes within `radius` cells of `(x, t)`.
    Point {
        x: RatStr,
        t: RatStr,
        #[serde(default)]
        radius: i64,
    },
    /// One part of the empirical Stieltjes transform of row `t` at `z`.
    Stieltjes {
        t: RatStr,
        z: [f64; 2],
        #[serde(default)]
        part: Part,
    },
}

impl Probe {
    pub fn label(&self) -> String {
        match self {
            Probe::Point { x, t, radius } => format!("H({x},{t};r={radius})"),
            Probe::Stieltjes { t, z, part } => format!("{part:?} s({},{}i; t={t})", z[0], z[1]),
        }
    }

    /// Centre in real units, for point probes.
    pub fn centre(&self) -> Option<(f64, f64)> {
        match self {
            Probe::Point { x, t, .. } => Some((rat_to_f64(&x.0), rat_to_f64(&t.0))),
            Probe::Stieltjes { .. } => None,
        }
    }
}

/// Probe file: probes plus index pairs for the covariance table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSet {
    pub probes: Vec<Probe>,
    #[serde(default)]
    pub pairs: Vec<[usize; 2]>,
}

impl ProbeSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: ProbeSet = serde_json::from_str(text)?;
        if p.pairs.iter().flatten().any(|&i| i >= p.probes.len()) {
            return Err(Error::InvalidInput("pair index out of range".into()));
        }
        Ok(p)
    }
}

/// `Cov = (1/2π²) ln |(u - ū')/(u - u')|` for `u, u'` in the upper half
/// plane.
pub fn green(u: Complex64, v: Complex64) -> f64 {
    ((u - v.conj()) / (u - v)).norm().ln() / (2.0 * PI * PI)
}

/// Maps the liquid region into the upper half-plane.
#[derive(Clone, Debug)]
pub struct GffPredictor {
    field: ComplexSlopeField,
}

impl GffPredictor {
    pub fn new(field: ComplexSlopeField) -> Self {
        GffPredictor { field }
    }

    /// Solves the limit shape at mesh refinement `k` and takes its slope
    /// field.
    pub fn solve(d: &Domain, k: i64) -> Result<Self> {
        let hf = solve_variational(d, k, None, &SolverOptions::default())?;
        Ok(Self::new(gradient_to_slope(&hf, LIQUID_EPS)))
    }

    pub fn field(&self) -> &ComplexSlopeField {
        &self.field
    }

    /// `u = x - t f/(f+1)`: the point where the characteristic through
    /// `(x, t)` (constant `f`, direction `(f/(f+1), 1)`) meets `t = 0`.
    pub fn u(&self, x: f64, t: f64) -> Result<Complex64> {
        match self.field.interpolate(x, t) {
            Some(f) if f.im < 0.0 => Ok(x - t * f / (f + 1.0)),
            _ => Err(Error::FrozenNode(x, t)),
        }
    }
}

/// Predicted `Cov(H(p), H(q))` for the unscaled height function.
pub fn gff_covariance(pred: &GffPredictor, p: (f64, f64), q: (f64, f64)) -> Result<f64> {
    if p == q {
        return Err(Error::InvalidInput("covariance needs two distinct points".into()));
    }
    Ok(green(pred.u(p.0, p.1)?, pred.u(q.0, q.1)?))
}

/// Euclidean distance from `(x, t)` to the curve.
pub fn distance_to_curve(curve: &ArcticCurve, x: f64, t: f64) -> f64 {
    let mut best = f64::INFINITY;
    for pl in &curve.polylines {
        let pts = &pl.points;
        let segs = pts.len().saturating_sub(1) + usize::from(pl.closed && pts.len() > 1);
        for k in 0..segs {
            let (a, b) = (pts[k], pts[(k + 1) % pts.len()]);
            let (dx, dt) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dt * dt;
            let s = if len2 > 0.0 { (((x - a.0) * dx + (t - a.1) * dt) / len2).clamp(0.0, 1.0) } else { 0.0 };
            best = best.min((x - a.0 - s * dx).hypot(t - a.1 - s * dt));
        }
        if pts.len() == 1 {
            best = best.min((x - pts[0].0).hypot(t - pts[0].1));
        }
    }
    best
}

/// Moments and normality diagnostics of one probe.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeStats {
    pub label: String,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub skewness_se: f64,
    pub excess_kurtosis: f64,
    pub kurtosis_se: f64,
    /// Anderson–Darling statistic with the small-sample correction for
    /// estimated mean and variance.
    pub anderson_darling: f64,
    pub p_value: f64,
    /// Zero variance: no normality test is possible.
    pub degenerate: bool,
}

fn moments(v: &[f64]) -> (f64, f64, f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k;
    let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / k;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / k;
    (mean, m2, m3, m4)
}

/// Anderson–Darling normality test with estimated parameters; returns
/// `(A*², p)`.
pub fn anderson_darling(v: &[f64]) -> Option<(f64, f64)> {
    let k = v.len();
    let (mean, m2, _, _) = moments(v);
    let sd = (m2 * k as f64 / (k as f64 - 1.0)).sqrt();
    if !(sd > 0.0) {
        return None;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut y: Vec<f64> = v.iter().map(|x| (x - mean) / sd).collect();
    y.sort_by(f64::total_cmp);
    let kf = k as f64;
    let mut s = 0.0;
    for i in 0..k {
        let lo = normal.cdf(y[i]).max(1e-300).ln();
        let hi = normal.sf(y[k - 1 - i]).max(1e-300).ln();
        s += (2.0 * i as f64 + 1.0) * (lo + hi);
    }
    let a2 = -kf - s / kf;
    let a = a2 * (1.0 + 0.75 / kf + 2.25 / (kf * kf));
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    Some((a, p.clamp(0.0, 1.0)))
}

pub fn probe_stats(label: &str, v: &[f64]) -> ProbeStats {
    let k = v.len() as f64;
    let (mean, m2, m3, m4) = moments(v);
    let skewness_se = (6.0 * k * (k - 1.0) / ((k - 2.0) * (k + 1.0) * (k + 3.0))).sqrt();
    let kurtosis_se = 2.0 * skewness_se * ((k * k - 1.0) / ((k - 3.0) * (k + 5.0))).sqrt();
    match anderson_darling(v) {
        Some((a, p)) => ProbeStats {
            label: label.to_string(),
            mean,
            variance: m2 * k / (k - 1.0),
            skewness: m3 / m2.powf(1.5),
            skewness_se,
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
            kurtosis_se,
            anderson_darling: a,
            p_value: p,
            degenerate: false,
        },
        None => ProbeStats {
            label: label.to_string(),
            mean,
            variance: 0.0,
            skewness: 0.0,
            skewness_se,
            excess_kurtosis: 0.0,
            kurtosis_se,
            anderson_darling: 0.0,
            p_value: 1.0,
            degenerate: true,
        },
    }
}

/// Per-probe diagnostics and the correlation matrix with Fisher-z 95%
/// intervals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianityReport {
    pub samples: usize,
    pub probes: Vec<ProbeStats>,
    pub correlation: Vec<Vec<f64>>,
    pub correlation_ci: Vec<Vec<[f64; 2]>>,
}

/// Minimum ensemble size for [`gaussianity_report`].
pub const MIN_SAMPLES: usize = 500;

pub fn gaussianity_report(ens: &FluctuationEnsemble, probes: &[Probe]) -> Result<GaussianityReport> {
    if ens.len() < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!("need at least {MIN_SAMPLES} samples, got {}", ens.len())));
    }
    let values = probes.iter().map(|p| ens.probe_values(p)).collect::<Result<Vec<_>>>()?;
    let stats: Vec<ProbeStats> = probes.iter().zip(&values).map(|(p, v)| probe_stats(&p.label(), v)).collect();
    let k = ens.len() as f64;
    let z = 1.959_963_984_540_054 / (k - 3.0).sqrt();
    let mut correlation = vec![vec![0.0; probes.len()]; probes.len()];
    let mut correlation_ci = vec![vec![[0.0; 2]; probes.len()]; probes.len()];
    for a in 0..probes.len() {
        for b in 0..probes.len() {
            let r = if stats[a].degenerate || stats[b].degenerate {
                0.0
            } else {
                sample_cov(&values[a], &values[b]) / (stats[a].variance * stats[b].variance).sqrt()
            };
            let r = r.clamp(-1.0, 1.0);
            correlation[a][b] = r;
            let fz = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh();
            correlation_ci[a][b] = [(fz - z).tanh(), (fz + z).tanh()];
        }
    }
    Ok(GaussianityReport { samples: ens.len(), probes: stats, correlation, correlation_ci })
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len() as f64;
    let ma = a.iter().sum::<f64>() / k;
    let mb = b.iter().sum::<f64>() / k;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (k - 1.0)
}

/// Sample covariance with a delete-one-block jackknife standard error over
/// `blocks` contiguous batches.
pub fn jackknife_cov(a: &[f64], b: &[f64], blocks: usize) -> Result<(f64, f64)> {
    if a.len() != b.len() || blocks < 2 || a.len() < 2 * blocks {
        return Err(Error::InvalidInput("jackknife needs equal lengths and at least two samples per block".into()));
    }
    let full = sample_cov(a, b);
    let k = a.len();
    let leave: Vec<f64> = (0..blocks)
        .map(|g| {
            let (lo, hi) = (g * k / blocks, (g + 1) * k / blocks);
            let ra: Vec<f64> = a[..lo].iter().chain(&a[hi..]).copied().collect();
            let rb: Vec<f64> = b[..lo].iter().chain(&b[hi..]).copied().collect();
            sample_cov(&ra, &rb)
        })
        .collect();
    let g = blocks as f64;
    let mean = leave.iter().sum::<f64>() / g;
    let var = (g - 1.0) / g * leave.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok((full, var.sqrt()))
}

/// One row of the predicted-vs-empirical covariance table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceRow {
    pub a: usize,
    pub b: usize,
    pub predicted: f64,
    pub empirical: f64,
    pub sigma: f64,
    pub z_score: f64,
    pub relative: f64,
}

/// Number of jackknife blocks in [`compare_covariances`].
pub const JACKKNIFE_BLOCKS: usize = 20;

/// Compares point-probe covariances with the prediction averaged over the
/// two probe discs.
pub fn compare_covariances(
    ens: &FluctuationEnsemble,
    probes: &[Probe],
    pairs: &[[usize; 2]],
    pred: &GffPredictor,
) -> Result<Vec<CovarianceRow>> {
    let n = ens.n as f64;
    pairs
        .iter()
        .map(|&[a, b]| {
            let (pa, pb) = (probes.get(a), probes.get(b));
            let (Some(pa), Some(pb)) = (pa, pb) else {
                return Err(Error::InvalidInput("pair index out of range".into()));
            };
            let na = ens.probe_nodes(pa)?;
            let nb = ens.probe_nodes(pb)?;
            let ua = na
                .iter()
                .map(|&v| {
                    let (i, j) = ens.mesh.nodes[v];
                    pred.u(i as f64 / n, j as f64 / n)
                })
                .collect::<Result<Vec<_>>>()?;
            let ub = nb
                .iter()
                .map(|&v| {
                    let (i, j) = ens.mesh.nodes[v];
                    pred.u(i as f64 / n, j as f64 / n)
                })
                .collect::<Result<Vec<_>>>()?;
            if na.iter().any(|v| nb.contains(v)) {
                return Err(Error::InvalidInput(format!("probe discs {a} and {b} overlap")));
            }
            let predicted = ua.iter().flat_map(|&u| ub.iter().map(move |&v| green(u, v))).sum::<f64>()
                / (ua.len() * ub.len()) as f64;
            let va = ens.probe_values(pa)?;
            let vb = ens.probe_values(pb)?;
            let (empirical, sigma) = jackknife_cov(&va, &vb, JACKKNIFE_BLOCKS)?;
            Ok(CovarianceRow {
                a,
                b,
                predicted,
                empirical,
                sigma,
                z_score: (empirical - predicted).abs() / sigma,
                relative: (empirical - predicted).abs() / predicted.abs(),
            })
        })
        .collect()
}
