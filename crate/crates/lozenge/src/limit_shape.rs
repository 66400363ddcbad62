//! The limit shape: the maximizer of `∬ σ(∇h)` over admissible height
//! functions, its complex slope `f`, the complex Burgers equation
//! `∂ₜf/f + ∂ₓf/(f+1) = 0` and the arctic curve.
//!
//! The discrete problem lives on [`Mesh`]: heights at nodes, one density
//! triple per triangle. It is solved by a primal barrier Newton method.
//! Slack constraints that hold with equality for every admissible height
//! (zero-weight cycles of the difference-constraint graph) are eliminated
//! first by merging the nodes they tie together, so the remaining problem
//! has a strictly feasible interior and, because `σ'(p) → +∞` as `p → 0`,
//! an interior maximizer.

use crate::domain::{config_height, Domain, IntervalHeight, ParticleConfiguration, Slope};
use crate::error::{Error, Result};
use crate::linalg::Skyline;
use crate::lobachevsky::{lobachevsky_unchecked, sigma_prime, sigma_second, DensityTriple};
use crate::mesh::{Mesh, TriKind, Triangle};
use crate::rational::{format_rat, rat_to_f64, Rat, RatStr};
use num_complex::Complex64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

/// Liquid threshold on the local densities.
pub const LIQUID_EPS: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Bottom boundary data

/// Height profile on the bottom slice `t = s` of the region `P ∩ {t >= s}`,
/// piecewise linear on each slice interval.
#[derive(Clone, Debug, PartialEq)]
pub struct BottomHeight {
    pub t: Rat,
    pub pieces: Vec<IntervalHeight>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BottomFile {
    t: RatStr,
    /// One list of `[x, h]` breakpoints per slice interval.
    pieces: Vec<Vec<[RatStr; 2]>>,
}

impl BottomHeight {
    /// The height of a particle configuration on its lower slice.
    pub fn from_configuration(d: &Domain, c: &ParticleConfiguration) -> Result<Self> {
        Ok(BottomHeight { t: c.t.0, pieces: config_height(c, d)? })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: BottomFile = serde_json::from_str(text)?;
        let mut pieces = Vec::with_capacity(f.pieces.len());
        for bp in f.pieces {
            if bp.len() < 2 {
                return Err(Error::InvalidInput("each bottom piece needs at least two breakpoints".into()));
            }
            let breakpoints: Vec<(Rat, Rat)> = bp.iter().map(|[x, h]| (x.0, h.0)).collect();
            if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidInput("bottom breakpoints must increase in x".into()));
            }
            let interval = (breakpoints[0].0, breakpoints[breakpoints.len() - 1].0);
            pieces.push(IntervalHeight { interval, breakpoints });
        }
        Ok(BottomHeight { t: f.t.0, pieces })
    }

    pub fn to_json(&self) -> String {
        let f = BottomFile {
            t: RatStr(self.t),
            pieces: self
                .pieces
                .iter()
                .map(|p| p.breakpoints.iter().map(|&(x, h)| [RatStr(x), RatStr(h)]).collect())
                .collect(),
        };
        serde_json::to_string(&f).expect("bottom height serializes")
    }

    pub fn eval(&self, x: Rat) -> Option<Rat> {
        self.pieces.iter().find_map(|p| p.eval(x))
    }

    /// Checks the profile is 1-Lipschitz and nondecreasing and matches the
    /// boundary height at the slice endpoints.
    pub fn check(&self, d: &Domain) -> Result<()> {
        let slice = d.slice_at(self.t, crate::domain::Side::Lower)?;
        for (a, b) in &slice.intervals {
            for x in [*a, *b] {
                let want = d
                    .boundary_height(&crate::domain::RatPoint::new(x, self.t))
                    .expect("slice endpoint lies on the boundary");
                match self.eval(x) {
                    Some(h) if h == want => {}
                    _ => {
                        return Err(Error::InfeasibleBoundary(format!(
                            "bottom height at x = {} does not match the boundary",
                            format_rat(&x)
                        )))
                    }
                }
            }
        }
        for p in &self.pieces {
            for w in p.breakpoints.windows(2) {
                let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                if slope < Rat::zero() || slope > Rat::from_integer(1) {
                    return Err(Error::InfeasibleBoundary("bottom height must have slope in [0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Solver

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Target for the max-norm of the functional's gradient in mesh units.
    pub tolerance: f64,
    pub max_newton_steps: usize,
    /// First barrier weight; divided by 10 per stage down to `mu_min`,
    /// after which the barrier is dropped. Zero runs plain damped Newton
    /// and falls back to the barrier schedule if that stalls.
    pub mu_start: f64,
    pub mu_min: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-6, max_newton_steps: 1500, mu_start: 0.0, mu_min: 1e-9 }
    }
}

/// Solved height field on a mesh.
#[derive(Clone, Debug)]
pub struct HeightField {
    mesh: Mesh,
    /// Node heights in mesh units.
    heights: Vec<f64>,
    /// `∬ σ(∇h)` for the discrete maximizer (real units).
    pub functional: f64,
    /// Final max-norm of the gradient of the discrete functional.
    pub residual: f64,
    /// Functional value after each accepted step, starting point first.
    pub history: Vec<f64>,
    pub newton_steps: usize,
}

#[derive(Clone, Copy)]
struct SlackRef {
    cu: usize,
    cv: usize,
    /// Integer part: `base_u - base_v + constant`.
    int: i64,
    active: bool,
}

struct Problem {
    base: Vec<i64>,
    comp: Vec<usize>,
    var: Vec<Option<usize>>,
    n_var: usize,
    slacks: Vec<[SlackRef; 3]>,
    first: Vec<usize>,
    scale: f64,
}

/// Variable part of the heights, one entry per merged component:
/// `g = r + delta` with `r` integral and `|delta| <= 1/2` after rebasing.
#[derive(Clone)]
struct State {
    r: Vec<i64>,
    delta: Vec<f64>,
}

/// Slack endpoints `(plus, minus, constant)` with `p = h[plus] - h[minus] + constant`.
fn slack_terms(t: &Triangle) -> [(usize, usize, i64); 3] {
    let [a, b, c] = t.nodes;
    match t.kind {
        TriKind::Lower => [(c, a, 0), (b, c, 0), (a, b, 1)],
        TriKind::Upper => [(c, a, 0), (a, b, 0), (b, c, 1)],
    }
}

/// Strongly connected components, numbered in completion order (so every
/// edge between components goes from a higher to a lower number).
fn tarjan(adj: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let n = adj.len();
    const NONE: usize = usize::MAX;
    let mut index = vec![NONE; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![NONE; n];
    let (mut next, mut nc) = (0, 0);
    let mut call: Vec<(usize, usize)> = Vec::new();
    for s in 0..n {
        if index[s] != NONE {
            continue;
        }
        index[s] = next;
        low[s] = next;
        next += 1;
        stack.push(s);
        on_stack[s] = true;
        call.push((s, 0));
        while let Some(top) = call.len().checked_sub(1) {
            let (v, ei) = call[top];
            if ei < adj[v].len() {
                call[top].1 += 1;
                let w = adj[v][ei];
                if index[w] == NONE {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(u, _)) = call.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("scc stack");
                        on_stack[w] = false;
                        comp[w] = nc;
                        if w == v {
                            break;
                        }
                    }
                    nc += 1;
                }
            }
        }
    }
    (comp, nc)
}

impl Problem {
    /// Eliminates implicit equalities and builds a strictly feasible start.
    fn build(mesh: &Mesh) -> Result<(Problem, State)> {
        let hmax = mesh.extremal_heights(false).map_err(|e| match e {
            Error::NoTiling(m) => Error::InfeasibleBoundary(m),
            other => other,
        })?;
        let v = mesh.len();
        let src = v;
        let pot = |u: usize| if u == src { 0 } else { hmax[u] };
        let mut all: Vec<(usize, usize, i64)> = mesh.edges.iter().map(|e| (e.from, e.to, e.weight)).collect();
        for (u, p) in mesh.pins.iter().enumerate() {
            if let Some(b) = *p {
                all.push((src, u, b));
                all.push((u, src, -b));
            }
        }
        let tight: Vec<(usize, usize)> = all
            .iter()
            .filter(|&&(a, b, w)| w + pot(a) - pot(b) == 0)
            .map(|&(a, b, _)| (a, b))
            .collect();
        let mut adj = vec![Vec::new(); v + 1];
        for &(a, b) in &tight {
            adj[a].push(b);
        }
        let (comp, nc) = tarjan(&adj);
        let fixed = comp[src];
        // Longest chain of strict tight edges from the source component.
        let mut inter: Vec<(usize, usize)> = tight
            .iter()
            .map(|&(a, b)| (comp[a], comp[b]))
            .filter(|(a, b)| a != b)
            .collect();
        inter.sort_unstable_by_key(|x| std::cmp::Reverse(x.0));
        let mut count = vec![i64::MIN; nc];
        count[fixed] = 0;
        for (a, b) in inter {
            if count[a] != i64::MIN {
                count[b] = count[b].max(count[a] + 1);
            }
        }
        if count.contains(&i64::MIN) {
            return Err(Error::InfeasibleBoundary("mesh nodes unreachable from the boundary".into()));
        }
        let max_count = count.iter().copied().max().unwrap_or(0);
        let eps = 0.5 / (max_count + 1) as f64;

        // Variables in order of their first node (nodes are row-major).
        let mut first_node = vec![usize::MAX; nc];
        for u in 0..v {
            first_node[comp[u]] = first_node[comp[u]].min(u);
        }
        let mut order: Vec<usize> = (0..nc).filter(|&c| c != fixed).collect();
        order.sort_by_key(|&c| first_node[c]);
        let mut var = vec![None; nc];
        for (k, &c) in order.iter().enumerate() {
            var[c] = Some(k);
        }
        let n_var = order.len();

        let comp_nodes = comp[..v].to_vec();
        let mut slacks = Vec::with_capacity(mesh.triangles.len());
        let mut first: Vec<usize> = (0..n_var).collect();
        for t in &mesh.triangles {
            let refs = slack_terms(t).map(|(u, w, c)| {
                let (cu, cv) = (comp_nodes[u], comp_nodes[w]);
                SlackRef { cu, cv, int: hmax[u] - hmax[w] + c, active: cu != cv }
            });
            let vars: Vec<usize> = t.nodes.iter().filter_map(|&u| var[comp_nodes[u]]).collect();
            if let Some(&lo) = vars.iter().min() {
                for &x in &vars {
                    first[x] = first[x].min(lo);
                }
            }
            slacks.push(refs);
        }
        let mut state = State { r: vec![0; nc], delta: vec![0.0; nc] };
        for c in 0..nc {
            if c != fixed {
                state.delta[c] = -(count[c] as f64) * eps;
                state.rebase(c);
            }
        }
        let scale = 1.0 / (mesh.resolution as f64).powi(2);
        Ok((Problem { base: hmax, comp: comp_nodes, var, n_var, slacks, first, scale }, state))
    }

    fn slack(&self, s: &SlackRef, st: &State) -> f64 {
        let ip = s.int + st.r[s.cu] - st.r[s.cv];
        ip as f64 + (st.delta[s.cu] - st.delta[s.cv])
    }

    fn triangle_slacks(&self, t: usize, st: &State) -> [f64; 3] {
        self.slacks[t].map(|s| self.slack(&s, st))
    }

    fn heights(&self, st: &State) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.comp)
            .map(|(&b, &c)| (b + st.r[c]) as f64 + st.delta[c])
            .collect()
    }

    /// Gradient of `F_mesh + mu Σ ln p` (into `grad`) and of `F_mesh`
    /// alone (returned max-norm); optionally minus the Hessian.
    fn evaluate(&self, st: &State, mu: f64, grad: &mut [f64], mut neg_hess: Option<&mut Skyline>) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_f = vec![0.0; self.n_var];
        if let Some(h) = neg_hess.as_deref_mut() {
            h.clear();
        }
        for (t, refs) in self.slacks.iter().enumerate() {
            let p = self.triangle_slacks(t, st);
            for (k, s) in refs.iter().enumerate() {
                if !s.active {
                    continue;
                }
                let (pk, ck) = (p[k], p[(k + 1) % 3] + p[(k + 2) % 3]);
                let (d1, d2) = if pk <= 0.5 {
                    (sigma_prime(pk), sigma_second(pk))
                } else {
                    (sigma_prime(ck), -sigma_second(ck))
                };
                let gf = 0.5 * d1;
                let g = gf + mu / pk;
                let dd = -(0.5 * d2 - mu / (pk * pk));
                let (vu, vv) = (self.var[s.cu], self.var[s.cv]);
                if let Some(a) = vu {
                    grad[a] += g;
                    grad_f[a] += gf;
                }
                if let Some(b) = vv {
                    grad[b] -= g;
                    grad_f[b] -= gf;
                }
                if let Some(h) = neg_hess.as_deref_mut() {
                    if let Some(a) = vu {
                        h.add(a, a, dd);
                    }
                    if let Some(b) = vv {
                        h.add(b, b, dd);
                    }
                    if let (Some(a), Some(b)) = (vu, vv) {
                        h.add(a, b, -dd);
                    }
                }
            }
        }
        grad_f.iter().fold(0.0f64, |m, g| m.max(g.abs()))
    }

    fn functional(&self, st: &State) -> f64 {
        let total: f64 = (0..self.slacks.len()).map(|t| 0.5 * sigma_folded(self.triangle_slacks(t, st))).sum();
        total * self.scale
    }

    fn direction_slack(&self, s: &SlackRef, d: &[f64]) -> f64 {
        let get = |c: usize| self.var[c].map_or(0.0, |k| d[k]);
        get(s.cu) - get(s.cv)
    }
}

impl State {
    fn rebase(&mut self, c: usize) {
        let r = self.delta[c].round();
        if r != 0.0 {
            self.r[c] += r as i64;
            self.delta[c] -= r;
        }
    }
}

/// `σ` for a triple whose entries sum to one, using the complement of the
/// two small entries for large ones.
fn sigma_folded(p: [f64; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let pk = p[k].max(0.0);
            if pk <= 0.5 {
                lobachevsky_unchecked(PI * pk)
            } else {
                let ck = (p[(k + 1) % 3] + p[(k + 2) % 3]).max(0.0);
                -lobachevsky_unchecked(PI * ck)
            }
        })
        .sum::<f64>()
        / PI
}

/// Maximizes the discrete surface-tension functional on `mesh` with the
/// boundary heights pinned.
pub fn solve_on_mesh(mesh: Mesh, opts: &SolverOptions) -> Result<HeightField> {
    let (prob, st) = Problem::build(&mesh)?;
    match run_newton(&prob, st.clone(), opts) {
        Err(Error::Convergence(_)) if opts.mu_start == 0.0 => {
            run_newton(&prob, st, &SolverOptions { mu_start: 1e-2, ..opts.clone() })
        }
        other => other,
    }
    .map(|(st, residual, history, steps)| {
        let heights = prob.heights(&st);
        let functional = prob.functional(&st);
        HeightField { mesh, heights, functional, residual, history, newton_steps: steps }
    })
}

fn run_newton(prob: &Problem, mut st: State, opts: &SolverOptions) -> Result<(State, f64, Vec<f64>, usize)> {
    let nv = prob.n_var;
    let mut history = vec![prob.functional(&st)];
    let mut grad = vec![0.0; nv];
    let mut steps = 0usize;
    let mut mu = opts.mu_start;
    let mut hess = Skyline::new(prob.first.clone());
    let mut residual = if nv == 0 { 0.0 } else { f64::INFINITY };
    if nv > 0 {
        'stages: loop {
            let mut stage_steps = 0;
            loop {
                residual = prob.evaluate(&st, mu, &mut grad, Some(&mut hess));
                if mu == 0.0 && residual <= opts.tolerance {
                    break 'stages;
                }
                if steps >= opts.max_newton_steps {
                    return Err(Error::Convergence(format!(
                        "variational solver stopped after {steps} Newton steps with residual {residual:.3e}"
                    )));
                }
                let mut d = newton_direction(&mut hess, &grad, || {
                    let mut h = Skyline::new(prob.first.clone());
                    prob.evaluate(&st, mu, &mut vec![0.0; nv], Some(&mut h));
                    h
                })?;
                let lam2: f64 = grad.iter().zip(&d).map(|(g, x)| g * x).sum();
                if mu > 0.0 && (lam2 < 1e-12 || stage_steps >= 60) {
                    break;
                }
                match line_search(prob, &st, mu, &mut d, lam2) {
                    Some(alpha) => {
                        for c in 0..st.delta.len() {
                            if let Some(k) = prob.var[c] {
                                st.delta[c] += alpha * d[k];
                                st.rebase(c);
                            }
                        }
                        history.push(prob.functional(&st));
                        steps += 1;
                        stage_steps += 1;
                    }
                    None if mu > 0.0 => break,
                    None => {
                        return Err(Error::Convergence(format!(
                            "line search stalled with residual {residual:.3e} after {steps} Newton steps"
                        )))
                    }
                }
            }
            mu = if mu > opts.mu_min { mu / 10.0 } else { 0.0 };
        }
    }
    Ok((st, residual, history, steps))
}

fn newton_direction(hess: &mut Skyline, grad: &[f64], rebuild: impl Fn() -> Skyline) -> Result<Vec<f64>> {
    let mut d = grad.to_vec();
    if hess.factor() {
        hess.solve(&mut d);
        return Ok(d);
    }
    let fresh = rebuild();
    let max_diag = (0..fresh.dim()).map(|i| fresh.diag(i).abs()).fold(1e-300, f64::max);
    let mut shift = 1e-12 * max_diag;
    for _ in 0..30 {
        let mut h = fresh.clone();
        h.add_diag(shift);
        if h.factor() {
            let mut d = grad.to_vec();
            h.solve(&mut d);
            return Ok(d);
        }
        shift *= 10.0;
    }
    Err(Error::Convergence("Hessian could not be regularized".into()))
}

/// Backtracking line search keeping all slacks positive. A step is
/// accepted only if the functional does not decrease and the barrier
/// objective increases enough.
fn line_search(prob: &Problem, st: &State, mu: f64, d: &mut [f64], lam2: f64) -> Option<f64> {
    let mut alpha_max: f64 = 1.0;
    let mut cur = Vec::with_capacity(prob.slacks.len());
    let mut dir = Vec::with_capacity(prob.slacks.len());
    for (t, refs) in prob.slacks.iter().enumerate() {
        let p = prob.triangle_slacks(t, st);
        let dp = refs.map(|s| if s.active { prob.direction_slack(&s, d) } else { 0.0 });
        for k in 0..3 {
            if refs[k].active && dp[k] < 0.0 {
                alpha_max = alpha_max.min(0.99 * p[k] / -dp[k]);
            }
        }
        cur.push(p);
        dir.push(dp);
    }
    let mut alpha = alpha_max;
    for _ in 0..60 {
        let mut df = 0.0;
        let mut db = 0.0;
        let mut ok = true;
        for t in 0..cur.len() {
            let p = cur[t];
            let q = [0, 1, 2].map(|k| p[k] + alpha * dir[t][k]);
            if (0..3).any(|k| prob.slacks[t][k].active && q[k] <= 0.0) {
                ok = false;
                break;
            }
            if dir[t].iter().all(|&x| x == 0.0) {
                continue;
            }
            df += 0.5 * (sigma_folded(q) - sigma_folded(p));
            if mu > 0.0 {
                for k in 0..3 {
                    if prob.slacks[t][k].active {
                        db += (alpha * dir[t][k] / p[k]).ln_1p();
                    }
                }
            }
        }
        if ok {
            let gain = df + mu * db;
            let small = lam2 < 1e-10 && alpha == 1.0;
            if df >= -1e-15 * cur.len() as f64 && (gain >= 1e-4 * alpha * lam2 || small) {
                return Some(alpha);
            }
        }
        alpha *= 0.5;
    }
    None
}

/// Solves the variational problem on `P` (or on `P ∩ {t >= s}` with the
/// given bottom profile) on the mesh with `k` cells per lattice unit.
pub fn solve_variational(d: &Domain, k: i64, bottom: Option<&BottomHeight>, opts: &SolverOptions) -> Result<HeightField> {
    let mesh = Mesh::new(d, k)?;
    let mesh = match bottom {
        None => mesh,
        Some(b) => {
            b.check(d)?;
            let nres = mesh.resolution;
            let j0 = b.t * Rat::from_integer(nres);
            if !j0.is_integer() {
                return Err(Error::InfeasibleBoundary(format!("bottom time {} is not a mesh row", format_rat(&b.t))));
            }
            mesh.restrict_from(j0.to_integer(), |i| {
                let h = b.eval(Rat::new(i, nres))? * Rat::from_integer(nres);
                h.is_integer().then(|| h.to_integer())
            })?
        }
    };
    solve_on_mesh(mesh, opts)
}

impl HeightField {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// Mesh spacing `1/N`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.mesh.resolution as f64
    }

    /// Heights in real units, one per mesh node.
    pub fn heights(&self) -> Vec<f64> {
        let dx = self.spacing();
        self.heights.iter().map(|h| h * dx).collect()
    }

    pub fn height_at(&self, i: i64, j: i64) -> Option<f64> {
        self.mesh.node(i, j).map(|v| self.heights[v] * self.spacing())
    }

    /// Real coordinates of node `v`.
    pub fn point(&self, v: usize) -> (f64, f64) {
        let (i, j) = self.mesh.nodes[v];
        (i as f64 * self.spacing(), j as f64 * self.spacing())
    }

    /// Densities on each triangle.
    pub fn triangle_densities(&self) -> Vec<[f64; 3]> {
        self.mesh.triangles.iter().map(|t| t.slacks(&self.heights)).collect()
    }

    /// Densities from centered differences at an interior node.
    pub fn centered_densities(&self, i: i64, j: i64) -> Option<[f64; 3]> {
        let h = |a, b| self.mesh.node(a, b).map(|v| self.heights[v]);
        let hx = (h(i + 1, j)? - h(i - 1, j)?) / 2.0;
        let ht = (h(i, j + 1)? - h(i, j - 1)?) / 2.0;
        Some([hx + ht, -ht, 1.0 - hx])
    }

    /// Densities at each node, averaged over the adjacent triangles.
    pub fn node_densities(&self) -> Vec<[f64; 3]> {
        let mut acc = vec![([0.0; 3], 0u32); self.mesh.len()];
        for (t, p) in self.mesh.triangles.iter().zip(self.triangle_densities()) {
            for &v in &t.nodes {
                for k in 0..3 {
                    acc[v].0[k] += p[k];
                }
                acc[v].1 += 1;
            }
        }
        acc.into_iter().map(|(s, c)| s.map(|x| x / c.max(1) as f64)).collect()
    }

    pub fn phases(&self, eps: f64) -> Vec<Phase> {
        self.node_densities().into_iter().map(|p| Phase::of(p, eps)).collect()
    }

    /// CSV rows `x,t,h` in real units.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,t,h\n");
        for (v, h) in self.heights().iter().enumerate() {
            let (x, t) = self.point(v);
            out.push_str(&format!("{x},{t},{h}\n"));
        }
        out
    }
}

/// `∬ σ(∇h)` of a mesh height field given in real units.
pub fn discrete_functional(mesh: &Mesh, h: &[f64]) -> f64 {
    let n = mesh.resolution as f64;
    let hm: Vec<f64> = h.iter().map(|x| x * n).collect();
    let total: f64 = mesh.triangles.iter().map(|t| 0.5 * sigma_folded(t.slacks(&hm))).sum();
    total / (n * n)
}

/// Gradient of [`discrete_functional`] with respect to the real node
/// heights, from `∂σ/∂(∂ₓh) = ln|f+1|` and `∂σ/∂(∂ₜh) = ln|f|`.
pub fn discrete_gradient(mesh: &Mesh, h: &[f64]) -> Vec<f64> {
    let n = mesh.resolution as f64;
    let hm: Vec<f64> = h.iter().map(|x| x * n).collect();
    let mut g = vec![0.0; mesh.len()];
    // Area Δ²/2 times the gradient coefficients, which are ±N.
    let w = 0.5 / n;
    for t in &mesh.triangles {
        let [pa, pb, pc] = t.slacks(&hm);
        let (s_up, s_r, s_e) = ((PI * pa).sin(), (PI * pb).sin(), (PI * pc).sin());
        let ln_f1 = (s_e / s_up).ln();
        let ln_f = (s_r / s_up).ln();
        let [a, b, c] = t.nodes;
        // (∂ₓh, ∂ₜh) as node differences.
        let (x_plus, x_minus, t_plus, t_minus) = match t.kind {
            TriKind::Lower => (b, a, c, b),
            TriKind::Upper => (c, b, b, a),
        };
        g[x_plus] += w * ln_f1;
        g[x_minus] -= w * ln_f1;
        g[t_plus] += w * ln_f;
        g[t_minus] -= w * ln_f;
    }
    g
}

// ---------------------------------------------------------------------------
// Complex slope

/// `arg` with values in `[-π, 0]` on the closed lower half-plane.
pub fn arg_star(z: Complex64) -> f64 {
    if z.im == 0.0 && z.re < 0.0 {
        -PI
    } else {
        z.arg()
    }
}

/// Complex slope of a density triple `(p_up, p_right, p_empty)`: the
/// triangle `0, -1, f` has angles `π p_empty`, `π p_right`, `π p_up` at
/// those vertices.
pub fn slope_from_triple(p: &DensityTriple) -> Result<Complex64> {
    p.validate()?;
    let s_up = (PI * p.p_a).sin();
    if s_up <= 0.0 {
        return Err(Error::InvalidTriple(format!("{:?}: complex slope is infinite", p.as_array())));
    }
    let modulus = (PI * p.p_b).sin() / s_up;
    Ok(Complex64::from_polar(modulus, -PI * (1.0 - p.p_c)))
}

/// Reads the densities back from the angles of `f` and `f + 1`.
pub fn triple_from_slope(f: Complex64) -> Result<DensityTriple> {
    if f.im > 0.0 {
        return Err(Error::InvalidInput(format!("complex slope {f} is in the upper half-plane")));
    }
    let p_c = 1.0 + arg_star(f) / PI;
    let p_b = -arg_star(f + 1.0) / PI;
    DensityTriple::new(1.0 - p_b - p_c, p_b, p_c)
}

/// `f` at the liquid mesh nodes, keyed by node `(i, j)`.
#[derive(Clone, Debug, Default)]
pub struct ComplexSlopeField {
    pub resolution: i64,
    pub values: BTreeMap<(i64, i64), Complex64>,
}

impl ComplexSlopeField {
    pub fn get(&self, i: i64, j: i64) -> Option<Complex64> {
        self.values.get(&(i, j)).copied()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    /// CSV rows `x,t,re,im`.
    pub fn to_csv(&self) -> String {
        let dx = self.spacing();
        let mut out = String::from("x,t,re,im\n");
        for (&(i, j), f) in &self.values {
            out.push_str(&format!("{},{},{},{}\n", i as f64 * dx, j as f64 * dx, f.re, f.im));
        }
        out
    }
}

fn is_liquid(p: [f64; 3], eps: f64) -> bool {
    p.iter().all(|&x| x > eps)
}

/// `f` at node `(i, j)` from centered differences.
pub fn slope_at(hf: &HeightField, i: i64, j: i64, eps: f64) -> Result<Complex64> {
    let dx = hf.spacing();
    let frozen = || Error::FrozenNode(i as f64 * dx, j as f64 * dx);
    let p = hf.centered_densities(i, j).ok_or_else(frozen)?;
    if !is_liquid(p, eps) {
        return Err(frozen());
    }
    let s = p.iter().sum::<f64>();
    slope_from_triple(&DensityTriple { p_a: p[0] / s, p_b: p[1] / s, p_c: p[2] / s })
}

/// The complex slope at every interior node where all densities exceed
/// `eps`.
pub fn gradient_to_slope(hf: &HeightField, eps: f64) -> ComplexSlopeField {
    let mut values = BTreeMap::new();
    for &(i, j) in &hf.mesh.nodes {
        if let Ok(f) = slope_at(hf, i, j, eps) {
            values.insert((i, j), f);
        }
    }
    ComplexSlopeField { resolution: hf.mesh.resolution, values }
}

/// Burgers residuals keyed by node; `None` flags a singular stencil.
#[derive(Clone, Debug, Default)]
pub struct BurgersResidual {
    pub resolution: i64,
    pub values: BTreeMap<(i64, i64), Option<Complex64>>,
}

impl BurgersResidual {
    /// Discrete `L²` norm `(Σ |r|² Δ²)^{1/2}` over the regular nodes whose
    /// real coordinates satisfy `keep`.
    pub fn l2_norm(&self, keep: impl Fn(f64, f64) -> bool) -> f64 {
        let dx = 1.0 / self.resolution as f64;
        self.values
            .iter()
            .filter(|(&(i, j), _)| keep(i as f64 * dx, j as f64 * dx))
            .filter_map(|(_, r)| r.map(|r| r.norm_sqr() * dx * dx))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_norm(&self, keep: impl Fn(f64, f64) -> bool) -> f64 {
        let dx = 1.0 / self.resolution as f64;
        self.values
            .iter()
            .filter(|(&(i, j), _)| keep(i as f64 * dx, j as f64 * dx))
            .filter_map(|(_, r)| r.map(|r| r.norm()))
            .fold(0.0, f64::max)
    }

    pub fn singular(&self) -> usize {
        self.values.values().filter(|r| r.is_none()).count()
    }
}

/// `∂ₜf/f + ∂ₓf/(f+1)` by centered differences at every node whose four
/// neighbours carry a value.
pub fn burgers_residual(field: &ComplexSlopeField) -> BurgersResidual {
    let dx = field.spacing();
    let mut values = BTreeMap::new();
    for &(i, j) in field.values.keys() {
        let (Some(xp), Some(xm), Some(tp), Some(tm)) =
            (field.get(i + 1, j), field.get(i - 1, j), field.get(i, j + 1), field.get(i, j - 1))
        else {
            continue;
        };
        let f = field.values[&(i, j)];
        let r = if f.norm() < 1e-14 || (f + 1.0).norm() < 1e-14 {
            None
        } else {
            Some((tp - tm) / (2.0 * dx) / f + (xp - xm) / (2.0 * dx) / (f + 1.0))
        };
        values.insert((i, j), r);
    }
    BurgersResidual { resolution: field.resolution, values }
}

/// Moves `z₀` along the characteristic of slope `f₀` for time `t`;
/// `f` is carried unchanged. An infinite `f₀` moves at speed 1.
pub fn characteristic_advance(f0: Complex64, z0: Complex64, t: f64) -> Result<(Complex64, Complex64)> {
    if f0 == Complex64::new(-1.0, 0.0) {
        return Err(Error::InfiniteSpeed);
    }
    let speed = if f0.is_finite() { f0 / (f0 + 1.0) } else { Complex64::new(1.0, 0.0) };
    Ok((f0, z0 + speed * t))
}

// ---------------------------------------------------------------------------
// Phases and the arctic curve

/// Which lozenge type fills a frozen node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Lozenge {
    Up,
    Right,
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Liquid,
    Frozen(Lozenge),
}

impl Phase {
    pub fn of(p: [f64; 3], eps: f64) -> Phase {
        if is_liquid(p, eps) {
            return Phase::Liquid;
        }
        let k = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b])).expect("three entries");
        Phase::Frozen([Lozenge::Up, Lozenge::Right, Lozenge::Empty][k])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub points: Vec<(f64, f64)>,
    pub closed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArcticCurve {
    pub polylines: Vec<Polyline>,
    /// For each boundary segment of the domain, the smallest distance from
    /// the curve (infinite when the curve is empty).
    pub side_distance: Vec<f64>,
}

impl ArcticCurve {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    /// CSV rows `curve,x,t`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("curve,x,t\n");
        for (c, pl) in self.polylines.iter().enumerate() {
            for &(x, t) in &pl.points {
                out.push_str(&format!("{c},{x},{t}\n"));
            }
        }
        out
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dt) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dt * dt;
    let s = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dt) / len2).clamp(0.0, 1.0) };
    let (qx, qt) = (a.0 + s * dx, a.1 + s * dt);
    ((p.0 - qx).powi(2) + (p.1 - qt).powi(2)).sqrt()
}

/// Level set `min p = eps` of the node densities, traced by linear
/// interpolation on the mesh triangles.
pub fn arctic_curve(hf: &HeightField, d: &Domain, eps: f64) -> ArcticCurve {
    // Boundary nodes count as frozen, which closes the curve where the
    // liquid region touches a side.
    let g: Vec<f64> = hf
        .node_densities()
        .iter()
        .zip(&hf.mesh.pins)
        .map(|(p, pin)| if pin.is_some() { -eps } else { p[0].min(p[1]).min(p[2]) - eps })
        .collect();
    let pts: Vec<(f64, f64)> = (0..hf.mesh.len()).map(|v| hf.point(v)).collect();
    type Key = (usize, usize);
    let mut crossing: HashMap<Key, (f64, f64)> = HashMap::new();
    let mut segments: Vec<(Key, Key)> = Vec::new();
    for t in &hf.mesh.triangles {
        let mut keys = Vec::with_capacity(2);
        for e in 0..3 {
            let (u, v) = (t.nodes[e], t.nodes[(e + 1) % 3]);
            if (g[u] >= 0.0) != (g[v] >= 0.0) {
                let key = (u.min(v), u.max(v));
                let s = g[u] / (g[u] - g[v]);
                let p = (pts[u].0 + s * (pts[v].0 - pts[u].0), pts[u].1 + s * (pts[v].1 - pts[u].1));
                crossing.insert(key, p);
                keys.push(key);
            }
        }
        if keys.len() == 2 {
            segments.push((keys[0], keys[1]));
        }
    }
    let mut at: HashMap<Key, Vec<usize>> = HashMap::new();
    for (s, &(a, b)) in segments.iter().enumerate() {
        at.entry(a).or_default().push(s);
        at.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    for s0 in 0..segments.len() {
        if used[s0] {
            continue;
        }
        used[s0] = true;
        let walk = |start: Key, used: &mut Vec<bool>| -> Vec<Key> {
            let mut chain = vec![start];
            let mut cur = start;
            while let Some(&s) = at[&cur].iter().find(|&&s| !used[s]) {
                used[s] = true;
                let (a, b) = segments[s];
                cur = if a == cur { b } else { a };
                chain.push(cur);
            }
            chain
        };
        let (a, b) = segments[s0];
        let fwd = walk(b, &mut used);
        let mut back = walk(a, &mut used);
        back.reverse();
        back.extend(fwd);
        let closed = back.len() > 2 && back.first() == back.last();
        if closed {
            back.pop();
        }
        polylines.push(Polyline { points: back.iter().map(|k| crossing[k]).collect(), closed });
    }
    polylines.sort_by_key(|p| std::cmp::Reverse(p.points.len()));
    let side_distance = d
        .raw()
        .segments
        .iter()
        .map(|s| {
            let a = (rat_to_f64(&s.start.x), rat_to_f64(&s.start.t));
            let b = (rat_to_f64(&s.end.x), rat_to_f64(&s.end.t));
            polylines
                .iter()
                .flat_map(|pl| pl.points.iter())
                .map(|&p| point_segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    ArcticCurve { polylines, side_distance }
}

impl ComplexSlopeField {
    /// Bilinear interpolation at a real point; `None` unless all four
    /// surrounding nodes carry a value.
    pub fn interpolate(&self, x: f64, t: f64) -> Option<Complex64> {
        let n = self.resolution as f64;
        let (u, v) = (x * n, t * n);
        let (i, j) = (u.floor() as i64, v.floor() as i64);
        let (a, b) = (u - i as f64, v - j as f64);
        let f00 = self.get(i, j)?;
        let f10 = self.get(i + 1, j)?;
        let f01 = self.get(i, j + 1)?;
        let f11 = self.get(i + 1, j + 1)?;
        Some(f00 * (1.0 - a) * (1.0 - b) + f10 * a * (1.0 - b) + f01 * (1.0 - a) * b + f11 * a * b)
    }
}

/// Value of `f` on the curve at `p`, extrapolated from samples along the
/// inward normal with the model `f₀ + a√s + b s` (the square-root
/// singularity at the arctic curve).
fn extrapolate_to_curve(field: &ComplexSlopeField, p: (f64, f64), normal: (f64, f64)) -> Option<Complex64> {
    let dx = field.spacing();
    for sign in [1.0, -1.0] {
        let samples: Option<Vec<(f64, Complex64)>> = (2..=7)
            .map(|m| {
                let s = m as f64 * dx;
                field.interpolate(p.0 + sign * s * normal.0, p.1 + sign * s * normal.1).map(|f| (s, f))
            })
            .collect();
        let Some(samples) = samples else { continue };
        // Normal equations for the basis (1, √s, s).
        let mut ata = [[0.0; 3]; 3];
        let mut atb = [Complex64::zero(); 3];
        for &(s, f) in &samples {
            let row = [1.0, s.sqrt(), s];
            for r in 0..3 {
                for c in 0..3 {
                    ata[r][c] += row[r] * row[c];
                }
                atb[r] += f * row[r];
            }
        }
        return solve3(ata, atb).map(|c| c[0]);
    }
    None
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [Complex64; 3]) -> Option<[Complex64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let m = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= m * a[col][c];
            }
            b[r] -= b[col] * m;
        }
    }
    let mut x = [Complex64::zero(); 3];
    for r in (0..3).rev() {
        let mut s = b[r];
        for c in r + 1..3 {
            s -= x[c] * a[r][c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

/// Half-width, in curve vertices, of the chord used as discrete tangent.
const TANGENT_REACH: usize = 3;

/// At each curve vertex with enough liquid nodes along its normal, `|sin|`
/// of the angle between the discrete tangent and the direction of slope
/// `(f+1)/f`, with `f` extrapolated to the curve.
pub fn tangent_errors(curve: &ArcticCurve, field: &ComplexSlopeField) -> Vec<f64> {
    let mut out = Vec::new();
    for pl in &curve.polylines {
        let m = pl.points.len();
        if m < 2 * TANGENT_REACH + 1 {
            continue;
        }
        for k in 0..m {
            if !pl.closed && (k < TANGENT_REACH || k + TANGENT_REACH >= m) {
                continue;
            }
            let prev = pl.points[(k + m - TANGENT_REACH) % m];
            let next = pl.points[(k + TANGENT_REACH) % m];
            let tan = (next.0 - prev.0, next.1 - prev.1);
            let len = tan.0.hypot(tan.1);
            if len == 0.0 {
                continue;
            }
            let normal = (-tan.1 / len, tan.0 / len);
            let Some(f) = extrapolate_to_curve(field, pl.points[k], normal) else { continue };
            // Direction (dx, dt) = (f/(f+1), 1), slope (f+1)/f.
            let dir = ((f / (f + 1.0)).re, 1.0);
            let cross = tan.0 * dir.1 - tan.1 * dir.0;
            out.push((cross / (len * dir.0.hypot(dir.1))).abs());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Boundary pole and zero sets

/// For one interval `[a, b]` of the slice at `t`: the projections of the
/// left boundary edges of slope 1 lying at or above `t` that end up at or
/// left of `a`, and of the right boundary edges of slope ∞ at or right of `b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoleZeroSets {
    pub interval: (Rat, Rat),
    pub poles: Vec<Rat>,
    pub zeros: Vec<Rat>,
}

pub fn pole_zero_sets(d: &Domain, t: Rat) -> Result<Vec<PoleZeroSets>> {
    let slice = d.slice_at(t, crate::domain::Side::Lower)?;
    let n = Rat::from_integer(d.n());
    let tau = t * n;
    let mut out = Vec::new();
    for &(a, b) in &slice.intervals {
        let mut poles = Vec::new();
        let mut zeros = Vec::new();
        for s in d.segs() {
            let top = Rat::from_integer(s.t0.max(s.t1));
            if top <= tau {
                continue;
            }
            match s.slope {
                // Traversed downward: the domain lies to its right.
                Slope::One if s.x1 < s.x0 => {
                    let z = (Rat::from_integer(s.x0) + tau - Rat::from_integer(s.t0)) / n;
                    if z <= a {
                        poles.push(z);
                    }
                }
                // Traversed upward: the domain lies to its left.
                Slope::Infinite if s.t1 > s.t0 => {
                    let z = Rat::from_integer(s.x0) / n;
                    if z >= b {
                        zeros.push(z);
                    }
                }
                _ => {}
            }
        }
        poles.sort();
        zeros.sort();
        out.push(PoleZeroSets { interval: (a, b), poles, zeros });
    }
    Ok(out)
}
