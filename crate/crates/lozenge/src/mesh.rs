//! Triangulated lattice covering a domain.
//!
//! Nodes sit on the grid of spacing `1/N` with `N = k n`. Each grid cell is
//! cut along its slope-1 diagonal into a lower triangle
//! `(i,j),(i+1,j),(i+1,j+1)` and an upper triangle `(i,j),(i,j+1),(i+1,j+1)`.
//! Boundary segments run along grid lines, so each triangle is either
//! inside the domain or outside it.
//!
//! Heights are measured in mesh units (multiples of `1/N`). A height field
//! is admissible iff on every triangle the three slacks
//! `p_up`, `p_right`, `p_empty` are nonnegative; these are difference
//! constraints `h_v - h_u <= w` with `w` either 0 or 1.

use crate::domain::Domain;
use crate::error::{Error, Result};
use num_rational::Ratio;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriKind {
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug)]
pub struct Triangle {
    pub kind: TriKind,
    /// Cell corner.
    pub i: i64,
    pub j: i64,
    /// Node indices `(a, b, c)` in the order listed in the module docs.
    pub nodes: [usize; 3],
}

impl Triangle {
    /// Slacks `(p_up, p_right, p_empty)`. In mesh units these are the
    /// local lozenge densities.
    pub fn slacks(&self, h: &[f64]) -> [f64; 3] {
        let [a, b, c] = self.nodes;
        match self.kind {
            TriKind::Lower => [h[c] - h[a], h[b] - h[c], 1.0 + h[a] - h[b]],
            TriKind::Upper => [h[c] - h[a], h[a] - h[b], 1.0 + h[b] - h[c]],
        }
    }

    pub fn slacks_int(&self, h: &[i64]) -> [i64; 3] {
        let [a, b, c] = self.nodes;
        match self.kind {
            TriKind::Lower => [h[c] - h[a], h[b] - h[c], 1 + h[a] - h[b]],
            TriKind::Upper => [h[c] - h[a], h[a] - h[b], 1 + h[b] - h[c]],
        }
    }

    /// Coefficients of each slack in the node heights `(a, b, c)`.
    pub fn slack_coeffs(&self) -> [[f64; 3]; 3] {
        match self.kind {
            TriKind::Lower => [[-1.0, 0.0, 1.0], [0.0, 1.0, -1.0], [1.0, -1.0, 0.0]],
            TriKind::Upper => [[-1.0, 0.0, 1.0], [1.0, -1.0, 0.0], [0.0, 1.0, -1.0]],
        }
    }
}

/// Constraint `h[to] - h[from] <= weight`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: i64,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    /// Grid refinement relative to the domain's `n`.
    pub k: i64,
    /// Mesh resolution `N = k n`.
    pub resolution: i64,
    pub nodes: Vec<(i64, i64)>,
    index: HashMap<(i64, i64), usize>,
    /// Boundary height in mesh units, `None` for interior nodes.
    pub pins: Vec<Option<i64>>,
    pub triangles: Vec<Triangle>,
    pub edges: Vec<Edge>,
    pub t_steps: i64,
}

impl Mesh {
    pub fn new(d: &Domain, k: i64) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidInput("mesh refinement must be positive".into()));
        }
        let resolution = k * d.n();
        let (mut x_lo, mut x_hi) = (i64::MAX, i64::MIN);
        for s in d.segs() {
            x_lo = x_lo.min(s.x0.min(s.x1));
            x_hi = x_hi.max(s.x0.max(s.x1));
        }
        let (x_lo, x_hi) = (x_lo * k, x_hi * k);
        let t_steps = d.steps() * k;
        let mut nodes = Vec::new();
        let mut index = HashMap::new();
        let mut pins = Vec::new();
        for j in 0..=t_steps {
            for i in x_lo..=x_hi {
                let loc = d.locate_scaled(i, j, k);
                if loc < 0 {
                    continue;
                }
                index.insert((i, j), nodes.len());
                nodes.push((i, j));
                pins.push(if loc == 0 {
                    let b = d
                        .boundary_height_lattice(Ratio::new(i, k), Ratio::new(j, k))
                        .expect("boundary node has a boundary height");
                    Some((b * Ratio::from_integer(k)).to_integer())
                } else {
                    None
                });
            }
        }
        let mut triangles = Vec::new();
        for j in 0..t_steps {
            for i in x_lo..x_hi {
                let corners_lower = [(i, j), (i + 1, j), (i + 1, j + 1)];
                let corners_upper = [(i, j), (i, j + 1), (i + 1, j + 1)];
                if d.locate_scaled(3 * i + 2, 3 * j + 1, 3 * k) > 0 {
                    triangles.push(Triangle { kind: TriKind::Lower, i, j, nodes: corners_lower.map(|p| index[&p]) });
                }
                if d.locate_scaled(3 * i + 1, 3 * j + 2, 3 * k) > 0 {
                    triangles.push(Triangle { kind: TriKind::Upper, i, j, nodes: corners_upper.map(|p| index[&p]) });
                }
            }
        }
        let edges = edges_of(&triangles);
        Ok(Mesh { k, resolution, nodes, index, pins, triangles, edges, t_steps })
    }

    /// The part of the mesh at rows `j >= j0`, with row `j0` pinned to
    /// `bottom(i)` (mesh units). Pins already on the domain boundary must
    /// agree with the supplied values.
    pub fn restrict_from(&self, j0: i64, bottom: impl Fn(i64) -> Option<i64>) -> Result<Mesh> {
        if j0 < 0 || j0 >= self.t_steps {
            return Err(Error::TimeOutOfRange(format!("mesh row {j0}")));
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        let mut index = HashMap::new();
        let mut pins = Vec::new();
        for (v, &(i, j)) in self.nodes.iter().enumerate() {
            if j < j0 {
                continue;
            }
            let mut pin = self.pins[v];
            if j == j0 {
                let b = bottom(i).ok_or_else(|| {
                    Error::InfeasibleBoundary(format!("no bottom height at mesh node ({i}, {j})"))
                })?;
                if pin.is_some_and(|p| p != b) {
                    return Err(Error::InfeasibleBoundary(format!(
                        "bottom height at mesh node ({i}, {j}) disagrees with the domain boundary"
                    )));
                }
                pin = Some(b);
            }
            remap[v] = nodes.len();
            index.insert((i, j), nodes.len());
            nodes.push((i, j));
            pins.push(pin);
        }
        let triangles: Vec<Triangle> = self
            .triangles
            .iter()
            .filter(|t| t.j >= j0)
            .map(|t| Triangle { nodes: t.nodes.map(|v| remap[v]), ..*t })
            .collect();
        let edges = edges_of(&triangles);
        Ok(Mesh { k: self.k, resolution: self.resolution, nodes, index, pins, triangles, edges, t_steps: self.t_steps })
    }

    pub fn node(&self, i: i64, j: i64) -> Option<usize> {
        self.index.get(&(i, j)).copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Pointwise maximal admissible height with the boundary pinned, via
    /// shortest paths from the boundary. `reverse` gives the minimal one.
    pub fn extremal_heights(&self, reverse: bool) -> Result<Vec<i64>> {
        let v = self.nodes.len();
        let mut adj: Vec<Vec<(usize, i64)>> = vec![Vec::new(); v];
        for e in &self.edges {
            if reverse {
                adj[e.to].push((e.from, e.weight));
            } else {
                adj[e.from].push((e.to, e.weight));
            }
        }
        // Minimal heights are -(shortest path) on the reversed graph with
        // negated pins.
        let sign = if reverse { -1 } else { 1 };
        let mut dist = vec![i64::MAX; v];
        let mut heap = BinaryHeap::new();
        for u in 0..v {
            if let Some(b) = self.pins[u] {
                dist[u] = sign * b;
                heap.push(Reverse((sign * b, u)));
            }
        }
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(w, wt) in &adj[u] {
                if d + wt < dist[w] {
                    dist[w] = d + wt;
                    heap.push(Reverse((d + wt, w)));
                }
            }
        }
        if dist.contains(&i64::MAX) {
            return Err(Error::NoTiling("mesh is disconnected from the boundary".into()));
        }
        for u in 0..v {
            if let Some(b) = self.pins[u] {
                if dist[u] != sign * b {
                    return Err(Error::NoTiling(format!(
                        "boundary heights violate the gradient constraints near node {:?}",
                        self.nodes[u]
                    )));
                }
            }
        }
        Ok(dist.into_iter().map(|d| sign * d).collect())
    }

    /// True iff every triangle slack is nonnegative and pins are respected.
    pub fn admissible(&self, h: &[i64]) -> bool {
        self.pins.iter().zip(h).all(|(p, &x)| p.is_none_or(|b| b == x))
            && self.triangles.iter().all(|t| t.slacks_int(h).iter().all(|&s| s >= 0))
    }
}

fn edges_of(triangles: &[Triangle]) -> Vec<Edge> {
    let mut edges: Vec<Edge> = Vec::new();
    for tri in triangles {
        let [a, b, c] = tri.nodes;
        let list = match tri.kind {
            // horizontal a->b, vertical b->c (h_c <= h_b), diagonal c->a (h_a <= h_c)
            TriKind::Lower => [Edge { from: a, to: b, weight: 1 }, Edge { from: b, to: c, weight: 0 }, Edge { from: c, to: a, weight: 0 }],
            // horizontal b->c, vertical a->b (h_b <= h_a), diagonal c->a
            TriKind::Upper => [Edge { from: b, to: c, weight: 1 }, Edge { from: a, to: b, weight: 0 }, Edge { from: c, to: a, weight: 0 }],
        };
        edges.extend(list);
    }
    edges.sort_by_key(|e| (e.from, e.to, e.weight));
    edges.dedup();
    edges
}
