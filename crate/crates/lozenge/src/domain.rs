//! Polygonal domains with boundary slopes in {0, 1, ∞}, their boundary
//! height, time slices and particle configurations.
//!
//! Coordinates are exact rationals. Internally everything is kept in
//! lattice units (multiplied by `n`) as `i64`, which is where the walk
//! machinery operates.

use crate::error::{Error, Result};
use crate::rational::{format_rat, from_lattice, parse_rat, to_lattice, Rat, RatStr};
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

/// Largest grid parameter accepted.
pub const MAX_GRID: i64 = 1 << 16;
/// Largest lattice coordinate magnitude accepted (after scaling by `n`).
pub const MAX_LATTICE_COORD: i64 = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slope {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "inf")]
    Infinite,
}

impl Slope {
    fn next(self) -> Slope {
        match self {
            Slope::Zero => Slope::One,
            Slope::One => Slope::Infinite,
            Slope::Infinite => Slope::Zero,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    /// The `t+` slice: what the domain looks like just above `t`.
    Lower,
    /// The `t-` slice: what the domain looks like just below `t`.
    Upper,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatPoint {
    pub x: Rat,
    pub t: Rat,
}

impl RatPoint {
    pub fn new(x: Rat, t: Rat) -> Self {
        RatPoint { x, t }
    }

    pub fn int(x: i64, t: i64) -> Self {
        RatPoint { x: Rat::from_integer(x), t: Rat::from_integer(t) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: RatPoint,
    pub end: RatPoint,
}

impl Segment {
    /// The slope tag, or `None` when the direction is not one of 0, 1, ∞.
    pub fn slope(&self) -> Option<Slope> {
        let dx = self.end.x - self.start.x;
        let dt = self.end.t - self.start.t;
        match (dx.is_zero(), dt.is_zero()) {
            (true, true) => None,
            (false, true) => Some(Slope::Zero),
            (true, false) => Some(Slope::Infinite),
            (false, false) if dx == dt => Some(Slope::One),
            _ => None,
        }
    }
}

/// A polygon as supplied by the user: grid parameter and boundary segments.
/// Nothing is checked at construction; see [`validate_domain`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolygonalDomain {
    pub n: i64,
    pub segments: Vec<Segment>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainFile {
    n: i64,
    vertices: Vec<[RatStr; 2]>,
}

impl PolygonalDomain {
    /// Closed polygon through `vertices` (the closing segment is implicit; a
    /// repeated first vertex at the end is dropped).
    pub fn from_vertices(n: i64, vertices: &[RatPoint]) -> Self {
        let mut v = vertices.to_vec();
        if v.len() > 1 && v.first() == v.last() {
            v.pop();
        }
        let k = v.len();
        let segments = (0..k)
            .map(|i| Segment { start: v[i].clone(), end: v[(i + 1) % k].clone() })
            .collect();
        PolygonalDomain { n, segments }
    }

    /// Polygon from integer vertex coordinates given in lattice units.
    pub fn from_lattice_vertices(n: i64, vertices: &[(i64, i64)]) -> Self {
        let v: Vec<RatPoint> = vertices
            .iter()
            .map(|&(x, t)| RatPoint::new(Rat::new(x, n), Rat::new(t, n)))
            .collect();
        Self::from_vertices(n, &v)
    }

    /// The `a x b x c` hexagon with side lengths given in lattice steps.
    pub fn hexagon(n: i64, a: i64, b: i64, c: i64) -> Self {
        Self::from_lattice_vertices(n, &[(0, 0), (a, 0), (a + c, c), (a + c, b + c), (c, b + c), (0, b)])
    }

    pub fn vertices(&self) -> Vec<RatPoint> {
        self.segments.iter().map(|s| s.start.clone()).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: DomainFile = serde_json::from_str(text)?;
        let v: Vec<RatPoint> = f.vertices.iter().map(|[x, t]| RatPoint::new(x.0, t.0)).collect();
        Ok(Self::from_vertices(f.n, &v))
    }

    pub fn to_json(&self) -> String {
        let f = DomainFile {
            n: self.n,
            vertices: self.vertices().into_iter().map(|p| [RatStr(p.x), RatStr(p.t)]).collect(),
        };
        serde_json::to_string(&f).expect("domain serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    BadGrid,
    TooFewSegments,
    BoundaryNotClosed,
    OffGrid,
    CoordinateRange,
    ZeroLength,
    BadSlope,
    SlopeCycle,
    NotCounterclockwise,
    SelfIntersecting,
    OutsideStrip,
    HeightNotClosed,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::BadGrid => "bad-grid",
            Rule::TooFewSegments => "too-few-segments",
            Rule::BoundaryNotClosed => "boundary-not-closed",
            Rule::OffGrid => "off-grid",
            Rule::CoordinateRange => "coordinate-range",
            Rule::ZeroLength => "zero-length",
            Rule::BadSlope => "bad-slope",
            Rule::SlopeCycle => "slope-cycle",
            Rule::NotCounterclockwise => "not-counterclockwise",
            Rule::SelfIntersecting => "self-intersecting",
            Rule::OutsideStrip => "outside-strip",
            Rule::HeightNotClosed => "height-not-closed",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub segment: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.segment {
            Some(i) => write!(f, "segment {i}: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

fn violation(segment: Option<usize>, rule: Rule) -> Violation {
    Violation { segment, rule }
}

/// Lists every broken invariant. An empty list means the domain is valid.
pub fn validate_domain(d: &PolygonalDomain) -> Vec<Violation> {
    let mut out = Vec::new();
    if d.n < 1 || d.n > MAX_GRID {
        out.push(violation(None, Rule::BadGrid));
        return out;
    }
    let k = d.segments.len();
    if k < 3 {
        out.push(violation(None, Rule::TooFewSegments));
    }
    for i in 0..k {
        let next = &d.segments[(i + 1) % k];
        if d.segments[i].end != next.start {
            out.push(violation(Some(i), Rule::BoundaryNotClosed));
        }
    }
    let mut lattice = Vec::with_capacity(k);
    for (i, s) in d.segments.iter().enumerate() {
        let mut pts = [(0, 0); 2];
        for (slot, p) in [&s.start, &s.end].into_iter().enumerate() {
            match (to_lattice(&p.x, d.n), to_lattice(&p.t, d.n)) {
                (Some(x), Some(t)) => {
                    if x.abs() > MAX_LATTICE_COORD || t.abs() > MAX_LATTICE_COORD {
                        out.push(violation(Some(i), Rule::CoordinateRange));
                    }
                    pts[slot] = (x, t);
                }
                _ => out.push(violation(Some(i), Rule::OffGrid)),
            }
        }
        lattice.push(pts);
    }
    let slopes: Vec<Option<Slope>> = d.segments.iter().map(Segment::slope).collect();
    for (i, s) in d.segments.iter().enumerate() {
        if s.start == s.end {
            out.push(violation(Some(i), Rule::ZeroLength));
        } else if slopes[i].is_none() {
            out.push(violation(Some(i), Rule::BadSlope));
        }
    }
    if k >= 3 {
        for i in 0..k {
            if let (Some(a), Some(b)) = (slopes[i], slopes[(i + 1) % k]) {
                // Skipping one tag stands for a zero-length segment of that
                // tag; a skipped horizontal edge is not allowed.
                let ok = b == a.next() || (b == a.next().next() && a.next() != Slope::Zero);
                if !ok {
                    out.push(violation(Some((i + 1) % k), Rule::SlopeCycle));
                }
            }
        }
    }
    if !out.is_empty() {
        return out;
    }
    // From here on the boundary is a closed lattice polygon with good slopes.
    let verts: Vec<(i64, i64)> = lattice.iter().map(|p| p[0]).collect();
    if signed_area2(&verts) <= 0 {
        out.push(violation(None, Rule::NotCounterclockwise));
    }
    if let Some(i) = first_self_intersection(&verts) {
        out.push(violation(Some(i), Rule::SelfIntersecting));
    }
    let t_min = verts.iter().map(|v| v.1).min().unwrap_or(0);
    if t_min != 0 {
        out.push(violation(None, Rule::OutsideStrip));
    }
    let closure: i64 = (0..k)
        .filter(|&i| slopes[i] == Some(Slope::Zero))
        .map(|i| lattice[i][1].0 - lattice[i][0].0)
        .sum();
    if closure != 0 {
        out.push(violation(None, Rule::HeightNotClosed));
    }
    out
}

fn signed_area2(v: &[(i64, i64)]) -> i128 {
    let k = v.len();
    (0..k)
        .map(|i| {
            let (x0, y0) = v[i];
            let (x1, y1) = v[(i + 1) % k];
            x0 as i128 * y1 as i128 - x1 as i128 * y0 as i128
        })
        .sum()
}

fn orient(a: (i64, i64), b: (i64, i64), c: (i64, i64)) -> i128 {
    let (ax, ay) = (a.0 as i128, a.1 as i128);
    ((b.0 as i128 - ax) * (c.1 as i128 - ay) - (b.1 as i128 - ay) * (c.0 as i128 - ax)).signum()
}

fn on_segment(a: (i64, i64), b: (i64, i64), p: (i64, i64)) -> bool {
    orient(a, b, p) == 0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

fn segments_touch(a: (i64, i64), b: (i64, i64), c: (i64, i64), d: (i64, i64)) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0 && o3 * o4 < 0 {
        return true;
    }
    on_segment(a, b, c) || on_segment(a, b, d) || on_segment(c, d, a) || on_segment(c, d, b)
}

fn first_self_intersection(v: &[(i64, i64)]) -> Option<usize> {
    let k = v.len();
    for i in 0..k {
        let (a, b) = (v[i], v[(i + 1) % k]);
        for j in i + 1..k {
            let (c, d) = (v[j], v[(j + 1) % k]);
            let adjacent = j == i + 1 || (i == 0 && j == k - 1);
            if adjacent {
                // Consecutive segments share one vertex; they may not overlap beyond it.
                let (shared, far_i, far_j) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                if on_segment(shared, far_i, far_j) || on_segment(shared, far_j, far_i) {
                    return Some(j);
                }
            } else if segments_touch(a, b, c, d) {
                return Some(j);
            }
        }
    }
    None
}

/// Boundary segment in lattice units with the boundary height (also in
/// lattice units, i.e. a particle count) at its start.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LSeg {
    pub x0: i64,
    pub t0: i64,
    pub x1: i64,
    pub t1: i64,
    pub slope: Slope,
    pub beta0: i64,
}

/// Slice interval in lattice units; `mass` is the required particle count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Iv {
    pub lo: i64,
    pub hi: i64,
    pub mass: i64,
}

/// Everything the walk machinery needs about one lattice time.
#[derive(Clone, Debug, Default)]
pub(crate) struct LevelGeom {
    pub lower: Vec<Iv>,
    pub upper: Vec<Iv>,
    /// Positions where particles are created (lower horizontal edges).
    pub created: Vec<i64>,
}

/// A validated domain.
#[derive(Clone, Debug)]
pub struct Domain {
    raw: PolygonalDomain,
    n: i64,
    segs: Vec<LSeg>,
    t_max: i64,
    levels: Vec<LevelGeom>,
}

/// A slice of the domain at time `t` (real units).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slice {
    pub t: Rat,
    pub side: Side,
    pub intervals: Vec<(Rat, Rat)>,
}

impl Slice {
    pub fn total_length(&self) -> Rat {
        self.intervals.iter().fold(Rat::zero(), |acc, (a, b)| acc + (b - a))
    }
}

/// Particle configuration at time `t`; positions are in `(1/n)Z`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfiguration {
    pub t: RatStr,
    pub positions: Vec<RatStr>,
}

impl ParticleConfiguration {
    pub fn new(t: Rat, positions: Vec<Rat>) -> Self {
        ParticleConfiguration { t: RatStr(t), positions: positions.into_iter().map(RatStr).collect() }
    }

    pub fn from_lattice(n: i64, level: i64, positions: &[i64]) -> Self {
        Self::new(from_lattice(level, n), positions.iter().map(|&p| from_lattice(p, n)).collect())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Lattice time and positions; fails if anything is off the `1/n` grid.
    pub fn to_lattice(&self, n: i64) -> Result<(i64, Vec<i64>)> {
        let level = to_lattice(&self.t.0, n)
            .ok_or_else(|| Error::InvalidConfiguration(format!("time {} is not on the grid", self.t)))?;
        let pos = self
            .positions
            .iter()
            .map(|p| {
                to_lattice(&p.0, n)
                    .ok_or_else(|| Error::InvalidConfiguration(format!("position {p} is not on the grid")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((level, pos))
    }
}

/// Piecewise-linear height of a configuration on one slice interval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntervalHeight {
    pub interval: (Rat, Rat),
    /// Breakpoints `(x, β(x))`, increasing in `x`, covering the interval.
    pub breakpoints: Vec<(Rat, Rat)>,
}

impl IntervalHeight {
    pub fn eval(&self, x: Rat) -> Option<Rat> {
        let bp = &self.breakpoints;
        if x < bp[0].0 || x > bp[bp.len() - 1].0 {
            return None;
        }
        let k = bp.partition_point(|p| p.0 <= x);
        if k == bp.len() {
            return Some(bp[k - 1].1);
        }
        let (x0, y0) = bp[k - 1];
        let (x1, y1) = bp[k];
        Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
    }
}

impl Domain {
    pub fn new(raw: PolygonalDomain) -> Result<Self> {
        let violations = validate_domain(&raw);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidDomain(text.join("; ")));
        }
        let n = raw.n;
        let pts: Vec<(i64, i64)> = raw
            .segments
            .iter()
            .map(|s| (to_lattice(&s.start.x, n).unwrap(), to_lattice(&s.start.t, n).unwrap()))
            .collect();
        let k = pts.len();
        let corner = (0..k).min_by_key(|&i| (pts[i].1, pts[i].0)).unwrap();
        let mut segs = vec![
            LSeg { x0: 0, t0: 0, x1: 0, t1: 0, slope: Slope::Zero, beta0: 0 };
            k
        ];
        let mut beta = 0;
        for step in 0..k {
            let i = (corner + step) % k;
            let (x0, t0) = pts[i];
            let (x1, t1) = pts[(i + 1) % k];
            let slope = raw.segments[i].slope().unwrap();
            segs[i] = LSeg { x0, t0, x1, t1, slope, beta0: beta };
            if slope == Slope::Zero {
                beta += x1 - x0;
            }
        }
        let t_max = pts.iter().map(|p| p.1).max().unwrap();
        let mut d = Domain { raw, n, segs, t_max, levels: Vec::new() };
        d.levels = (0..=t_max).map(|j| d.level_geometry(j)).collect();
        for (j, g) in d.levels.iter().enumerate() {
            for iv in g.lower.iter().chain(&g.upper) {
                if iv.mass < 0 || iv.mass > iv.hi - iv.lo {
                    return Err(Error::InvalidDomain(format!(
                        "slice at level {j} requires {} particles on an interval of length {}",
                        iv.mass,
                        iv.hi - iv.lo
                    )));
                }
            }
        }
        Ok(d)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Domain::new(PolygonalDomain::from_json(text)?)
    }

    pub fn raw(&self) -> &PolygonalDomain {
        &self.raw
    }

    pub fn n(&self) -> i64 {
        self.n
    }

    /// Height of the strip in real units.
    pub fn height(&self) -> Rat {
        Rat::new(self.t_max, self.n)
    }

    /// Number of lattice time steps, `n T`.
    pub fn steps(&self) -> i64 {
        self.t_max
    }

    pub fn hash(&self) -> String {
        self.raw.hash()
    }

    pub(crate) fn segs(&self) -> &[LSeg] {
        &self.segs
    }

    pub(crate) fn level(&self, j: i64) -> &LevelGeom {
        &self.levels[j as usize]
    }

    /// Times of the horizontal edges, sorted, in real units.
    pub fn horizontal_times(&self) -> Vec<Rat> {
        let mut ts: Vec<i64> = self.segs.iter().filter(|s| s.slope == Slope::Zero).map(|s| s.t0).collect();
        ts.sort_unstable();
        ts.dedup();
        ts.into_iter().map(|t| Rat::new(t, self.n)).collect()
    }

    /// True iff the only upper horizontal edge is a single edge at `t = T`.
    pub fn has_one_upper_edge(&self) -> bool {
        let uppers: Vec<&LSeg> = self.segs.iter().filter(|s| s.slope == Slope::Zero && s.x1 < s.x0).collect();
        uppers.len() == 1 && uppers[0].t0 == self.t_max && self.levels[self.t_max as usize].upper.len() == 1
    }

    /// Interval decomposition at lattice-unit time `tau` (rational).
    fn crossings(&self, tau: Rat, side: Side) -> Vec<(Rat, Rat, i64)> {
        // (x, key, beta) for each non-horizontal segment crossing tau.
        let mut c: Vec<(Rat, Rat, i64)> = Vec::new();
        for s in &self.segs {
            if s.slope == Slope::Zero {
                continue;
            }
            let (lo, hi) = (s.t0.min(s.t1), s.t0.max(s.t1));
            let (lo, hi) = (Rat::from_integer(lo), Rat::from_integer(hi));
            let inside = match side {
                Side::Lower => lo <= tau && tau < hi,
                Side::Upper => lo < tau && tau <= hi,
            };
            if !inside {
                continue;
            }
            let rate = if s.slope == Slope::One { 1 } else { 0 };
            let x = Rat::from_integer(s.x0) + Rat::from_integer(rate) * (tau - Rat::from_integer(s.t0));
            let key = match side {
                Side::Lower => Rat::from_integer(rate),
                Side::Upper => Rat::from_integer(-rate),
            };
            c.push((x, key, s.beta0));
        }
        c.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        c
    }

    fn intervals_at(&self, tau: Rat, side: Side) -> Vec<(Rat, Rat, i64)> {
        let c = self.crossings(tau, side);
        debug_assert!(c.len().is_multiple_of(2), "odd crossing count");
        c.chunks(2)
            .filter(|p| p.len() == 2 && p[0].0 < p[1].0)
            .map(|p| (p[0].0, p[1].0, p[1].2 - p[0].2))
            .collect()
    }

    fn level_geometry(&self, j: i64) -> LevelGeom {
        let tau = Rat::from_integer(j);
        let conv = |v: Vec<(Rat, Rat, i64)>| -> Vec<Iv> {
            v.into_iter()
                .map(|(a, b, m)| Iv { lo: a.to_integer(), hi: b.to_integer(), mass: m })
                .collect()
        };
        let lower = if j < self.t_max { conv(self.intervals_at(tau, Side::Lower)) } else { Vec::new() };
        let upper = if j > 0 { conv(self.intervals_at(tau, Side::Upper)) } else { Vec::new() };
        let mut created: Vec<i64> = self
            .segs
            .iter()
            .filter(|s| s.slope == Slope::Zero && s.t0 == j && s.x1 > s.x0 && j < self.t_max)
            .flat_map(|s| s.x0..s.x1)
            .collect();
        created.sort_unstable();
        LevelGeom { lower, upper, created }
    }

    /// The slice at real time `t`.
    pub fn slice_at(&self, t: Rat, side: Side) -> Result<Slice> {
        let tmax = self.height();
        let ok = match side {
            Side::Lower => t >= Rat::zero() && t < tmax,
            Side::Upper => t > Rat::zero() && t <= tmax,
        };
        if !ok {
            return Err(Error::TimeOutOfRange(format_rat(&t)));
        }
        let n = Rat::from_integer(self.n);
        let intervals = self
            .intervals_at(t * n, side)
            .into_iter()
            .map(|(a, b, _)| (a / n, b / n))
            .collect();
        Ok(Slice { t, side, intervals })
    }

    /// Particle count `m(t)` on the lower slice (upper slice at `t = T`).
    pub fn particle_count(&self, t: Rat) -> Result<i64> {
        let side = if t == self.height() { Side::Upper } else { Side::Lower };
        self.slice_at(t, side)?;
        let total: i64 = self
            .intervals_at(t * Rat::from_integer(self.n), side)
            .iter()
            .map(|iv| iv.2)
            .sum();
        Ok(total)
    }

    /// Boundary height `β^P` at a boundary point, in real units; `None` if
    /// the point is not on the boundary.
    pub fn boundary_height(&self, p: &RatPoint) -> Option<Rat> {
        let n = Rat::from_integer(self.n);
        self.boundary_height_lattice(p.x * n, p.t * n).map(|b| b / n)
    }

    /// Boundary height in lattice units at a point given in lattice units.
    pub(crate) fn boundary_height_lattice(&self, x: Rat, t: Rat) -> Option<Rat> {
        for s in &self.segs {
            let (x0, t0, x1, t1) = (
                Rat::from_integer(s.x0),
                Rat::from_integer(s.t0),
                Rat::from_integer(s.x1),
                Rat::from_integer(s.t1),
            );
            let on = match s.slope {
                Slope::Zero => t == t0 && x >= x0.min(x1) && x <= x0.max(x1),
                Slope::Infinite => x == x0 && t >= t0.min(t1) && t <= t0.max(t1),
                Slope::One => x - x0 == t - t0 && t >= t0.min(t1) && t <= t0.max(t1),
            };
            if on {
                let base = Rat::from_integer(s.beta0);
                return Some(if s.slope == Slope::Zero { base + (x - x0) } else { base });
            }
        }
        None
    }

    /// Locates a point given in lattice units scaled by `q` (the point is
    /// `(x/q, t/q)` in lattice units): 1 inside, 0 on the boundary, -1 outside.
    pub(crate) fn locate_scaled(&self, x: i64, t: i64, q: i64) -> i8 {
        let p = (x, t);
        let mut winding = 0i32;
        for s in &self.segs {
            let a = (s.x0 * q, s.t0 * q);
            let b = (s.x1 * q, s.t1 * q);
            if on_segment(a, b, p) {
                return 0;
            }
            if a.1 <= p.1 {
                if b.1 > p.1 && orient(a, b, p) > 0 {
                    winding += 1;
                }
            } else if b.1 <= p.1 && orient(a, b, p) < 0 {
                winding -= 1;
            }
        }
        if winding != 0 {
            1
        } else {
            -1
        }
    }

    /// Checks Def. of a valid configuration on the given side of its slice.
    pub fn check_configuration(&self, c: &ParticleConfiguration, side: Side) -> Result<()> {
        let (level, pos) = c.to_lattice(self.n)?;
        let range_ok = match side {
            Side::Lower => level >= 0 && level < self.t_max,
            Side::Upper => level > 0 && level <= self.t_max,
        };
        if !range_ok {
            return Err(Error::TimeOutOfRange(c.t.to_string()));
        }
        let g = self.level(level);
        let ivs = match side {
            Side::Lower => &g.lower,
            Side::Upper => &g.upper,
        };
        check_lattice(ivs, &pos)?;
        if side == Side::Lower {
            for &x in &g.created {
                if pos.binary_search(&x).is_err() {
                    return Err(Error::InvalidConfiguration(format!(
                        "horizontal edge point {} is not occupied",
                        format_rat(&Rat::new(x, self.n))
                    )));
                }
            }
        }
        Ok(())
    }

    /// Configuration at `t = 0` after creation on the bottom edges.
    pub fn initial_configuration(&self) -> ParticleConfiguration {
        ParticleConfiguration::from_lattice(self.n, 0, &self.level(0).created)
    }

    /// Packed configuration `[𝔞(T-), 𝔟(T-))` at the top.
    pub fn terminal_configuration(&self) -> Result<ParticleConfiguration> {
        let pos = self.terminal_lattice()?;
        Ok(ParticleConfiguration::from_lattice(self.n, self.t_max, &pos))
    }

    pub(crate) fn terminal_lattice(&self) -> Result<Vec<i64>> {
        let top = &self.level(self.t_max).upper;
        if top.len() != 1 {
            return Err(Error::Unsupported("the top slice is not a single interval".into()));
        }
        Ok((top[0].lo..top[0].lo + top[0].mass).collect())
    }

    /// Requires the single-upper-edge shape the walk machinery handles.
    pub(crate) fn require_one_upper_edge(&self) -> Result<()> {
        if self.has_one_upper_edge() {
            Ok(())
        } else {
            Err(Error::Unsupported("domain must have exactly one upper horizontal edge, at t = T".into()))
        }
    }
}

/// Strictly increasing, every box inside an interval, per-interval masses.
pub(crate) fn check_lattice(ivs: &[Iv], pos: &[i64]) -> Result<()> {
    if pos.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfiguration("positions are not strictly increasing".into()));
    }
    let mut counts = vec![0i64; ivs.len()];
    for &p in pos {
        match ivs.iter().position(|iv| iv.lo <= p && p < iv.hi) {
            Some(k) => counts[k] += 1,
            None => {
                return Err(Error::InvalidConfiguration(format!("particle box at lattice {p} leaves the slice")))
            }
        }
    }
    for (k, iv) in ivs.iter().enumerate() {
        if counts[k] != iv.mass {
            return Err(Error::MassMismatch { interval: k, expected: iv.mass, found: counts[k] });
        }
    }
    Ok(())
}

/// Fast boolean version of [`check_lattice`] for the inner loops.
pub(crate) fn lattice_ok(ivs: &[Iv], pos: &[i64]) -> bool {
    let mut k = 0usize;
    let mut count = 0i64;
    let mut prev = i64::MIN;
    for &p in pos {
        if p <= prev {
            return false;
        }
        prev = p;
        while k < ivs.len() && p + 1 > ivs[k].hi {
            if count != ivs[k].mass {
                return false;
            }
            k += 1;
            count = 0;
        }
        if k == ivs.len() || p < ivs[k].lo {
            return false;
        }
        count += 1;
    }
    while k < ivs.len() {
        if count != ivs[k].mass {
            return false;
        }
        k += 1;
        count = 0;
    }
    true
}

/// Height of a configuration on its lower slice: starts at `β^P(𝔞_i)`,
/// rises by `1/n` across each particle box, ends at `β^P(𝔟_i)`.
pub fn config_height(c: &ParticleConfiguration, d: &Domain) -> Result<Vec<IntervalHeight>> {
    let (level, pos) = c.to_lattice(d.n)?;
    if level < 0 || level >= d.t_max {
        return Err(Error::TimeOutOfRange(c.t.to_string()));
    }
    let ivs = &d.level(level).lower;
    check_lattice(ivs, &pos)?;
    let n = Rat::from_integer(d.n);
    let tau = Rat::from_integer(level);
    let mut out = Vec::with_capacity(ivs.len());
    for iv in ivs {
        let mut h = d
            .boundary_height_lattice(Rat::from_integer(iv.lo), tau)
            .expect("slice endpoint lies on the boundary");
        let mut bp = vec![(Rat::from_integer(iv.lo), h)];
        for &p in pos.iter().filter(|&&p| p >= iv.lo && p < iv.hi) {
            let (x0, x1) = (Rat::from_integer(p), Rat::from_integer(p + 1));
            if bp.last().unwrap().0 != x0 {
                bp.push((x0, h));
            }
            h += Rat::from_integer(1);
            bp.push((x1, h));
        }
        if bp.last().unwrap().0 != Rat::from_integer(iv.hi) {
            bp.push((Rat::from_integer(iv.hi), h));
        }
        let breakpoints = bp.into_iter().map(|(x, y)| (x / n, y / n)).collect();
        out.push(IntervalHeight {
            interval: (Rat::from_integer(iv.lo) / n, Rat::from_integer(iv.hi) / n),
            breakpoints,
        });
    }
    Ok(out)
}

/// Inserts the particles created on lower horizontal edges at `t`.
pub fn apply_creation(c: &ParticleConfiguration, d: &Domain, t: Rat) -> Result<ParticleConfiguration> {
    if c.t.0 != t {
        return Err(Error::InvalidConfiguration(format!("configuration time {} differs from {}", c.t, format_rat(&t))));
    }
    let (level, pos) = c.to_lattice(d.n)?;
    if level < 0 || level >= d.t_max {
        return Err(Error::TimeOutOfRange(format_rat(&t)));
    }
    let merged = create_lattice(&pos, &d.level(level).created).map_err(|x| Error::InfeasibleCreation {
        t: format_rat(&t),
        x: format_rat(&Rat::new(x, d.n)),
    })?;
    let out = ParticleConfiguration::from_lattice(d.n, level, &merged);
    d.check_configuration(&out, Side::Lower)?;
    Ok(out)
}

/// Merges created positions into a sorted configuration; `Err(x)` on collision.
pub(crate) fn create_lattice(pos: &[i64], created: &[i64]) -> std::result::Result<Vec<i64>, i64> {
    if created.is_empty() {
        return Ok(pos.to_vec());
    }
    let mut out = Vec::with_capacity(pos.len() + created.len());
    let (mut i, mut j) = (0, 0);
    while i < pos.len() || j < created.len() {
        let take_pos = j == created.len() || (i < pos.len() && pos[i] < created[j]);
        if take_pos {
            out.push(pos[i]);
            i += 1;
        } else {
            if i < pos.len() && pos[i] == created[j] {
                return Err(created[j]);
            }
            out.push(created[j]);
            j += 1;
        }
    }
    Ok(out)
}

/// Removes created positions (inverse of [`create_lattice`]); `None` if one
/// of them is missing.
pub(crate) fn uncreate_lattice(pos: &[i64], created: &[i64]) -> Option<Vec<i64>> {
    if created.is_empty() {
        return Some(pos.to_vec());
    }
    let mut out = Vec::with_capacity(pos.len());
    let mut j = 0;
    for &p in pos {
        if j < created.len() && created[j] == p {
            j += 1;
        } else {
            out.push(p);
        }
    }
    (j == created.len()).then_some(out)
}

/// Parses `"p/q"` into a time, for the command line.
pub fn parse_time(s: &str) -> Result<Rat> {
    parse_rat(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex(n: i64, a: i64, b: i64, c: i64) -> Domain {
        Domain::new(PolygonalDomain::hexagon(n, a, b, c)).unwrap()
    }

    /// Two particles are created at t = 1/2 on a lower edge of length 2/n.
    pub(crate) fn l_shape() -> PolygonalDomain {
        PolygonalDomain::from_lattice_vertices(
            2,
            &[(0, 0), (2, 0), (3, 1), (3, 2), (5, 2), (6, 3), (6, 5), (2, 5), (0, 3)],
        )
    }

    /// Particles start at 0 and 2 (a notch between them) and end packed.
    pub(crate) fn sawtooth() -> PolygonalDomain {
        PolygonalDomain::from_lattice_vertices(1, &[(0, 0), (1, 0), (2, 1), (2, 0), (3, 0), (4, 1), (4, 2), (2, 2)])
    }

    #[test]
    fn hexagon_is_valid() {
        assert!(validate_domain(&PolygonalDomain::hexagon(4, 4, 4, 4)).is_empty());
        assert!(hex(1, 2, 3, 4).has_one_upper_edge());
    }

    #[test]
    fn open_polyline() {
        let mut d = PolygonalDomain::hexagon(1, 1, 1, 1);
        d.segments.pop();
        let v = validate_domain(&d);
        assert!(v.iter().any(|v| v.rule == Rule::BoundaryNotClosed));
    }

    #[test]
    fn wrong_slope_order() {
        // 0, ∞, 1 order (clockwise hexagon).
        let d = PolygonalDomain::from_lattice_vertices(1, &[(0, 0), (0, 1), (1, 2), (2, 2), (2, 1), (1, 0)]);
        let v = validate_domain(&d);
        assert!(v.iter().any(|v| v.rule == Rule::SlopeCycle), "{v:?}");
    }

    #[test]
    fn zero_length_rejected() {
        let d = PolygonalDomain::from_lattice_vertices(
            1,
            &[(0, 0), (1, 0), (2, 1), (2, 2), (2, 2), (1, 2), (0, 1)],
        );
        assert!(validate_domain(&d).iter().any(|v| v.rule == Rule::ZeroLength));
    }

    #[test]
    fn off_grid_and_height_closure() {
        let mut d = PolygonalDomain::hexagon(2, 1, 1, 1);
        d.n = 3;
        assert!(validate_domain(&d).iter().any(|v| v.rule == Rule::OffGrid));
        let d = PolygonalDomain::from_lattice_vertices(1, &[(0, 0), (2, 0), (3, 1), (3, 3), (2, 3), (0, 1)]);
        assert_eq!(validate_domain(&d), vec![violation(None, Rule::HeightNotClosed)]);
    }

    #[test]
    fn l_shape_valid() {
        let d = Domain::new(l_shape()).unwrap();
        assert!(d.has_one_upper_edge());
        assert_eq!(d.level(2).created, vec![3, 4]);
        assert_eq!(d.particle_count(Rat::new(1, 2)).unwrap(), 2);
        assert_eq!(d.particle_count(Rat::from_integer(1)).unwrap(), 4);
        assert_eq!(d.terminal_lattice().unwrap(), vec![2, 3, 4, 5]);
    }

    #[test]
    fn two_component_top() {
        // Two towers over a common base: the top slice has two intervals.
        let d = PolygonalDomain::from_lattice_vertices(
            1,
            &[(0, 0), (4, 0), (5, 1), (5, 3), (4, 3), (4, 2), (2, 2), (2, 3), (1, 3), (0, 2)],
        );
        assert_eq!(validate_domain(&d), vec![]);
        let d = Domain::new(d).unwrap();
        assert!(!d.has_one_upper_edge());
        assert_eq!(d.slice_at(Rat::from_integer(3), Side::Upper).unwrap().intervals.len(), 2);
    }

    #[test]
    fn trapezoid_with_sawtooth_bottom() {
        let d = Domain::new(sawtooth()).unwrap();
        assert!(d.has_one_upper_edge());
        assert_eq!(d.initial_configuration(), ParticleConfiguration::from_lattice(1, 0, &[0, 2]));
    }

    #[test]
    fn frozen_parallelograms_are_valid() {
        let slanted = PolygonalDomain::from_lattice_vertices(1, &[(0, 0), (2, 0), (5, 3), (3, 3)]);
        let upright = PolygonalDomain::from_lattice_vertices(1, &[(0, 0), (2, 0), (2, 3), (0, 3)]);
        assert_eq!(validate_domain(&slanted), vec![]);
        assert_eq!(validate_domain(&upright), vec![]);
    }

    #[test]
    fn hexagon_slices() {
        let d = hex(1, 1, 1, 1);
        let s = d.slice_at(Rat::from_integer(0), Side::Lower).unwrap();
        assert_eq!(s.intervals, vec![(Rat::from_integer(0), Rat::from_integer(1))]);
        let s = d.slice_at(Rat::new(1, 2), Side::Lower).unwrap();
        assert_eq!(s.intervals, vec![(Rat::from_integer(0), Rat::new(3, 2))]);
        assert!(d.slice_at(Rat::from_integer(2), Side::Lower).is_err());
        assert!(d.slice_at(Rat::from_integer(0), Side::Upper).is_err());
        let top = d.slice_at(Rat::from_integer(2), Side::Upper).unwrap();
        assert_eq!(top.intervals, vec![(Rat::from_integer(1), Rat::from_integer(2))]);
    }

    #[test]
    fn slices_differ_only_at_edge_times() {
        let d = Domain::new(l_shape()).unwrap();
        let at = |t: Rat, s| d.slice_at(t, s).unwrap().intervals;
        assert_ne!(at(Rat::from_integer(1), Side::Lower), at(Rat::from_integer(1), Side::Upper));
        assert_eq!(at(Rat::new(3, 4), Side::Lower), at(Rat::new(3, 4), Side::Upper));
    }

    #[test]
    fn creation() {
        let d = hex(1, 2, 2, 2);
        let empty = ParticleConfiguration::new(Rat::from_integer(0), vec![]);
        let c = apply_creation(&empty, &d, Rat::from_integer(0)).unwrap();
        assert_eq!(c, ParticleConfiguration::from_lattice(1, 0, &[0, 1]));
        let ld = Domain::new(l_shape()).unwrap();
        let before = ParticleConfiguration::from_lattice(2, 2, &[1, 2]);
        let after = apply_creation(&before, &ld, Rat::from_integer(1)).unwrap();
        assert_eq!(after.len(), 4);
        let clash = ParticleConfiguration::from_lattice(2, 2, &[2, 3]);
        assert!(matches!(apply_creation(&clash, &ld, Rat::from_integer(1)), Err(Error::InfeasibleCreation { .. })));
    }

    #[test]
    fn heights() {
        let d = hex(1, 1, 1, 1);
        let packed = ParticleConfiguration::from_lattice(1, 0, &[0]);
        let h = config_height(&packed, &d).unwrap();
        assert_eq!(h[0].breakpoints, vec![(Rat::from_integer(0), Rat::from_integer(0)), (Rat::from_integer(1), Rat::from_integer(1))]);
        // n = 2, one particle at the interval start, required mass 1/2.
        let d2 = Domain::new(PolygonalDomain::hexagon(2, 1, 1, 1)).unwrap();
        let c = ParticleConfiguration::from_lattice(2, 1, &[0]);
        let h = config_height(&c, &d2).unwrap();
        assert_eq!(h[0].interval, (Rat::from_integer(0), Rat::from_integer(1)));
        assert_eq!(h[0].eval(Rat::new(1, 2)), Some(Rat::new(1, 2)));
        assert_eq!(h[0].eval(Rat::from_integer(1)), Some(Rat::new(1, 2)));
        let bad = ParticleConfiguration::from_lattice(2, 1, &[0, 1]);
        assert!(matches!(config_height(&bad, &d2), Err(Error::MassMismatch { .. })));
    }

    #[test]
    fn json_round_trip() {
        let d = l_shape();
        let text = d.to_json();
        let back = PolygonalDomain::from_json(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_json(), text);
        let c = ParticleConfiguration::new(Rat::new(3, 2), vec![Rat::new(-1, 3), Rat::from_integer(2)]);
        let t = c.to_json();
        assert_eq!(t, r#"{"t":"3/2","positions":["-1/3","2/1"]}"#);
        assert_eq!(ParticleConfiguration::from_json(&t).unwrap(), c);
    }

    #[test]
    fn lattice_ok_matches_check() {
        let ivs = [Iv { lo: 0, hi: 3, mass: 2 }, Iv { lo: 5, hi: 7, mass: 1 }];
        for pos in [vec![0, 1, 5], vec![0, 2, 6], vec![0, 1, 6], vec![1, 2, 4], vec![0, 5], vec![2, 1, 5]] {
            assert_eq!(lattice_ok(&ivs, &pos), check_lattice(&ivs, &pos).is_ok(), "{pos:?}");
        }
    }
}
