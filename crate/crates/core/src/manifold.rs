//! Finite metric measure graphs: geometry, measure, balls, annuli and model spaces.
//!
//! Conductances drive the operators, edge lengths drive the metric; the two are
//! independent. Balls are closed: `B(x, r) = { y : d(x, y) <= r }`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::FitReport;
use crate::spectral::PotentialSplit;

/// Upper bound on the vertex count; the all-pairs metric is stored densely.
pub const MAX_VERTICES: usize = 4096;

/// An undirected edge stored once with `u < v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    /// Conductance `w(u, v) >= 0`.
    pub w: f64,
    /// Length `l(u, v) > 0`.
    pub len: f64,
}

/// Sorted distinct distances from one center with the closed-ball volume at each.
#[derive(Clone, Debug)]
struct VolumeProfile {
    radii: Vec<f64>,
    volumes: Vec<f64>,
}

impl VolumeProfile {
    fn volume(&self, r: f64) -> f64 {
        // radii[0] == 0, so r >= 0 always finds an index
        let idx = self.radii.partition_point(|&d| d <= r);
        if idx == 0 {
            0.0
        } else {
            self.volumes[idx - 1]
        }
    }
}

/// A finite connected metric measure graph.
#[derive(Clone, Debug)]
pub struct DiscreteManifold {
    mu: Vec<f64>,
    edges: Vec<Edge>,
    adj: Vec<Vec<(usize, usize)>>,
    dist: Vec<f64>,
    profiles: Vec<VolumeProfile>,
    diameter: f64,
}

/// Closed metric ball `B(center, radius)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallSpec {
    pub center: usize,
    pub radius: f64,
    pub members: Vec<usize>,
    pub volume: f64,
}

/// Dyadic annulus `C_j(B)`; `C_0(B) = B`.
#[derive(Clone, Debug, PartialEq)]
pub struct Annulus {
    pub base: BallSpec,
    pub j: u32,
    pub members: Vec<usize>,
}

/// Model spaces understood by [`build_model`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Grid { dim: usize, side: usize },
    Dumbbell { dim: usize, side: usize },
    BinaryTree { depth: usize },
    FromFile { path: String },
}

impl DiscreteManifold {
    /// Validates the data and computes the all-pairs path metric.
    pub fn new(mu: Vec<f64>, edges: Vec<Edge>) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::InvalidManifold("no vertices".into()));
        }
        if n > MAX_VERTICES {
            return Err(Error::InvalidManifold(format!("{n} vertices exceeds the limit of {MAX_VERTICES}")));
        }
        if let Some((i, m)) = mu.iter().enumerate().find(|(_, m)| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidManifold(format!("measure at vertex {i} is {m}, must be positive")));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut canon = Vec::with_capacity(edges.len());
        for e in &edges {
            if e.u >= n || e.v >= n {
                return Err(Error::InvalidManifold(format!("edge ({}, {}) out of range", e.u, e.v)));
            }
            if e.u == e.v {
                return Err(Error::InvalidManifold(format!("self-loop at vertex {}", e.u)));
            }
            if !(e.w.is_finite() && e.w >= 0.0) {
                return Err(Error::InvalidManifold(format!(
                    "conductance on ({}, {}) is {}, must be nonnegative",
                    e.u, e.v, e.w
                )));
            }
            if !(e.len.is_finite() && e.len > 0.0) {
                return Err(Error::InvalidManifold(format!(
                    "length on ({}, {}) is {}, must be positive",
                    e.u, e.v, e.len
                )));
            }
            let (u, v) = if e.u < e.v { (e.u, e.v) } else { (e.v, e.u) };
            if !seen.insert((u, v)) {
                return Err(Error::InvalidManifold(format!("edge ({u}, {v}) listed twice")));
            }
            canon.push(Edge { u, v, w: e.w, len: e.len });
        }
        let mut adj = vec![Vec::new(); n];
        for (k, e) in canon.iter().enumerate() {
            adj[e.u].push((e.v, k));
            adj[e.v].push((e.u, k));
        }

        let mut dist = vec![f64::INFINITY; n * n];
        for s in 0..n {
            dijkstra(&adj, &canon, s, &mut dist[s * n..(s + 1) * n]);
        }
        if let Some(pos) = dist.iter().position(|d| d.is_infinite()) {
            return Err(Error::InvalidManifold(format!(
                "graph is disconnected (no path from {} to {})",
                pos / n,
                pos % n
            )));
        }
        // both directions computed independently; keep the metric exactly symmetric
        for x in 0..n {
            for y in (x + 1)..n {
                let d = dist[x * n + y].min(dist[y * n + x]);
                dist[x * n + y] = d;
                dist[y * n + x] = d;
            }
        }
        let diameter = dist.iter().cloned().fold(0.0, f64::max);

        let profiles = (0..n)
            .map(|x| {
                let mut pairs: Vec<(f64, f64)> = (0..n).map(|y| (dist[x * n + y], mu[y])).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut radii = Vec::new();
                let mut volumes = Vec::new();
                let mut acc = 0.0;
                for (i, (d, m)) in pairs.iter().enumerate() {
                    acc += m;
                    let last = i + 1 == pairs.len() || pairs[i + 1].0 != *d;
                    if last {
                        radii.push(*d);
                        volumes.push(acc);
                    }
                }
                VolumeProfile { radii, volumes }
            })
            .collect();

        Ok(DiscreteManifold { mu, edges: canon, adj, dist, profiles, diameter })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of `x` as `(neighbor, edge index)` pairs.
    pub fn neighbors(&self, x: usize) -> &[(usize, usize)] {
        &self.adj[x]
    }

    #[inline]
    pub fn dist(&self, x: usize, y: usize) -> f64 {
        self.dist[x * self.n() + y]
    }

    /// Row `x` of the distance matrix.
    pub fn dist_row(&self, x: usize) -> &[f64] {
        let n = self.n();
        &self.dist[x * n..(x + 1) * n]
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn total_measure(&self) -> f64 {
        self.mu.iter().sum()
    }

    /// `Vol(x, r)`, closed-ball convention.
    pub fn volume(&self, x: usize, r: f64) -> f64 {
        self.profiles[x].volume(r)
    }

    /// Sorted distinct values of `d(x, .)`, i.e. the breakpoints of `Vol(x, .)`.
    pub fn breakpoints(&self, x: usize) -> &[f64] {
        &self.profiles[x].radii
    }

    /// Closed-ball volumes at each of [`Self::breakpoints`].
    pub fn breakpoint_volumes(&self, x: usize) -> &[f64] {
        &self.profiles[x].volumes
    }

    /// Sorted distinct pairwise distances over the whole manifold.
    pub fn distinct_distances(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.profiles.iter().flat_map(|p| p.radii.iter().cloned()).collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }

    /// Distance between vertex sets (minimum over pairs).
    pub fn set_distance(&self, a: &[usize], b: &[usize]) -> f64 {
        let mut best = f64::INFINITY;
        for &x in a {
            for &y in b {
                best = best.min(self.dist(x, y));
            }
        }
        best
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| e.len).fold(f64::INFINITY, f64::min)
    }

    /// Closed metric ball.
    pub fn ball(&self, x: usize, r: f64) -> Result<BallSpec> {
        if x >= self.n() {
            return Err(Error::InvalidArgument(format!("vertex {x} out of range")));
        }
        if !(r >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius {r} must be nonnegative")));
        }
        let members: Vec<usize> = (0..self.n()).filter(|&y| self.dist(x, y) <= r).collect();
        let volume = members.iter().map(|&y| self.mu[y]).sum();
        Ok(BallSpec { center: x, radius: r, members, volume })
    }

    /// `C_j(B) = B(c, 2^{j+1} r) \ B(c, 2^j r)` for `j >= 1`, `C_0(B) = B`.
    pub fn annulus(&self, base: &BallSpec, j: u32) -> Annulus {
        let members = if j == 0 {
            base.members.clone()
        } else {
            let inner = base.radius * 2f64.powi(j as i32);
            let outer = 2.0 * inner;
            (0..self.n())
                .filter(|&y| {
                    let d = self.dist(base.center, y);
                    d > inner && d <= outer
                })
                .collect()
        };
        Annulus { base: base.clone(), j, members }
    }

    /// Loads the JSON manifold format; returns the potential when the companion section is present.
    pub fn from_file(path: impl AsRef<Path>) -> Result<(Self, Option<PotentialSplit>)> {
        let text = std::fs::read_to_string(path)?;
        let file: ManifoldFile = serde_json::from_str(&text)?;
        file.into_manifold()
    }

    /// Writes the JSON manifold format.
    pub fn to_file(&self, path: impl AsRef<Path>, potential: Option<&PotentialSplit>) -> Result<()> {
        let file = ManifoldFile::from_manifold(self, potential);
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adj: &[Vec<(usize, usize)>], edges: &[Edge], source: usize, out: &mut [f64]) {
    out[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, x)) = heap.pop() {
        if d > out[x] {
            continue;
        }
        for &(y, k) in &adj[x] {
            let nd = d + edges[k].len;
            if nd < out[y] {
                out[y] = nd;
                heap.push(HeapItem(nd, y));
            }
        }
    }
}

/// On-disk manifold description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifoldFile {
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: usize,
    pub mu: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub u: usize,
    pub v: usize,
    #[serde(default = "one")]
    pub w: f64,
    #[serde(default = "one")]
    pub len: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialRecord {
    pub vplus: Vec<f64>,
    pub vminus: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

impl ManifoldFile {
    pub fn into_manifold(self) -> Result<(DiscreteManifold, Option<PotentialSplit>)> {
        let n = self.vertices.len();
        let mut mu = vec![f64::NAN; n];
        for v in &self.vertices {
            if v.id >= n || !mu[v.id].is_nan() {
                return Err(Error::InvalidManifold(format!(
                    "vertex ids must be dense 0-based and unique (offending id {})",
                    v.id
                )));
            }
            mu[v.id] = v.mu;
        }
        let edges = self.edges.iter().map(|e| Edge { u: e.u, v: e.v, w: e.w, len: e.len }).collect();
        let m = DiscreteManifold::new(mu, edges)?;
        let pot = match self.potential {
            Some(p) => Some(PotentialSplit::new(p.vplus, p.vminus, m.n())?),
            None => None,
        };
        Ok((m, pot))
    }

    pub fn from_manifold(m: &DiscreteManifold, potential: Option<&PotentialSplit>) -> Self {
        ManifoldFile {
            vertices: m.mu.iter().enumerate().map(|(id, &mu)| VertexRecord { id, mu }).collect(),
            edges: m.edges.iter().map(|e| EdgeRecord { u: e.u, v: e.v, w: e.w, len: e.len }).collect(),
            potential: potential.map(|p| PotentialRecord { vplus: p.vplus().to_vec(), vminus: p.vminus().to_vec() }),
        }
    }
}

/// Builds one of the model spaces with `mu = 1`, `w = 1`, `len = 1`.
pub fn build_model(kind: &ModelKind) -> Result<DiscreteManifold> {
    match *kind {
        ModelKind::Grid { dim, side } => grid(dim, side),
        ModelKind::Dumbbell { dim, side } => dumbbell(dim, side),
        ModelKind::BinaryTree { depth } => binary_tree(depth),
        ModelKind::FromFile { ref path } => Ok(DiscreteManifold::from_file(path)?.0),
    }
}

fn grid_size(dim: usize, side: usize) -> Result<usize> {
    if dim == 0 || side == 0 {
        return Err(Error::InvalidArgument("grid dimension and side must be positive".into()));
    }
    side.checked_pow(dim as u32)
        .filter(|&n| n <= MAX_VERTICES)
        .ok_or_else(|| Error::InvalidArgument(format!("grid({dim}, {side}) is too large")))
}

fn grid_edges(dim: usize, side: usize, offset: usize, map: &dyn Fn(usize) -> usize) -> Vec<Edge> {
    let n = side.pow(dim as u32);
    let mut edges = Vec::new();
    for x in 0..n {
        let mut stride = 1;
        for _ in 0..dim {
            let coord = (x / stride) % side;
            if coord + 1 < side {
                let (a, b) = (map(x) + offset, map(x + stride) + offset);
                edges.push(Edge { u: a.min(b), v: a.max(b), w: 1.0, len: 1.0 });
            }
            stride *= side;
        }
    }
    edges
}

/// `side^dim` lattice with nearest-neighbor edges.
pub fn grid(dim: usize, side: usize) -> Result<DiscreteManifold> {
    let n = grid_size(dim, side)?;
    DiscreteManifold::new(vec![1.0; n], grid_edges(dim, side, 0, &|x| x))
}

/// Two `side^dim` grids sharing their center vertex.
pub fn dumbbell(dim: usize, side: usize) -> Result<DiscreteManifold> {
    let half = grid_size(dim, side)?;
    let n = 2 * half - 1;
    if n > MAX_VERTICES {
        return Err(Error::InvalidArgument(format!("dumbbell({dim}, {side}) is too large")));
    }
    let center: usize = (0..dim).map(|k| (side / 2) * side.pow(k as u32)).sum();
    let mut edges = grid_edges(dim, side, 0, &|x| x);
    // second copy: its center is identified with the first copy's center,
    // every other vertex shifts into [half, 2 half - 1)
    let second = move |x: usize| -> usize {
        match x.cmp(&center) {
            Ordering::Equal => center,
            Ordering::Less => half + x,
            Ordering::Greater => half + x - 1,
        }
    };
    edges.extend(grid_edges(dim, side, 0, &second));
    DiscreteManifold::new(vec![1.0; n], edges)
}

/// Complete binary tree with `depth` levels below the root.
pub fn binary_tree(depth: usize) -> Result<DiscreteManifold> {
    if depth > 11 {
        return Err(Error::InvalidArgument(format!("binary_tree({depth}) is too large")));
    }
    let n = (1usize << (depth + 1)) - 1;
    let edges = (1..n).map(|v| Edge { u: (v - 1) / 2, v, w: 1.0, len: 1.0 }).collect();
    DiscreteManifold::new(vec![1.0; n], edges)
}

/// Volume-growth exponent in a scaling window.
///
/// The exponent `N` is the least-squares slope of `log Vol(x, r)` against
/// `log(r + h/2)`, pooled over all centers and the distinct distances `r` in the
/// window, with `h` the shortest edge. `N_raw` is the same fit against `log r`;
/// on lattices it is biased low at small radii.
pub fn doubling_fit(m: &DiscreteManifold, r_min: f64, r_max: f64) -> Result<FitReport> {
    let mut report = FitReport::new("doubling");
    if m.n() == 1 {
        report.set("N", 0.0);
        report.set("C", 1.0);
        report.set("doubling_ratio", 1.0);
        report.set("increment", 0.0);
        report.max_violation = 0.0;
        return Ok(report);
    }
    if !(r_min > 0.0 && r_min < r_max) {
        return Err(Error::InvalidArgument(format!("window [{r_min}, {r_max}] must satisfy 0 < r_min < r_max")));
    }
    if r_max > m.diameter() {
        return Err(Error::InvalidArgument(format!("window end {r_max} exceeds the diameter {}", m.diameter())));
    }
    let radii: Vec<f64> = m.distinct_distances().into_iter().filter(|&d| d >= r_min && d <= r_max).collect();
    if radii.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "degenerate window [{r_min}, {r_max}]: {} distinct radii",
            radii.len()
        )));
    }

    // pooled least squares of log Vol(x, r) on log(r + h/2) over centers and window radii;
    // a closed ball of radius r fills the lattice cells out to r + h/2
    let half = 0.5 * m.min_edge_length();
    let ols = |shift: f64| -> (f64, f64) {
        let (mut su, mut sg, mut suu, mut sug, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for x in 0..m.n() {
            for &r in &radii {
                let u = (r + shift).ln();
                let g = m.volume(x, r).ln();
                su += u;
                sg += g;
                suu += u * u;
                sug += u * g;
                cnt += 1.0;
            }
        }
        let slope = (sug - su * sg / cnt) / (suu - su * su / cnt);
        (slope, (sg - slope * su) / cnt)
    };
    let (n_exp, intercept) = ols(half);
    let (n_raw, _) = ols(0.0);

    // feasibility constant for Vol(x, s) <= C (s/r)^N Vol(x, r), r < s in the window
    let mut c_const: f64 = 1.0;
    let mut ratio_rows = Vec::new();
    let mut doubling_max: f64 = 0.0;
    for &r in &radii {
        let mut row_max: f64 = 0.0;
        for x in 0..m.n() {
            let vr = m.volume(x, r);
            row_max = row_max.max(m.volume(x, 2.0 * r) / vr);
            for &s in radii.iter().filter(|&&s| s > r) {
                c_const = c_const.max(m.volume(x, s) / (vr * (s / r).powf(n_exp)));
            }
        }
        doubling_max = doubling_max.max(row_max);
        ratio_rows.push((r, row_max));
    }
    let ratio_min = ratio_rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    if doubling_max > 2.0 * ratio_min {
        report.flag("doubling suspect");
    }

    let h = m.min_edge_length();
    let mut increment: f64 = 0.0;
    let mut t = r_min;
    while t <= r_max + 1e-12 {
        for y in 0..m.n() {
            let v = m.volume(y, t);
            increment = increment.max(t * (m.volume(y, t + h) - v) / (h * v));
        }
        t += h;
    }

    report.set("N", n_exp);
    report.set("intercept", intercept);
    report.set("N_raw", n_raw);
    report.set("C", c_const);
    report.set("doubling_ratio", doubling_max);
    report.set("doubling_ratio_min", ratio_min);
    report.set("increment", increment);
    report.columns = vec!["radius".into(), "max_doubling_ratio".into()];
    report.rows = ratio_rows.into_iter().map(|(r, q)| vec![r, q]).collect();
    report.max_violation = 0.0;
    Ok(report)
}
