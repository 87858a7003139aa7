//! Time integration over cones.
//!
//! Every functional has the form
//!
//! ```text
//! G(x)^2 = int_0^inf sum_{y in cone(x, t)} I(y, t) mu(y) / Vol(y, rho(t)) dt
//! ```
//!
//! where `I(y, t)` is a quadratic expression in `a_j(t)`, the time-dependent
//! mode amplitudes. Cone membership and volumes only change at finitely many
//! times (the breakpoints), so with `J_y[s]` the integral of `I(y, .)/Vol` over
//! segment `s`, `G(x)^2 = sum_y mu(y) sum_{s >= entry(x, y)} J_y[s]`.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::DiscreteManifold;
use crate::quadrature::gauss_legendre;

/// How the cone opens with height `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConeScaling {
    /// `y in B(x, sqrt t)`, volumes `Vol(y, sqrt t)`.
    Parabolic,
    /// `y in B(x, aperture t)`, volumes `Vol(y, t)`.
    Linear { aperture: f64 },
}

impl ConeScaling {
    pub const POISSON: ConeScaling = ConeScaling::Linear { aperture: 1.0 };

    /// First time at which a point at distance `d` enters the cone.
    pub fn entry_time(&self, d: f64) -> f64 {
        match *self {
            ConeScaling::Parabolic => d * d,
            ConeScaling::Linear { aperture } => d / aperture,
        }
    }

    /// Radius of the normalizing ball at height `t`.
    pub fn volume_radius(&self, t: f64) -> f64 {
        match *self {
            ConeScaling::Parabolic => t.sqrt(),
            ConeScaling::Linear { .. } => t,
        }
    }

    /// Height at which the normalizing ball reaches radius `r`.
    pub fn volume_time(&self, r: f64) -> f64 {
        match *self {
            ConeScaling::Parabolic => r * r,
            ConeScaling::Linear { .. } => r,
        }
    }
}

const MERGE_REL: f64 = 1e-12;

/// Breakpoints, entry segments and segment volumes for one manifold and scaling.
#[derive(Clone, Debug)]
pub struct ConeGeometry {
    scaling: ConeScaling,
    n: usize,
    breakpoints: Vec<f64>,
    entry: Vec<u32>,
    vol: Vec<f64>,
    mu: Vec<f64>,
}

impl ConeGeometry {
    pub fn new(m: &DiscreteManifold, scaling: ConeScaling) -> Self {
        let n = m.n();
        let dists = m.distinct_distances();
        let mut times: Vec<f64> = dists.iter().flat_map(|&d| [scaling.entry_time(d), scaling.volume_time(d)]).collect();
        times.push(0.0);
        times.sort_by(f64::total_cmp);
        let mut breakpoints: Vec<f64> = Vec::with_capacity(times.len());
        for t in times {
            match breakpoints.last() {
                Some(&last) if t <= last * (1.0 + MERGE_REL) => {}
                _ => breakpoints.push(t),
            }
        }
        let s_count = breakpoints.len();
        let locate = |t: f64| -> u32 {
            let k = breakpoints.partition_point(|&b| b <= t * (1.0 + 2.0 * MERGE_REL));
            (k.max(1) - 1) as u32
        };
        let mut entry = vec![0u32; n * n];
        for x in 0..n {
            for (y, &d) in m.dist_row(x).iter().enumerate() {
                entry[x * n + y] = locate(scaling.entry_time(d));
            }
        }
        let mut vol = vec![0.0; n * s_count];
        for s in 0..s_count {
            let probe =
                if s + 1 < s_count { 0.5 * (breakpoints[s] + breakpoints[s + 1]) } else { 2.0 * breakpoints[s] + 1.0 };
            let r = scaling.volume_radius(probe);
            for y in 0..n {
                vol[y * s_count + s] = m.volume(y, r);
            }
        }
        ConeGeometry { scaling, n, breakpoints, entry, vol, mu: m.mu().to_vec() }
    }

    pub fn scaling(&self) -> ConeScaling {
        self.scaling
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segments(&self) -> usize {
        self.breakpoints.len()
    }

    /// Segment containing `t` (segments are `[b_s, b_{s+1})`).
    pub fn segment_of(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= t).max(1) - 1
    }

    /// Segment index at which `y` enters the cone of `x`.
    pub fn entry(&self, x: usize, y: usize) -> usize {
        self.entry[x * self.n + y] as usize
    }

    /// `Vol(y, rho(t))` on segment `s`.
    pub fn volume(&self, y: usize, s: usize) -> f64 {
        self.vol[y * self.segments() + s]
    }

    /// `sum_y mu(y) sum_{s >= entry(x,y)} seg[y][s]` for every `x`.
    pub fn aggregate(&self, seg: &[f64]) -> Vec<f64> {
        let s_count = self.segments();
        let mut tails = seg.to_vec();
        for y in 0..self.n {
            let row = &mut tails[y * s_count..(y + 1) * s_count];
            for s in (0..s_count.saturating_sub(1)).rev() {
                row[s] += row[s + 1];
            }
        }
        (0..self.n)
            .map(|x| (0..self.n).map(|y| self.mu[y] * tails[y * s_count + self.entry(x, y)]).sum::<f64>().max(0.0))
            .collect()
    }
}

/// Spatial part of an integrand term, evaluated on a field `u = basis a(t)`.
#[derive(Clone, Copy, Debug)]
pub enum Spatial<'a> {
    /// `|grad u|^2(y) + pot(y) u(y)^2` for a vertex field.
    Energy { basis: &'a DMatrix<f64>, pot: Option<&'a [f64]> },
    /// `u(y)^2` for a vertex field.
    Pointwise { basis: &'a DMatrix<f64> },
    /// `(1/(2 mu(y))) sum_{e at y} w_e u_e^2` for an edge field.
    EdgeNorm { basis: &'a DMatrix<f64> },
}

impl<'a> Spatial<'a> {
    pub fn basis(&self) -> &'a DMatrix<f64> {
        match *self {
            Spatial::Energy { basis, .. } | Spatial::Pointwise { basis } | Spatial::EdgeNorm { basis } => basis,
        }
    }

    /// Values at every vertex, one column of `u` per output column.
    pub fn evaluate(&self, m: &DiscreteManifold, u: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.n();
        let cols = u.ncols();
        let mu = m.mu();
        let mut out = DMatrix::zeros(n, cols);
        match *self {
            Spatial::Energy { pot, .. } => {
                for c in 0..cols {
                    let uc = u.column(c);
                    let mut oc = out.column_mut(c);
                    for e in m.edges() {
                        let d = uc[e.v] - uc[e.u];
                        let s = e.w * d * d;
                        oc[e.u] += s;
                        oc[e.v] += s;
                    }
                    for y in 0..n {
                        oc[y] /= 2.0 * mu[y];
                        if let Some(p) = pot {
                            oc[y] += p[y] * uc[y] * uc[y];
                        }
                    }
                }
            }
            Spatial::Pointwise { .. } => {
                out.zip_apply(u, |o, v| *o = v * v);
            }
            Spatial::EdgeNorm { .. } => {
                for c in 0..cols {
                    let uc = u.column(c);
                    let mut oc = out.column_mut(c);
                    for (k, e) in m.edges().iter().enumerate() {
                        let s = e.w * uc[k] * uc[k];
                        oc[e.u] += s;
                        oc[e.v] += s;
                    }
                    for y in 0..n {
                        oc[y] /= 2.0 * mu[y];
                    }
                }
            }
        }
        out
    }

    /// Rank-one pieces `(weight, vector)` whose weighted outer products sum to the
    /// quadratic form at `y`; rows are taken from `sub`, the active-column basis.
    fn rank_one_terms(&self, m: &DiscreteManifold, sub: &DMatrix<f64>, y: usize, out: &mut Vec<(f64, Vec<f64>)>) {
        out.clear();
        let ka = sub.ncols();
        let row = |i: usize| -> Vec<f64> { (0..ka).map(|j| sub[(i, j)]).collect() };
        let mu_y = m.mu()[y];
        match *self {
            Spatial::Energy { pot, .. } => {
                let gy = row(y);
                for &(z, k) in m.neighbors(y) {
                    let w = m.edges()[k].w;
                    let gz = row(z);
                    out.push((w / (2.0 * mu_y), gz.iter().zip(&gy).map(|(a, b)| a - b).collect()));
                }
                if let Some(p) = pot {
                    if p[y] != 0.0 {
                        out.push((p[y], gy));
                    }
                }
            }
            Spatial::Pointwise { .. } => out.push((1.0, row(y))),
            Spatial::EdgeNorm { .. } => {
                for &(_, k) in m.neighbors(y) {
                    let w = m.edges()[k].w;
                    out.push((w / (2.0 * mu_y), row(k)));
                }
            }
        }
    }
}

/// Amplitude as a function of `(t, lambda)`.
pub type Amplitude = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Time dependence of the mode amplitudes of a term.
#[derive(Clone)]
pub enum Profile {
    /// `a_j(t) = scale_j e^{-rate_j t}`, integrand weighted by `t^power`.
    ExpPoly { rates: Vec<f64>, scales: Vec<f64>, power: u32 },
    /// `a_j(t) = coef_j amp(t, lambda_j)`, integrand weighted by `t^power`.
    General { amp: Amplitude, lambdas: Vec<f64>, coefs: Vec<f64>, power: f64 },
}

impl Profile {
    fn len(&self) -> usize {
        match self {
            Profile::ExpPoly { scales, .. } => scales.len(),
            Profile::General { coefs, .. } => coefs.len(),
        }
    }

    fn active(&self) -> Vec<usize> {
        let c = match self {
            Profile::ExpPoly { scales, .. } => scales,
            Profile::General { coefs, .. } => coefs,
        };
        (0..c.len()).filter(|&j| c[j] != 0.0).collect()
    }

    fn amplitude(&self, j: usize, t: f64) -> f64 {
        match self {
            Profile::ExpPoly { rates, scales, .. } => scales[j] * (-rates[j] * t).exp(),
            Profile::General { amp, lambdas, coefs, .. } => coefs[j] * amp(t, lambdas[j]),
        }
    }

    fn weight(&self, t: f64) -> f64 {
        match self {
            Profile::ExpPoly { power, .. } => t.powi(*power as i32),
            Profile::General { power, .. } => {
                if *power == 0.0 {
                    1.0
                } else {
                    t.powf(*power)
                }
            }
        }
    }
}

/// One additive piece of an integrand.
#[derive(Clone)]
pub struct Term<'a> {
    pub spatial: Spatial<'a>,
    pub profile: Profile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Closed-form segment integrals of exponential sums.
    Exact,
    /// Composite Gauss-Legendre on breakpoints plus a logarithmic grid.
    Quadrature,
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Exact => "exact",
            Engine::Quadrature => "quadrature",
        })
    }
}

/// Settings of the quadrature engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    /// Log-grid points over the reference span of seven decades.
    pub log_points: usize,
    /// Gauss-Legendre order per interval.
    pub order: usize,
    /// Bisect intervals whose embedded error estimate is too large.
    pub adaptive: bool,
    pub rel_tol: f64,
    pub max_depth: u32,
    /// Admissible relative mass beyond the last knot.
    pub trunc_tol: f64,
    /// How many decades the grid may be extended to meet `trunc_tol`.
    pub max_extend_decades: u32,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            log_points: 200,
            order: 8,
            adaptive: true,
            rel_tol: 1e-11,
            max_depth: 24,
            trunc_tol: 1e-9,
            max_extend_decades: 40,
        }
    }
}

impl QuadConfig {
    /// Coarser settings for repeated evaluation inside searches.
    pub fn fast() -> Self {
        QuadConfig { log_points: 60, order: 6, adaptive: false, trunc_tol: 1e-6, ..Default::default() }
    }
}

/// Characteristic rates `(r_min, r_max)`: the integrand varies on times `1/r`.
#[derive(Clone, Copy, Debug)]
pub struct TimeScale {
    pub r_min: f64,
    pub r_max: f64,
}

/// Per-term squared functionals plus diagnostics.
#[derive(Clone, Debug)]
pub struct EngineOutput {
    pub per_term: Vec<Vec<f64>>,
    /// Relative mass estimated beyond the last knot (quadrature only).
    pub truncation: f64,
    /// Accumulated embedded error estimate, relative to the total (quadrature only).
    pub quad_error: f64,
}

impl EngineOutput {
    pub fn total(&self) -> Vec<f64> {
        let n = self.per_term.first().map_or(0, |v| v.len());
        (0..n).map(|x| self.per_term.iter().map(|v| v[x]).sum()).collect()
    }
}

fn zeros_output(terms: usize, n: usize) -> EngineOutput {
    EngineOutput { per_term: vec![vec![0.0; n]; terms], truncation: 0.0, quad_error: 0.0 }
}

/// Integrates all terms over the cones of `geom`.
pub fn integrate(
    m: &DiscreteManifold,
    geom: &ConeGeometry,
    terms: &[Term<'_>],
    engine: Engine,
    cfg: &QuadConfig,
    scale: Option<TimeScale>,
) -> Result<EngineOutput> {
    for t in terms {
        if t.spatial.basis().ncols() != t.profile.len() {
            return Err(Error::InvalidArgument("basis and profile sizes differ".into()));
        }
    }
    let any_active = terms.iter().any(|t| !t.profile.active().is_empty());
    if !any_active {
        return Ok(zeros_output(terms.len(), m.n()));
    }
    match engine {
        Engine::Exact => exact(m, geom, terms),
        Engine::Quadrature => {
            let scale = scale.ok_or_else(|| Error::InvalidArgument("quadrature needs a time scale".into()))?;
            quadrature(m, geom, terms, cfg, scale)
        }
    }
}

fn gather_columns(basis: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(basis.nrows(), cols.len(), |i, j| basis[(i, cols[j])])
}

/// Work limit for the exact engine (number of floating point products).
const EXACT_WORK_LIMIT: f64 = 4e9;

fn exact(m: &DiscreteManifold, geom: &ConeGeometry, terms: &[Term<'_>]) -> Result<EngineOutput> {
    let n = m.n();
    let s_count = geom.segments();
    let bps = geom.breakpoints();
    let mut per_term = Vec::with_capacity(terms.len());
    for term in terms {
        let Profile::ExpPoly { rates, scales, power } = &term.profile else {
            return Err(Error::EngineUnavailable(
                "time profile is not an exponential polynomial; use the quadrature engine".into(),
            ));
        };
        let active = term.profile.active();
        let ka = active.len();
        if ka == 0 {
            per_term.push(vec![0.0; n]);
            continue;
        }
        let deg = 2.0 * m.num_edges() as f64 / n as f64 + 1.0;
        let work = (n as f64) * (ka * ka) as f64 * (deg + s_count as f64);
        if work > EXACT_WORK_LIMIT {
            return Err(Error::EngineUnavailable(format!(
                "exact engine needs about {work:.1e} operations (n = {n}, {ka} active modes, {s_count} segments)"
            )));
        }
        let sub = gather_columns(term.spatial.basis(), &active);

        // segment kernels: column s holds s_j s_k int_{b_s}^{b_{s+1}} t^m e^{-(r_j + r_k) t} dt
        let mut kmat = DMatrix::zeros(ka * ka, s_count);
        for s in 0..s_count {
            let a = bps[s];
            let b = if s + 1 < s_count { bps[s + 1] } else { f64::INFINITY };
            for (p, &j) in active.iter().enumerate() {
                for (q, &k) in active.iter().enumerate().skip(p) {
                    let lam = rates[j] + rates[k];
                    if lam <= 0.0 && b.is_infinite() {
                        return Err(Error::DivergentIntegral { vertex: 0, magnitude: scales[j] * scales[k] });
                    }
                    let v = scales[j] * scales[k] * seg_integral(*power, lam, a, b);
                    kmat[(p * ka + q, s)] = v;
                    kmat[(q * ka + p, s)] = v;
                }
            }
        }

        // quadratic form of each vertex, flattened row-major
        let mut aflat = DMatrix::zeros(n, ka * ka);
        let mut pieces = Vec::new();
        for y in 0..n {
            term.spatial.rank_one_terms(m, &sub, y, &mut pieces);
            for (w, g) in &pieces {
                for p in 0..ka {
                    let wp = w * g[p];
                    if wp == 0.0 {
                        continue;
                    }
                    for q in 0..ka {
                        aflat[(y, p * ka + q)] += wp * g[q];
                    }
                }
            }
        }
        let seg = &aflat * &kmat;
        let mut j = vec![0.0; n * s_count];
        for y in 0..n {
            for s in 0..s_count {
                j[y * s_count + s] = seg[(y, s)] / geom.volume(y, s);
            }
        }
        per_term.push(geom.aggregate(&j));
    }
    Ok(EngineOutput { per_term, truncation: 0.0, quad_error: 0.0 })
}

/// `int_a^b t^m e^{-lam t} dt`, `b` possibly infinite.
pub fn seg_integral(m: u32, lam: f64, a: f64, b: f64) -> f64 {
    if b.is_infinite() {
        // e^{-lam a} sum_i C(m,i) a^{m-i} i!/lam^{i+1}
        let ea = (-lam * a).exp();
        let mut sum = 0.0;
        let mut fact = 1.0;
        for i in 0..=m {
            if i > 0 {
                fact *= i as f64;
            }
            sum += binom(m, i) * a.powi((m - i) as i32) * fact / lam.powi(i as i32 + 1);
        }
        return ea * sum;
    }
    let h = b - a;
    if h <= 0.0 {
        return 0.0;
    }
    let ea = (-lam * a).exp();
    let mut sum = 0.0;
    for i in 0..=m {
        sum += binom(m, i) * a.powi((m - i) as i32) * moment(i, lam, h);
    }
    ea * sum
}

/// `int_0^h s^i e^{-lam s} ds`, stable for small `lam h`.
fn moment(i: u32, lam: f64, h: f64) -> f64 {
    let x = lam * h;
    if x < 2.0 {
        // h^{i+1} sum_k (-x)^k / (k! (k + i + 1))
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..200u32 {
            let add = term / (k + i + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 * sum.abs() && k > 2 {
                break;
            }
            term *= -x / (k + 1) as f64;
        }
        h.powi(i as i32 + 1) * sum
    } else {
        let e = (-x).exp();
        let mut val = -(-x).exp_m1() / lam;
        for k in 1..=i {
            val = (k as f64 * val - h.powi(k as i32) * e) / lam;
        }
        val
    }
}

fn binom(m: u32, i: u32) -> f64 {
    let mut r = 1.0;
    for k in 0..i {
        r = r * (m - k) as f64 / (k + 1) as f64;
    }
    r
}

struct Interval {
    a: f64,
    b: f64,
    depth: u32,
}

struct QuadState<'t, 'a> {
    m: &'t DiscreteManifold,
    terms: &'t [Term<'a>],
    subs: Vec<DMatrix<f64>>,
    actives: Vec<Vec<usize>>,
    j: Vec<Vec<f64>>,
}

impl QuadState<'_, '_> {
    /// Integrand values `I_term(y, t_i) * weight(t_i)` for every term.
    fn evaluate(&self, times: &[f64]) -> Vec<DMatrix<f64>> {
        self.terms
            .iter()
            .enumerate()
            .map(|(ti, term)| {
                let active = &self.actives[ti];
                if active.is_empty() {
                    return DMatrix::zeros(self.m.n(), times.len());
                }
                let amat =
                    DMatrix::from_fn(active.len(), times.len(), |p, i| term.profile.amplitude(active[p], times[i]));
                let u = &self.subs[ti] * amat;
                let mut vals = term.spatial.evaluate(self.m, &u);
                for (i, &t) in times.iter().enumerate() {
                    let w = term.profile.weight(t);
                    vals.column_mut(i).scale_mut(w);
                }
                vals
            })
            .collect()
    }

    /// `sum_y mu(y) I(y, t)` over all terms.
    fn density(&self, vals: &[DMatrix<f64>], col: usize) -> f64 {
        let mu = self.m.mu();
        vals.iter().map(|v| (0..self.m.n()).map(|y| mu[y] * v[(y, col)]).sum::<f64>()).sum()
    }
}

fn log_knots(lo: f64, hi: f64, per_decade: f64) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let count = (decades * per_decade).ceil().max(1.0) as usize;
    (0..=count).map(|i| lo * 10f64.powf(decades * i as f64 / count as f64)).collect()
}

fn quadrature(
    m: &DiscreteManifold,
    geom: &ConeGeometry,
    terms: &[Term<'_>],
    cfg: &QuadConfig,
    scale: TimeScale,
) -> Result<EngineOutput> {
    let n = m.n();
    let s_count = geom.segments();
    let per_decade = cfg.log_points.max(8) as f64 / 7.0;
    let rule = gauss_legendre(cfg.order.max(2));
    let coarse = gauss_legendre((cfg.order / 2).max(1));

    let r_min = scale.r_min.max(f64::MIN_POSITIVE);
    let r_max = scale.r_max.max(r_min);
    let t_lo = (1e-4 / r_min).min(1e-3 / r_max);
    let mut t_hi = 1e3 / r_min;
    let last_bp = *geom.breakpoints().last().unwrap_or(&0.0);
    if last_bp > 0.0 {
        t_hi = t_hi.max(2.0 * last_bp);
    }
    let mut knots = vec![0.0];
    knots.extend(log_knots(t_lo, t_hi, per_decade));
    knots.extend(geom.breakpoints().iter().copied().filter(|&b| b > 0.0));
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs());

    let actives: Vec<Vec<usize>> = terms.iter().map(|t| t.profile.active()).collect();
    let subs = terms.iter().zip(&actives).map(|(t, a)| gather_columns(t.spatial.basis(), a)).collect();
    let mut st = QuadState { m, terms, subs, actives, j: vec![vec![0.0; n * s_count]; terms.len()] };

    let mut total = 0.0;
    let mut err_sum = 0.0;
    let mut pending: VecDeque<Interval> = knots.windows(2).map(|w| Interval { a: w[0], b: w[1], depth: 0 }).collect();
    let mut t_end = *knots.last().unwrap();
    let mut extended = 0u32;
    const BATCH: usize = 48;

    loop {
        while !pending.is_empty() {
            let batch: Vec<Interval> = (0..BATCH.min(pending.len())).filter_map(|_| pending.pop_front()).collect();
            let mut times = Vec::new();
            let mut weights = Vec::new();
            for iv in &batch {
                for (t, w) in crate::quadrature::mapped(&rule, iv.a, iv.b) {
                    times.push(t);
                    weights.push(w);
                }
                if cfg.adaptive {
                    for (t, w) in crate::quadrature::mapped(&coarse, iv.a, iv.b) {
                        times.push(t);
                        weights.push(w);
                    }
                }
            }
            let vals = st.evaluate(&times);
            let per = rule.0.len() + if cfg.adaptive { coarse.0.len() } else { 0 };
            let mut rejected = Vec::new();
            for (bi, iv) in batch.iter().enumerate() {
                let base = bi * per;
                let fine_cols = base..base + rule.0.len();
                let agg_fine: f64 = fine_cols.clone().map(|c| weights[c] * st.density(&vals, c)).sum();
                let mut err = 0.0;
                if cfg.adaptive {
                    let agg_coarse: f64 =
                        (base + rule.0.len()..base + per).map(|c| weights[c] * st.density(&vals, c)).sum();
                    err = (agg_fine - agg_coarse).abs();
                    if err > cfg.rel_tol * (total + agg_fine.abs()) && iv.depth < cfg.max_depth {
                        rejected.push(bi);
                        continue;
                    }
                }
                total += agg_fine;
                err_sum += err;
                let s = geom.segment_of(0.5 * (iv.a + iv.b));
                for (ti, v) in vals.iter().enumerate() {
                    let jt = &mut st.j[ti];
                    for y in 0..n {
                        let mut acc = 0.0;
                        for c in fine_cols.clone() {
                            acc += weights[c] * v[(y, c)];
                        }
                        jt[y * s_count + s] += acc / geom.volume(y, s);
                    }
                }
            }
            for &bi in rejected.iter().rev() {
                let iv = &batch[bi];
                let mid = 0.5 * (iv.a + iv.b);
                pending.push_front(Interval { a: mid, b: iv.b, depth: iv.depth + 1 });
                pending.push_front(Interval { a: iv.a, b: mid, depth: iv.depth + 1 });
            }
        }

        // tail beyond t_end: local power-law model from two probes a decade apart
        let probe = st.evaluate(&[t_end, 10.0 * t_end]);
        let d0 = st.density(&probe, 0).abs();
        let d1 = st.density(&probe, 1).abs();
        let tail = if d0 == 0.0 || d1 == 0.0 {
            0.0
        } else {
            let kappa = (d0 / d1).log10();
            if kappa > 1.2 {
                d0 * t_end / (kappa - 1.0)
            } else {
                f64::INFINITY
            }
        };
        let rel_tail = if total > 0.0 {
            tail / total
        } else if tail == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if rel_tail <= cfg.trunc_tol {
            let per_term = st.j.iter().map(|j| geom.aggregate(j)).collect();
            let quad_error = if total > 0.0 { err_sum / total } else { 0.0 };
            return Ok(EngineOutput { per_term, truncation: rel_tail, quad_error });
        }
        if extended >= cfg.max_extend_decades {
            return Err(Error::QuadratureTruncation { estimate: rel_tail, tolerance: cfg.trunc_tol });
        }
        let next = log_knots(t_end, 10.0 * t_end, per_decade);
        pending.extend(next.windows(2).map(|w| Interval { a: w[0], b: w[1], depth: 0 }));
        t_end *= 10.0;
        extended += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_integrals_match_quadrature() {
        let rule = gauss_legendre(20);
        for &m in &[0u32, 1, 2] {
            for &lam in &[1e-9, 0.01, 0.7, 3.0, 40.0] {
                for &(a, b) in &[(0.0, 0.05), (0.3, 1.1), (2.0, 2.5)] {
                    let exact = seg_integral(m, lam, a, b);
                    let num: f64 = crate::quadrature::mapped(&rule, a, b)
                        .map(|(t, w)| w * t.powi(m as i32) * (-lam * t).exp())
                        .sum();
                    assert!((exact - num).abs() <= 1e-13 * num.abs().max(1e-300), "m={m} lam={lam} [{a},{b}]");
                }
            }
        }
    }

    #[test]
    fn infinite_segments() {
        assert!((seg_integral(0, 2.0, 0.0, f64::INFINITY) - 0.5).abs() < 1e-15);
        assert!((seg_integral(1, 2.0, 0.0, f64::INFINITY) - 0.25).abs() < 1e-15);
        let split = seg_integral(1, 0.3, 0.0, 4.0) + seg_integral(1, 0.3, 4.0, f64::INFINITY);
        assert!((split - 1.0 / 0.09).abs() < 1e-12);
    }

    #[test]
    fn geometry_entries() {
        let m = crate::manifold::grid(1, 4).unwrap();
        let g = ConeGeometry::new(&m, ConeScaling::Parabolic);
        assert_eq!(g.breakpoints(), &[0.0, 1.0, 4.0, 9.0]);
        assert_eq!(g.entry(0, 3), 3);
        assert_eq!(g.volume(0, 0), 1.0);
        assert_eq!(g.volume(0, 3), 4.0);
        let lin = ConeGeometry::new(&m, ConeScaling::Linear { aperture: 2.0 });
        assert_eq!(lin.breakpoints(), &[0.0, 0.5, 1.0, 1.5, 2.0, 3.0]);
        assert_eq!(lin.entry(0, 3), 3);
        assert_eq!(lin.volume(1, 1), 1.0);
        assert_eq!(lin.volume(1, 2), 3.0);
    }
}
