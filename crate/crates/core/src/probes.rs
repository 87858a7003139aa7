//! Empirical measurement of norms, off-diagonal decay, heat kernel bounds and subcriticality.
//!
//! Norm estimates are lower bounds (suprema over searched sets). Fits are
//! feasibility fits: the reported constants satisfy the fitted inequality on
//! every sampled point.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::dstar_op;
use crate::manifold::{BallSpec, DiscreteManifold};
use crate::report::FitReport;
use crate::spectral::{gradient_sq, PotentialSplit, SpectralOperator};

/// `(sum mu |f|^p)^{1/p}`, or `max |f|` for `p = inf`.
pub fn lp_norm(m: &DiscreteManifold, f: &[f64], p: f64) -> f64 {
    weighted_lp(m.mu(), f, p)
}

pub(crate) fn weighted_lp(w: &[f64], f: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return f.iter().fold(0.0, |a, v| a.max(v.abs()));
    }
    let top = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if top == 0.0 {
        return 0.0;
    }
    // scaled to avoid overflow for large p
    let s: f64 = w.iter().zip(f).map(|(m, v)| m * (v.abs() / top).powf(p)).sum();
    top * s.powf(1.0 / p)
}

/// `sup_{lambda > 0} lambda mu{|f| > lambda}^{1/p}`, exact by sorting.
pub fn weak_lp(m: &DiscreteManifold, f: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return lp_norm(m, f, p);
    }
    let mut pairs: Vec<(f64, f64)> = f.iter().map(|v| v.abs()).zip(m.mu().iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best: f64 = 0.0;
    let mut mass = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            mass += pairs[i].1;
            i += 1;
        }
        best = best.max(v * mass.powf(1.0 / p));
    }
    best
}

/// Settings of [`ratio_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RatioConfig {
    pub restarts: usize,
    pub steps: usize,
    /// Initial step as a fraction of `||f||_p`.
    pub step_size: f64,
    /// Random directions per gradient estimate; all coordinates when `n` is not larger.
    pub directions: usize,
    /// Finite-difference step relative to `||f||_p`.
    pub fd_rel: f64,
    pub seed: u64,
}

impl Default for RatioConfig {
    fn default() -> Self {
        RatioConfig { restarts: 32, steps: 40, step_size: 0.5, directions: 16, fd_rel: 1e-5, seed: 42 }
    }
}

/// Best ratio `||G f||_p / ||f||_p` found, with its witness.
#[derive(Clone, Debug, Serialize)]
pub struct NormEstimate {
    pub p: f64,
    pub ratio: f64,
    pub witness: Vec<f64>,
    pub restarts: usize,
    pub iterations: usize,
    /// Best ratio after each restart.
    pub history: Vec<f64>,
    /// Some restart ran out of steps while still improving.
    pub budget_exhausted: bool,
}

impl NormEstimate {
    /// CSV rows `vertex,value` of the witness.
    pub fn write_witness<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["vertex", "value"])?;
        for (x, v) in self.witness.iter().enumerate() {
            w.write_record([x.to_string(), format!("{v:.17e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (restart as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Maximizes `||G f||_p / ||f||_p` by projected finite-difference ascent.
///
/// Restart `k` starts from `starts[k]` when given, then from vertex indicators,
/// then from Gaussian fields. Each restart draws from its own seeded stream, so
/// raising `restarts` never lowers the result.
pub fn ratio_search(
    m: &DiscreteManifold,
    functional: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    p: f64,
    cfg: &RatioConfig,
    starts: &[Vec<f64>],
) -> Result<NormEstimate> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("exponent {p} must be >= 1")));
    }
    let n = m.n();
    let ratio = |f: &[f64]| -> Result<f64> {
        let nf = lp_norm(m, f, p);
        if nf == 0.0 {
            return Ok(0.0);
        }
        Ok(lp_norm(m, &functional(f)?, p) / nf)
    };

    // positive homogeneity on a random sample
    {
        let mut rng = restart_rng(cfg.seed, usize::MAX - 1);
        let f = gaussian(&mut rng, n);
        let g1 = functional(&f)?;
        let f2: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        let g2 = functional(&f2)?;
        let scale = g1.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let defect = g1.iter().zip(&g2).fold(0.0f64, |a, (x, y)| a.max((2.0 * x - y).abs()));
        let defect = if scale > 0.0 { defect / (2.0 * scale) } else { defect };
        if defect > 1e-6 {
            return Err(Error::NotHomogeneous { defect });
        }
    }

    let mut best = -1.0;
    let mut witness = vec![0.0; n];
    let mut history = Vec::with_capacity(cfg.restarts);
    let mut iterations = 0;
    let mut exhausted = false;
    for r in 0..cfg.restarts {
        let mut rng = restart_rng(cfg.seed, r);
        let mut f = if r < starts.len() {
            starts[r].clone()
        } else if r < starts.len() + n.min(4) {
            let v = rng.random_range(0..n);
            let mut e = vec![0.0; n];
            e[v] = 1.0;
            e
        } else {
            gaussian(&mut rng, n)
        };
        if f.len() != n {
            return Err(Error::InvalidArgument("start field has the wrong length".into()));
        }
        normalize(m, &mut f, p);
        if lp_norm(m, &f, p) == 0.0 {
            f = gaussian(&mut rng, n);
            normalize(m, &mut f, p);
        }
        let mut current = ratio(&f)?;
        let mut step = cfg.step_size;
        let mut improving = false;
        for _ in 0..cfg.steps {
            iterations += 1;
            let h = cfg.fd_rel;
            let dirs: Vec<Vec<f64>> = if n <= cfg.directions {
                (0..n)
                    .map(|i| {
                        let mut e = vec![0.0; n];
                        e[i] = 1.0;
                        e
                    })
                    .collect()
            } else {
                (0..cfg.directions).map(|_| gaussian(&mut rng, n)).collect()
            };
            let mut grad = vec![0.0; n];
            for d in &dirs {
                let dn = lp_norm(m, d, p).max(f64::MIN_POSITIVE);
                let probe: Vec<f64> = f.iter().zip(d).map(|(a, b)| a + h * b / dn).collect();
                let slope = (ratio(&probe)? - current) / h;
                for (g, b) in grad.iter_mut().zip(d) {
                    *g += slope * b / dn;
                }
            }
            let gn = lp_norm(m, &grad, p);
            if !(gn > 0.0) {
                improving = false;
                break;
            }
            let mut accepted = false;
            for _ in 0..6 {
                let mut cand: Vec<f64> = f.iter().zip(&grad).map(|(a, g)| a + step * g / gn).collect();
                normalize(m, &mut cand, p);
                let val = ratio(&cand)?;
                if val > current {
                    f = cand;
                    current = val;
                    accepted = true;
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
            }
            improving = accepted;
            if !accepted {
                break;
            }
        }
        exhausted |= improving;
        if current > best {
            best = current;
            witness = f.clone();
        }
        history.push(best.max(0.0));
    }
    // report the witness value itself so that re-evaluation reproduces it
    let ratio_final = if cfg.restarts == 0 { 0.0 } else { ratio(&witness)? };
    Ok(NormEstimate {
        p,
        ratio: ratio_final,
        witness,
        restarts: cfg.restarts,
        iterations,
        history,
        budget_exhausted: exhausted,
    })
}

fn normalize(m: &DiscreteManifold, f: &mut [f64], p: f64) {
    let nf = lp_norm(m, f, p);
    if nf > 0.0 {
        f.iter_mut().for_each(|v| *v /= nf);
    }
}

/// Line `y <= a - c s` above all points minimizing the summed slack.
///
/// The optimum is the upper concave hull edge at the mean abscissa; `c` is
/// clamped at zero.
pub fn hull_fit(points: &[(f64, f64)]) -> (f64, f64) {
    if points.is_empty() {
        return (0.0, 0.0);
    }
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mean = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    // upper hull (monotone chain)
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        if hull.last().is_some_and(|h| h.0 == p.0) {
            hull.pop();
        }
        hull.push(p);
    }
    let mut c = 0.0;
    if hull.len() >= 2 {
        let k = hull.partition_point(|h| h.0 <= mean).clamp(1, hull.len() - 1);
        let (a, b) = (hull[k - 1], hull[k]);
        c = -(b.1 - a.1) / (b.0 - a.0);
    }
    let c = c.max(0.0);
    let a = pts.iter().map(|(s, y)| y + c * s).fold(f64::NEG_INFINITY, f64::max);
    (a, c)
}

/// An operator family `(t, input) -> pointwise output modulus`.
pub type Family<'a> = dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + 'a;

/// `t -> sqrt(t) |grad e^{-tL} f|`.
pub fn gradient_heat_family(op: &SpectralOperator) -> impl Fn(f64, &[f64]) -> Result<Vec<f64>> + '_ {
    move |t, f| {
        let u = op.heat_apply(t, f)?;
        Ok(gradient_sq(op.manifold(), &u).into_iter().map(|g| (t * g).sqrt()).collect())
    }
}

/// `t -> sqrt(t) |d* e^{-t Hodge} omega|`.
pub fn dstar_heat_family(opf: &SpectralOperator) -> impl Fn(f64, &[f64]) -> Result<Vec<f64>> + '_ {
    move |t, w| {
        let u = opf.heat_apply(t, w)?;
        Ok(dstar_op(opf.manifold(), &u).into_iter().map(|g| t.sqrt() * g.abs()).collect())
    }
}

/// `t -> sqrt(t) |grad F(tL) f|`.
pub fn gradient_calculus_family<'a>(
    op: &'a SpectralOperator,
    big_f: &'a crate::cones::SpectralFn,
) -> impl Fn(f64, &[f64]) -> Result<Vec<f64>> + 'a {
    move |t, f| {
        let u = op.calculus(|l| big_f.eval(t * l), f)?;
        Ok(gradient_sq(op.manifold(), &u).into_iter().map(|g| (t * g).sqrt()).collect())
    }
}

/// Canonical edges with both endpoints in `set`.
pub fn edges_within(m: &DiscreteManifold, set: &[usize]) -> Vec<usize> {
    let mut inside = vec![false; m.n()];
    set.iter().for_each(|&x| inside[x] = true);
    m.edges().iter().enumerate().filter(|(_, e)| inside[e.u] && inside[e.v]).map(|(k, _)| k).collect()
}

/// Input space description for the probes: dimension, inner-product weights and the support of test inputs.
pub struct InputSpace<'a> {
    pub weights: &'a [f64],
    pub support: Vec<usize>,
}

fn restricted_norm(mu: &[f64], f: &[f64], set: &[usize], p: f64) -> f64 {
    let w: Vec<f64> = set.iter().map(|&i| mu[i]).collect();
    let v: Vec<f64> = set.iter().map(|&i| f[i]).collect();
    weighted_lp(&w, &v, p)
}

/// Davies-Gaffney measurement `||T_t(f chi_E)||_{L^2(F)} <= C e^{-c d(E,F)^2 / t} ||f||_{L^2(E)}`.
#[allow(clippy::too_many_arguments)]
pub fn davies_gaffney(
    m: &DiscreteManifold,
    family: &Family<'_>,
    input: &InputSpace<'_>,
    e_set: &[usize],
    f_set: &[usize],
    times: &[f64],
    samples: usize,
    seed: u64,
) -> Result<FitReport> {
    if e_set.is_empty() || f_set.is_empty() {
        return Err(Error::InvalidArgument("E and F must be nonempty".into()));
    }
    if e_set.iter().any(|x| f_set.contains(x)) {
        return Err(Error::InvalidArgument("E and F must be disjoint".into()));
    }
    if input.support.is_empty() {
        return Err(Error::InvalidArgument("no test inputs are supported in E".into()));
    }
    let d = m.set_distance(e_set, f_set);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = input.weights.len();
    let inputs: Vec<Vec<f64>> = (0..samples.max(1))
        .map(|_| {
            let mut f = vec![0.0; dim];
            for &i in &input.support {
                f[i] = StandardNormal.sample(&mut rng);
            }
            f
        })
        .collect();
    let mut report = FitReport::new("davies_gaffney");
    let mut points = Vec::new();
    let mut ratios = Vec::new();
    for &t in times {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("time {t} must be positive")));
        }
        let mut worst: f64 = 0.0;
        for f in &inputs {
            let out = family(t, f)?;
            let num = restricted_norm(m.mu(), &out, f_set, 2.0);
            let den = restricted_norm(input.weights, f, &input.support, 2.0);
            worst = worst.max(num / den);
        }
        ratios.push((t, worst));
        if worst > 0.0 {
            points.push((d * d / t, worst.ln()));
        }
    }
    let (a, c) = hull_fit(&points);
    report.set("C", a.exp());
    report.set("c", c);
    report.set("distance", d);
    report.columns = ["t", "d2_over_t", "ratio", "bound", "slack"].map(String::from).to_vec();
    let mut violation = f64::NEG_INFINITY;
    for (t, r) in ratios {
        let s = d * d / t;
        let bound = (a - c * s).exp();
        if r > 0.0 {
            violation = violation.max(r.ln() - (a - c * s));
        }
        report.rows.push(vec![t, s, r, bound, bound - r]);
    }
    report.max_violation = if violation.is_finite() { violation } else { 0.0 };
    Ok(report)
}

/// `L^p - L^2` off-diagonal measurement on the annuli `C_j(B)`.
#[allow(clippy::too_many_arguments)]
pub fn offdiag_lp_l2(
    m: &DiscreteManifold,
    family: &Family<'_>,
    ball: &BallSpec,
    js: std::ops::RangeInclusive<u32>,
    times: &[f64],
    p: f64,
    samples: usize,
    seed: u64,
) -> Result<FitReport> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("exponent {p} must be >= 1")));
    }
    if !(ball.radius > 0.0) {
        return Err(Error::InvalidArgument("ball radius must be positive".into()));
    }
    let mu = m.mu();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..samples.max(1))
        .map(|_| {
            let mut f = vec![0.0; m.n()];
            for &i in &ball.members {
                f[i] = StandardNormal.sample(&mut rng);
            }
            let nf = restricted_norm(mu, &f, &ball.members, p);
            f.iter_mut().for_each(|v| *v /= nf);
            f
        })
        .collect();
    let vol_factor = ball.volume.powf(1.0 / p - 0.5);
    let mut report = FitReport::new("offdiag_lp_l2");
    // rows: j, t, u = 4^j r^2 / t, normalized lhs
    let mut samples_tab: Vec<(u32, f64, f64, f64)> = Vec::new();
    for j in js {
        let ann = m.annulus(ball, j);
        if ann.members.is_empty() {
            report.notices.push(format!("annulus {j} is empty; skipped"));
            continue;
        }
        for &t in times {
            let mut worst: f64 = 0.0;
            for f in &inputs {
                let out = family(t, f)?;
                worst = worst.max(restricted_norm(mu, &out, &ann.members, 2.0));
            }
            let u = 4f64.powi(j as i32) * ball.radius * ball.radius / t;
            samples_tab.push((j, t, u, worst * vol_factor));
        }
    }
    // grid over beta; for each, a hull fit of log lhs - beta |log u|/2 against u
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for b in 0..=32 {
        let beta = b as f64 * 0.25;
        let pts: Vec<(f64, f64)> =
            samples_tab.iter().filter(|s| s.3 > 0.0).map(|s| (s.2, s.3.ln() - beta * s.2.ln().abs() / 2.0)).collect();
        if pts.is_empty() {
            continue;
        }
        let (a, c) = hull_fit(&pts);
        let slack: f64 = pts.iter().map(|(u, y)| a - c * u - y).sum();
        if best.is_none_or(|bst| slack < bst.3) {
            best = Some((beta, a, c, slack));
        }
    }
    let (beta, a, c, _) = best.unwrap_or((0.0, f64::NEG_INFINITY, 0.0, 0.0));
    report.set("C", a.exp());
    report.set("c", c);
    report.set("beta", beta);
    report.columns = ["j", "t", "u", "lhs", "rhs"].map(String::from).to_vec();
    let mut violation = f64::NEG_INFINITY;
    for (j, t, u, lhs) in samples_tab {
        let log_rhs = a + beta * u.ln().abs() / 2.0 - c * u;
        if lhs > 0.0 {
            violation = violation.max(lhs.ln() - log_rhs);
        }
        report.rows.push(vec![j as f64, t, u, lhs, log_rhs.exp()]);
    }
    report.max_violation = if violation.is_finite() { violation } else { 0.0 };
    Ok(report)
}

/// Least-squares slope of `log y` against `log x` over points with `x <= x_max`.
pub fn loglog_slope(points: &[(f64, f64)], x_max: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0 && *x <= x_max).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Feasibility fit of `p_t(x, y) <= C e^{-c d^2 / t} / Vol(y, sqrt t)` for `t >= t_min`.
///
/// Points are the maxima over vertex pairs at each `(t, d)`, which leaves the
/// feasible set unchanged.
pub fn gaussian_fit(op: &SpectralOperator, times: &[f64], t_min: f64) -> Result<FitReport> {
    if !op.potential().is_zero() {
        return Err(Error::InvalidArgument("the Gaussian fit needs V = 0".into()));
    }
    if let Some(t) = times.iter().find(|&&t| t < t_min) {
        return Err(Error::InvalidArgument(format!("time {t} lies below the regime t >= {t_min}")));
    }
    let m = op.manifold();
    let n = m.n();
    let dists = m.distinct_distances();
    let mut report = FitReport::new("gaussian");
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    let mut diag: f64 = 0.0;
    for &t in times {
        let p = op.heat_kernel(t)?;
        let mut best = vec![f64::NEG_INFINITY; dists.len()];
        for x in 0..n {
            for y in 0..n {
                let v = p[(x, y)];
                if v < -1e-12 {
                    return Err(Error::PositivityViolated { value: v });
                }
                if v <= 0.0 {
                    continue;
                }
                let d = m.dist(x, y);
                let k = dists.partition_point(|&q| q < d);
                let val = (v * m.volume(y, t.sqrt())).ln();
                best[k] = best[k].max(val);
                if x == y {
                    diag = diag.max(val.exp());
                }
            }
        }
        for (k, &b) in best.iter().enumerate() {
            if b.is_finite() {
                rows.push((t, dists[k], b));
            }
        }
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|(t, d, y)| (d * d / t, *y)).collect();
    let (a, c) = hull_fit(&pts);
    report.set("C", a.exp());
    report.set("c", c);
    report.set("C_diagonal", diag);
    report.columns = ["t", "d", "log_ratio", "log_bound", "residual"].map(String::from).to_vec();
    let mut violation = f64::NEG_INFINITY;
    for (t, d, y) in rows {
        let lb = a - c * d * d / t;
        violation = violation.max(y - lb);
        report.rows.push(vec![t, d, y, lb, y - lb]);
    }
    report.max_violation = if violation.is_finite() { violation } else { 0.0 };
    Ok(report)
}

/// Outcome of the subcriticality computation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Subcriticality {
    /// Best constant in `int V- f^2 <= alpha int (V+ f^2 + |grad f|^2)`; infinite when none exists.
    pub alpha: f64,
    pub supercritical: bool,
}

/// Largest generalized eigenvalue of `(diag(mu V-), energy form + diag(mu V+))`.
pub fn subcriticality_alpha(m: &DiscreteManifold, v: &PotentialSplit) -> Result<Subcriticality> {
    let n = m.n();
    if v.len() != n {
        return Err(Error::InvalidArgument("potential length does not match".into()));
    }
    if !v.has_negative_part() {
        return Ok(Subcriticality { alpha: 0.0, supercritical: false });
    }
    let mu = m.mu();
    let mut b = DMatrix::zeros(n, n);
    for x in 0..n {
        b[(x, x)] = mu[x] * v.vplus()[x];
    }
    for e in m.edges() {
        b[(e.u, e.u)] += e.w;
        b[(e.v, e.v)] += e.w;
        b[(e.u, e.v)] -= e.w;
        b[(e.v, e.u)] -= e.w;
    }
    let a_diag: Vec<f64> = (0..n).map(|x| mu[x] * v.vminus()[x]).collect();
    let eig = SymmetricEigen::new(b);
    let top = eig.eigenvalues.iter().fold(0.0f64, |acc, l| acc.max(l.abs()));
    let a_scale = a_diag.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-10 * top.max(a_scale);
    let (kernel, range): (Vec<usize>, Vec<usize>) = (0..n).partition(|&k| eig.eigenvalues[k] <= tol);
    for &k in &kernel {
        let q: f64 = (0..n).map(|x| a_diag[x] * eig.eigenvectors[(x, k)].powi(2)).sum();
        if q > 1e-10 * a_scale {
            return Ok(Subcriticality { alpha: f64::INFINITY, supercritical: true });
        }
    }
    let r = range.len();
    let mut c = DMatrix::zeros(r, r);
    for (i, &ki) in range.iter().enumerate() {
        for (j, &kj) in range.iter().enumerate().skip(i) {
            let s: f64 = (0..n).map(|x| a_diag[x] * eig.eigenvectors[(x, ki)] * eig.eigenvectors[(x, kj)]).sum::<f64>()
                / (eig.eigenvalues[ki] * eig.eigenvalues[kj]).sqrt();
            c[(i, j)] = s;
            c[(j, i)] = s;
        }
    }
    let alpha = if r == 0 { 0.0 } else { SymmetricEigen::new(c).eigenvalues.iter().cloned().fold(0.0, f64::max) };
    Ok(Subcriticality { alpha, supercritical: alpha >= 1.0 })
}

/// Critical exponents; the boundedness interval is `(p0, inf)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CriticalExponent {
    pub p0: f64,
    pub p0_prime: f64,
    /// `N <= 2`: every `p` in `(1, inf)`.
    pub full_range: bool,
}

pub fn compute_p0(alpha: f64, dim: f64) -> Result<CriticalExponent> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must lie in [0, 1)")));
    }
    if dim <= 2.0 {
        return Ok(CriticalExponent { p0: 1.0, p0_prime: f64::INFINITY, full_range: true });
    }
    if alpha == 0.0 {
        return Ok(CriticalExponent { p0: 1.0, p0_prime: f64::INFINITY, full_range: false });
    }
    let p0_prime = 2.0 / (1.0 - (1.0 - alpha).sqrt()) * dim / (dim - 2.0);
    Ok(CriticalExponent { p0: p0_prime / (p0_prime - 1.0), p0_prime, full_range: false })
}

/// Largest observed `||(sum |T_i f_i|^2)^{1/2}||_p / ||(sum |f_i|^2)^{1/2}||_p`
/// over random times log-uniform in `t_range` and Gaussian inputs.
#[allow(clippy::too_many_arguments)]
pub fn rbound_probe(
    m: &DiscreteManifold,
    family: &Family<'_>,
    t_range: (f64, f64),
    p: f64,
    size: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if size == 0 {
        return Err(Error::InvalidArgument("family size must be at least 1".into()));
    }
    let n = m.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = t_range;
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        for _ in 0..size {
            let u: f64 = rng.random();
            let t = if hi > lo { lo * (hi / lo).powf(u) } else { lo };
            let f = gaussian(&mut rng, n);
            let out = family(t, &f)?;
            for x in 0..n {
                num[x] += out[x] * out[x];
                den[x] += f[x] * f[x];
            }
        }
        let num: Vec<f64> = num.into_iter().map(f64::sqrt).collect();
        let den: Vec<f64> = den.into_iter().map(f64::sqrt).collect();
        let d = lp_norm(m, &den, p);
        if d > 0.0 {
            best = best.max(lp_norm(m, &num, p) / d);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{grid, DiscreteManifold};

    #[test]
    fn weak_norm_example() {
        let m = grid(1, 2).unwrap();
        assert!((lp_norm(&m, &[3.0, 1.0], 2.0) - 10f64.sqrt()).abs() < 1e-14);
        assert_eq!(weak_lp(&m, &[3.0, 1.0], 2.0), 3.0);
    }

    #[test]
    fn indicator_norms() {
        let m = grid(1, 6).unwrap();
        let f = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        for p in [1.0, 1.5, 2.0, 7.0] {
            let expect = 3f64.powf(1.0 / p);
            assert!((lp_norm(&m, &f, p) - expect).abs() < 1e-14);
            assert!((weak_lp(&m, &f, p) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn p0_examples() {
        let r = compute_p0(0.75, 4.0).unwrap();
        assert!((r.p0_prime - 8.0).abs() < 1e-12);
        assert!((r.p0 - 8.0 / 7.0).abs() < 1e-12);
        assert!(compute_p0(0.3, 2.0).unwrap().full_range);
        assert_eq!(compute_p0(0.0, 5.0).unwrap().p0, 1.0);
        assert!(compute_p0(1.0, 5.0).is_err());
        assert!(compute_p0(-0.1, 5.0).is_err());
    }

    #[test]
    fn alpha_single_vertex() {
        let m = DiscreteManifold::new(vec![1.0], vec![]).unwrap();
        let v = PotentialSplit::new(vec![4.0], vec![1.0], 1).unwrap();
        let s = subcriticality_alpha(&m, &v).unwrap();
        assert!((s.alpha - 0.25).abs() < 1e-14);
        assert!(!s.supercritical);
    }

    #[test]
    fn alpha_forced_supercritical() {
        let m = grid(2, 3).unwrap();
        let mut vm = vec![0.0; 9];
        vm[4] = 0.1;
        let v = PotentialSplit::new(vec![0.0; 9], vm, 9).unwrap();
        assert!(subcriticality_alpha(&m, &v).unwrap().supercritical);
        assert_eq!(subcriticality_alpha(&m, &PotentialSplit::zero(9)).unwrap().alpha, 0.0);
    }

    #[test]
    fn hull_fit_is_feasible() {
        let pts = [(0.0, 1.0), (1.0, 0.2), (2.0, -1.5), (3.0, -1.0), (0.5, 0.9)];
        let (a, c) = hull_fit(&pts);
        assert!(c > 0.0);
        assert!(pts.iter().all(|(s, y)| *y <= a - c * s + 1e-15));
        // increasing data clamps the rate at zero
        let (a2, c2) = hull_fit(&[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!((a2, c2), (1.0, 0.0));
    }

    #[test]
    fn identity_ratio() {
        let m = grid(1, 5).unwrap();
        let id = |f: &[f64]| -> Result<Vec<f64>> { Ok(f.iter().map(|v| v.abs()).collect()) };
        let cfg = RatioConfig { restarts: 3, steps: 3, ..Default::default() };
        for p in [1.0, 2.0, 5.0] {
            let est = ratio_search(&m, &id, p, &cfg, &[]).unwrap();
            assert!((est.ratio - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn non_homogeneous_rejected() {
        let m = grid(1, 4).unwrap();
        let sq = |f: &[f64]| -> Result<Vec<f64>> { Ok(f.iter().map(|v| v * v).collect()) };
        let r = ratio_search(&m, &sq, 2.0, &RatioConfig::default(), &[]);
        assert!(matches!(r, Err(Error::NotHomogeneous { .. })));
    }
}
