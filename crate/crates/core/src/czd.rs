//! Hardy-Littlewood maximal operator and the level-`lambda` Calderon-Zygmund decomposition.

use std::io::Write;

use serde::Serialize;

use crate::cones::SquareFunctions;
use crate::error::{Error, Result};
use crate::manifold::{BallSpec, DiscreteManifold};
use crate::probes::lp_norm;
use crate::report::FitReport;
use crate::spectral::SpectralOperator;

/// Centered maximal function over closed balls, radius 0 included.
pub fn maximal(m: &DiscreteManifold, f: &[f64]) -> Vec<f64> {
    let mu = m.mu();
    (0..m.n())
        .map(|x| {
            let row = m.dist_row(x);
            let mut order: Vec<usize> = (0..m.n()).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
            let (mut num, mut vol, mut best) = (0.0, 0.0, 0.0f64);
            for (k, &y) in order.iter().enumerate() {
                num += f[y].abs() * mu[y];
                vol += mu[y];
                // evaluate only once the whole sphere at this radius is in
                if k + 1 == order.len() || row[order[k + 1]] > row[y] {
                    best = best.max(num / vol);
                }
            }
            best
        })
        .collect()
}

/// Uncentered maximal function: supremum over all balls containing the point.
pub fn maximal_uncentered(m: &DiscreteManifold, f: &[f64]) -> Vec<f64> {
    let n = m.n();
    let mu = m.mu();
    let mut out: Vec<f64> = f.iter().map(|v| v.abs()).collect();
    for z in 0..n {
        let row = m.dist_row(z);
        for &r in m.breakpoints(z) {
            let (mut num, mut vol) = (0.0, 0.0);
            for y in 0..n {
                if row[y] <= r {
                    num += f[y].abs() * mu[y];
                    vol += mu[y];
                }
            }
            let avg = num / vol;
            for y in 0..n {
                if row[y] <= r && avg > out[y] {
                    out[y] = avg;
                }
            }
        }
    }
    out
}

/// `(M |f|^p)^{1/p}`.
pub fn maximal_p(m: &DiscreteManifold, f: &[f64], p: f64) -> Vec<f64> {
    let fp: Vec<f64> = f.iter().map(|v| v.abs().powf(p)).collect();
    maximal(m, &fp).into_iter().map(|v| v.powf(1.0 / p)).collect()
}

/// One bad part, supported in its ball.
#[derive(Clone, Debug, Serialize)]
pub struct BadPart {
    pub ball: BallSpec,
    pub values: Vec<f64>,
}

/// Measured constants of the four decomposition properties.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CzReport {
    /// `max_x #{i : x in 4 B_i}`.
    pub overlap: usize,
    /// `sup |g| / lambda`.
    pub good_sup: f64,
    /// `max_i int_{B_i} |b_i|^p / (lambda^p mu(B_i))`.
    pub bad_mean_p: f64,
    /// Same with `lambda` in place of `lambda^p`.
    pub bad_mean_lambda: f64,
    /// `sum_i mu(B_i) lambda^p / ||f||_p^p`.
    pub measure: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CZDecomposition {
    pub lambda: f64,
    pub p: f64,
    pub good: Vec<f64>,
    pub bad: Vec<BadPart>,
    pub overlap: usize,
    pub report: CzReport,
}

impl CZDecomposition {
    /// `max |f - g - sum b_i|`.
    pub fn reconstruction_error(&self, f: &[f64]) -> f64 {
        (0..f.len())
            .map(|x| (f[x] - self.good[x] - self.bad.iter().map(|b| b.values[x]).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }

    /// Ball table `center,radius,measure` followed by `# name,value` constant rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["center", "radius", "measure"])?;
        for b in &self.bad {
            w.write_record([
                b.ball.center.to_string(),
                format!("{:.17e}", b.ball.radius),
                format!("{:.17e}", b.ball.volume),
            ])?;
        }
        let r = &self.report;
        for (k, v) in [
            ("lambda", self.lambda),
            ("p", self.p),
            ("overlap", r.overlap as f64),
            ("good_sup", r.good_sup),
            ("bad_mean_p", r.bad_mean_p),
            ("bad_mean_lambda", r.bad_mean_lambda),
            ("measure", r.measure),
        ] {
            w.write_record([format!("# {k}"), format!("{v:.17e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Whitney cover of `{(M |f|^p)^{1/p} > lambda}` with a greedy selection of centers.
pub fn cz_decompose(m: &DiscreteManifold, f: &[f64], lambda: f64, p: f64) -> Result<CZDecomposition> {
    let n = m.n();
    if f.len() != n {
        return Err(Error::InvalidArgument("field length does not match the manifold".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("level {lambda} must be positive")));
    }
    if !(1.0..2.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("exponent {p} must lie in [1, 2)")));
    }
    let mu = m.mu();
    let mp = maximal_p(m, f, p);
    let omega: Vec<bool> = mp.iter().map(|&v| v > lambda).collect();
    if omega.iter().all(|&b| b) {
        let min_level = mp.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::LevelTooSmall { min_level });
    }
    let outside: Vec<usize> = (0..n).filter(|&x| !omega[x]).collect();
    let mut inside: Vec<(usize, f64)> =
        (0..n).filter(|&x| omega[x]).map(|x| (x, m.set_distance(&[x], &outside) / 2.0)).collect();
    inside.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut balls: Vec<BallSpec> = Vec::new();
    let mut covered = vec![false; n];
    for &(x, r) in &inside {
        if covered[x] {
            continue;
        }
        let b = m.ball(x, r)?;
        b.members.iter().for_each(|&y| covered[y] = true);
        balls.push(b);
    }

    let mut count = vec![0usize; n];
    for b in &balls {
        b.members.iter().for_each(|&y| count[y] += 1);
    }
    let mut bad = Vec::with_capacity(balls.len());
    let mut good = f.to_vec();
    for b in &balls {
        let chi: Vec<f64> =
            (0..n).map(|y| if count[y] > 0 && b.members.contains(&y) { 1.0 / count[y] as f64 } else { 0.0 }).collect();
        let mass: f64 = b.members.iter().map(|&y| chi[y] * mu[y]).sum();
        let avg = b.members.iter().map(|&y| chi[y] * f[y] * mu[y]).sum::<f64>() / mass;
        let mut values = vec![0.0; n];
        for &y in &b.members {
            values[y] = (f[y] - avg) * chi[y];
            good[y] -= values[y];
        }
        bad.push(BadPart { ball: b.clone(), values });
    }

    let mut overlap = 0;
    for x in 0..n {
        let c = balls.iter().filter(|b| m.dist(b.center, x) <= 4.0 * b.radius).count();
        overlap = overlap.max(c);
    }
    let good_sup = good.iter().fold(0.0f64, |a, v| a.max(v.abs())) / lambda;
    let mut bad_mean_p: f64 = 0.0;
    let mut bad_mean_lambda: f64 = 0.0;
    for b in &bad {
        let int: f64 = b.ball.members.iter().map(|&y| b.values[y].abs().powf(p) * mu[y]).sum();
        bad_mean_p = bad_mean_p.max(int / (lambda.powf(p) * b.ball.volume));
        bad_mean_lambda = bad_mean_lambda.max(int / (lambda * b.ball.volume));
    }
    let fp = lp_norm(m, f, p).powf(p);
    let total: f64 = balls.iter().map(|b| b.volume).sum();
    let measure = if fp > 0.0 { total * lambda.powf(p) / fp } else { 0.0 };
    let report = CzReport { overlap, good_sup, bad_mean_p, bad_mean_lambda, measure };
    Ok(CZDecomposition { lambda, p, good, bad, overlap, report })
}

/// `I_{ij}` for `h_i = (I - e^{-r_i^2 L})^K b_i` on the annuli `C_j(B_i)`.
///
/// Substituting `s = t^2` gives `I_{ij}^2 = 1/2 sum_{C_j} mu |H h_i|^2` with the
/// gradient-only vertical functional, evaluated in closed form.
pub fn cz_remainder(
    op: &SpectralOperator,
    dec: &CZDecomposition,
    k: u32,
    js: std::ops::RangeInclusive<u32>,
) -> Result<FitReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let m = op.manifold();
    let mu = m.mu();
    let sf = SquareFunctions::new(op).gradient_only();
    let mut report = FitReport::new("cz_remainder");
    report.columns = ["ball", "j", "I", "bound"].map(String::from).to_vec();
    let mut entries: Vec<(usize, u32, f64, f64)> = Vec::new();
    let mut increments = Vec::new();
    for (i, b) in dec.bad.iter().enumerate() {
        let r2 = b.ball.radius * b.ball.radius;
        let h = op.calculus(|l| (1.0 - (-r2 * l).exp()).powi(k as i32), &b.values)?;
        let hv = sf.vertical_h(&h)?.values;
        let mut prev: Option<f64> = None;
        for j in js.clone() {
            let ann = m.annulus(&b.ball, j);
            if ann.members.is_empty() {
                report.notices.push(format!("ball {i}: annulus {j} is empty"));
                entries.push((i, j, 0.0, b.ball.volume.sqrt() * 2f64.powf(-2.0 * (k * j) as f64)));
                prev = None;
                continue;
            }
            let val = (0.5 * ann.members.iter().map(|&y| mu[y] * hv[y] * hv[y]).sum::<f64>()).sqrt();
            if let Some(pv) = prev {
                if pv > 0.0 && val > 0.0 {
                    increments.push(pv.log2() - val.log2());
                }
            }
            prev = Some(val);
            entries.push((i, j, val, b.ball.volume.sqrt() * 2f64.powf(-2.0 * (k * j) as f64)));
        }
    }
    let c = entries.iter().filter(|e| e.2 > 0.0).map(|e| e.2 / e.3).fold(0.0, f64::max);
    report.set("C", c);
    report.set("K", k as f64);
    let slope = if increments.is_empty() { f64::NAN } else { increments.iter().sum::<f64>() / increments.len() as f64 };
    report.set("slope", slope);
    let mut violation: f64 = 0.0;
    for (i, j, val, base) in entries {
        let bound = c * base;
        violation = violation.max(val - bound);
        report.rows.push(vec![i as f64, j as f64, val, bound]);
    }
    report.max_violation = violation;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::grid;

    #[test]
    fn maximal_on_path() {
        let m = grid(1, 3).unwrap();
        let f = [0.0, 0.0, 3.0];
        assert_eq!(maximal_uncentered(&m, &f), vec![1.0, 1.5, 3.0]);
        // centered balls at vertex 0 see (0,0,3) only through the full ball
        assert_eq!(maximal(&m, &f), vec![1.0, 1.0, 3.0]);
    }

    #[test]
    fn constant_field() {
        let m = grid(2, 4).unwrap();
        let f = vec![-2.0; 16];
        assert!(maximal(&m, &f).iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn empty_level_set() {
        let m = grid(2, 4).unwrap();
        let f: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let top = maximal(&m, &f).into_iter().fold(0.0, f64::max);
        let d = cz_decompose(&m, &f, top * 1.01, 1.0).unwrap();
        assert!(d.bad.is_empty());
        assert_eq!(d.good, f);
    }

    #[test]
    fn level_too_small() {
        let m = grid(1, 5).unwrap();
        let f = vec![1.0; 5];
        match cz_decompose(&m, &f, 0.5, 1.0) {
            Err(Error::LevelTooSmall { min_level }) => assert!((min_level - 1.0).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }
}
