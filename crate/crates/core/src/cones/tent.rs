//! Sampled functions on `M x (0, inf)`, the area and vertical operators, and tent-space norms.

use nalgebra::DMatrix;

use super::engine::ConeScaling;
use crate::error::{Error, Result};
use crate::manifold::DiscreteManifold;

/// Minimal number of time samples accepted by the cone operators.
pub const MIN_TIME_SAMPLES: usize = 8;

/// `F(y, t_i)` on a strictly increasing positive time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeFunction {
    times: Vec<f64>,
    samples: DMatrix<f64>,
    scaling: ConeScaling,
}

impl ConeFunction {
    /// `samples` is `n x m`, column `i` holds `F(., t_i)`.
    pub fn new(times: Vec<f64>, samples: DMatrix<f64>, scaling: ConeScaling) -> Result<Self> {
        if samples.ncols() != times.len() {
            return Err(Error::InvalidArgument(format!(
                "{} sample columns for {} times",
                samples.ncols(),
                times.len()
            )));
        }
        if times.first().is_some_and(|&t| !(t > 0.0)) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time grid must be positive and strictly increasing".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cone function has non-finite samples".into()));
        }
        Ok(ConeFunction { times, samples, scaling })
    }

    /// Samples `f(y, t)` on `count` log-spaced times in `[t_min, t_max]`.
    pub fn from_fn(
        n: usize,
        t_min: f64,
        t_max: f64,
        count: usize,
        scaling: ConeScaling,
        f: impl Fn(usize, f64) -> f64,
    ) -> Result<Self> {
        if !(t_min > 0.0 && t_max > t_min) || count < 2 {
            return Err(Error::InvalidArgument("need 0 < t_min < t_max and at least two times".into()));
        }
        let times: Vec<f64> = (0..count).map(|i| t_min * (t_max / t_min).powf(i as f64 / (count - 1) as f64)).collect();
        let samples = DMatrix::from_fn(n, count, |y, i| f(y, times[i]));
        Self::new(times, samples, scaling)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn scaling(&self) -> ConeScaling {
        self.scaling
    }

    pub fn t_min(&self) -> f64 {
        self.times[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn scaled(&self, c: f64) -> Self {
        ConeFunction { times: self.times.clone(), samples: &self.samples * c, scaling: self.scaling }
    }

    /// Trapezoid weights for `dt/t` in `log t`.
    pub fn log_weights(&self) -> Vec<f64> {
        let u: Vec<f64> = self.times.iter().map(|t| t.ln()).collect();
        let m = u.len();
        (0..m)
            .map(|i| {
                let left = if i > 0 { u[i] - u[i - 1] } else { 0.0 };
                let right = if i + 1 < m { u[i + 1] - u[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    fn check(&self, m: &DiscreteManifold) -> Result<()> {
        if self.times.len() < MIN_TIME_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "time grid too coarse: {} points, need at least {MIN_TIME_SAMPLES}",
                self.times.len()
            )));
        }
        if self.samples.nrows() != m.n() {
            return Err(Error::InvalidArgument(format!(
                "cone function has {} rows, manifold has {} vertices",
                self.samples.nrows(),
                m.n()
            )));
        }
        Ok(())
    }

    fn membership_radius(&self, t: f64) -> f64 {
        match self.scaling {
            ConeScaling::Parabolic => t.sqrt(),
            ConeScaling::Linear { aperture } => aperture * t,
        }
    }
}

/// `A(F)(x)^2 = int sum_{y in B(x, rho(t))} |F(y, t)|^2 mu(y) / Vol(y, rho(t)) dt / t`.
pub fn area_a(m: &DiscreteManifold, big_f: &ConeFunction) -> Result<Vec<f64>> {
    big_f.check(m)?;
    let n = m.n();
    let mu = m.mu();
    let w = big_f.log_weights();
    let mut sq = vec![0.0; n];
    let mut h = vec![0.0; n];
    for (i, &t) in big_f.times.iter().enumerate() {
        let r_cone = big_f.membership_radius(t);
        let r_vol = big_f.scaling.volume_radius(t);
        for y in 0..n {
            let v = big_f.samples[(y, i)];
            h[y] = w[i] * v * v * mu[y] / m.volume(y, r_vol);
        }
        for (x, acc) in sq.iter_mut().enumerate() {
            *acc += m.dist_row(x).iter().zip(&h).filter(|(d, _)| **d <= r_cone).map(|(_, hv)| hv).sum::<f64>();
        }
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// `V(F)(x)^2 = int |F(x, t)|^2 dt / t`.
pub fn vertical_v(big_f: &ConeFunction) -> Result<Vec<f64>> {
    if big_f.times.len() < MIN_TIME_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "time grid too coarse: {} points, need at least {MIN_TIME_SAMPLES}",
            big_f.times.len()
        )));
    }
    let w = big_f.log_weights();
    Ok((0..big_f.samples.nrows())
        .map(|x| big_f.samples.row(x).iter().zip(&w).map(|(v, wi)| wi * v * v).sum::<f64>().sqrt())
        .collect())
}

/// Tent-space norm: `||A(F)||_p` for finite `p`, the Carleson supremum for `p = inf`.
pub fn tent_norm(m: &DiscreteManifold, big_f: &ConeFunction, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("exponent {p} must be >= 1")));
    }
    if p.is_finite() {
        let a = area_a(m, big_f)?;
        return Ok(crate::probes::lp_norm(m, &a, p));
    }
    big_f.check(m)?;
    let n = m.n();
    let mu = m.mu();
    let w = big_f.log_weights();
    let times = &big_f.times;
    // cumulative[y][i] = sum_{i' <= i} w_i' |F(y, t_i')|^2 mu(y)
    let mut cumulative = vec![0.0; n * times.len()];
    for y in 0..n {
        let mut acc = 0.0;
        for i in 0..times.len() {
            let v = big_f.samples[(y, i)];
            acc += w[i] * v * v * mu[y];
            cumulative[y * times.len() + i] = acc;
        }
    }
    let upto = |y: usize, tmax: f64| -> f64 {
        let k = times.partition_point(|&t| t <= tmax);
        if k == 0 {
            0.0
        } else {
            cumulative[y * times.len() + k - 1]
        }
    };
    let far = big_f.scaling.volume_radius(big_f.t_max());
    let mut best: f64 = 0.0;
    for x in 0..n {
        let mut radii: Vec<f64> = m.breakpoints(x).to_vec();
        if far > *radii.last().unwrap() {
            radii.push(far);
        }
        for &r in &radii {
            let tmax = big_f.scaling.volume_time(r);
            let mut num = 0.0;
            let mut vol = 0.0;
            for (y, &d) in m.dist_row(x).iter().enumerate() {
                if d <= r {
                    num += upto(y, tmax);
                    vol += mu[y];
                }
            }
            best = best.max(num / vol);
        }
    }
    Ok(best.sqrt())
}
