//! Square functionals of the semigroups `e^{-tL}` and `e^{-t sqrt L}`.
//!
//! Heat-type functionals integrate over parabolic cones `B(x, sqrt t)`,
//! Poisson-type ones over linear cones `B(x, t)`. Kernel modes are removed
//! before integrating; a kernel component with a nonzero integrand makes the
//! time integral diverge and is reported as an error.

pub mod engine;
pub mod functions;
pub mod tent;

use std::io::Write;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use engine::{ConeGeometry, ConeScaling, Engine, QuadConfig};
pub use functions::{DecayClass, SpectralFn};
pub use tent::{area_a, tent_norm, vertical_v, ConeFunction};

use crate::error::{Error, Result};
use crate::spectral::{PotentialWeight, SpectralOperator};
use engine::{integrate, EngineOutput, Profile, Spatial, Term, TimeScale};

/// Pointwise values of a functional plus diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionalResult {
    pub values: Vec<f64>,
    pub engine: Engine,
    /// Relative mass beyond the last quadrature knot.
    pub truncation: f64,
    /// Relative embedded quadrature error estimate.
    pub quad_error: f64,
    /// Squared norm of the input's kernel component that was removed.
    pub kernel_mass: f64,
}

impl FunctionalResult {
    fn from_squares(sq: Vec<f64>, engine: Engine, out: &EngineOutput, kernel_mass: f64) -> Self {
        FunctionalResult {
            values: sq.into_iter().map(|v| v.max(0.0).sqrt()).collect(),
            engine,
            truncation: out.truncation,
            quad_error: out.quad_error,
            kernel_mass,
        }
    }

    /// `sum_x mu(x) value(x)^2`.
    pub fn l2_sq(&self, mu: &[f64]) -> f64 {
        self.values.iter().zip(mu).map(|(v, m)| m * v * v).sum()
    }

    /// CSV rows `vertex,value,engine,truncation`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["vertex", "value", "engine", "truncation"])?;
        for (x, v) in self.values.iter().enumerate() {
            w.write_record([
                x.to_string(),
                format!("{v:.17e}"),
                self.engine.to_string(),
                format!("{:.3e}", self.truncation),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Which terms of the Poisson functional to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoissonPart {
    Full,
    /// `t |d_t u|^2` only.
    Time,
    /// `t (|grad u|^2 + V u^2)` only.
    Space,
}

/// Pointwise Poisson functional and its two parts.
#[derive(Clone, Debug)]
pub struct PoissonParts {
    pub full: FunctionalResult,
    pub time: FunctionalResult,
    pub space: FunctionalResult,
}

/// Both sides of the pointwise comparison between the Poisson functional and heat cones of radius `2t`.
#[derive(Clone, Debug)]
pub struct ComparisonProbe {
    pub poisson: Vec<f64>,
    /// Cone of `|(e^{-t^2 L} - e^{-t sqrt L}) f|^2 / t`.
    pub difference: Vec<f64>,
    /// Cone of `t (|d_t v|^2 + |grad v|^2 + V v^2)` with `v = e^{-t^2 L} f`.
    pub heat: Vec<f64>,
    /// `max_x P(x) / (difference(x) + heat(x))`.
    pub constant: f64,
}

/// Evaluator of every scalar functional for one operator; caches cone geometry.
pub struct SquareFunctions<'a> {
    op: &'a SpectralOperator,
    engine: Engine,
    quad: QuadConfig,
    pot: Option<Vec<f64>>,
    parabolic: OnceLock<ConeGeometry>,
    poisson: OnceLock<ConeGeometry>,
    wide: OnceLock<ConeGeometry>,
}

/// Largest manifold for which the exact engine is the default.
pub const EXACT_DEFAULT_MAX: usize = 64;

impl<'a> SquareFunctions<'a> {
    pub fn new(op: &'a SpectralOperator) -> Self {
        let engine = if op.dim() <= EXACT_DEFAULT_MAX { Engine::Exact } else { Engine::Quadrature };
        let mut s = SquareFunctions {
            op,
            engine,
            quad: QuadConfig::default(),
            pot: None,
            parabolic: OnceLock::new(),
            poisson: OnceLock::new(),
            wide: OnceLock::new(),
        };
        s.set_potential_weight(PotentialWeight::Abs);
        s
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn with_quad(mut self, quad: QuadConfig) -> Self {
        self.quad = quad;
        self
    }

    pub fn with_potential_weight(mut self, w: PotentialWeight) -> Self {
        self.set_potential_weight(w);
        self
    }

    /// Drops the potential term from every integrand.
    pub fn gradient_only(mut self) -> Self {
        self.pot = None;
        self
    }

    fn set_potential_weight(&mut self, w: PotentialWeight) {
        let p = self.op.potential().weights(w);
        self.pot = if p.iter().any(|&v| v != 0.0) { Some(p) } else { None };
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn operator(&self) -> &SpectralOperator {
        self.op
    }

    fn geometry(&self, scaling: ConeScaling) -> &ConeGeometry {
        let m = self.op.manifold();
        match scaling {
            ConeScaling::Parabolic => self.parabolic.get_or_init(|| ConeGeometry::new(m, scaling)),
            ConeScaling::Linear { aperture: 1.0 } => self.poisson.get_or_init(|| ConeGeometry::new(m, scaling)),
            ConeScaling::Linear { aperture: 2.0 } => self.wide.get_or_init(|| ConeGeometry::new(m, scaling)),
            ConeScaling::Linear { .. } => panic!("unsupported aperture"),
        }
    }

    fn heat_scale(&self) -> Option<TimeScale> {
        self.op.spectral_gap().map(|g| TimeScale { r_min: g, r_max: self.op.lambda_max() })
    }

    fn poisson_scale(&self) -> Option<TimeScale> {
        self.op.spectral_gap().map(|g| TimeScale { r_min: g.sqrt(), r_max: self.op.lambda_max().sqrt() })
    }

    fn heat_rates(&self) -> Vec<f64> {
        let k = self.op.kernel_dim();
        self.op.lambdas().iter().enumerate().map(|(j, &l)| if j < k { 0.0 } else { l }).collect()
    }

    fn poisson_rates(&self) -> Vec<f64> {
        self.heat_rates().into_iter().map(f64::sqrt).collect()
    }

    fn energy(&self) -> Spatial<'_> {
        Spatial::Energy { basis: self.op.modes(), pot: self.pot.as_deref() }
    }

    fn pointwise(&self) -> Spatial<'_> {
        Spatial::Pointwise { basis: self.op.modes() }
    }

    /// Mode coefficients of `f` and the kernel mass.
    fn coefficients(&self, f: &[f64]) -> Result<(Vec<f64>, f64)> {
        let c = self.op.coefficients(f)?;
        let mass = c[..self.op.kernel_dim()].iter().map(|v| v * v).sum();
        Ok((c, mass))
    }

    /// Fails when the kernel part of `amplitudes` produces a nonzero integrand;
    /// otherwise zeroes the kernel entries.
    fn guard_kernel(&self, spatial: &Spatial<'_>, amplitudes: &mut [f64]) -> Result<()> {
        let k = self.op.kernel_dim();
        if k == 0 {
            return Ok(());
        }
        let basis = spatial.basis();
        let mut coef = DVector::zeros(basis.ncols());
        for j in 0..k {
            coef[j] = amplitudes[j];
        }
        if coef.iter().any(|&v| v != 0.0) {
            let u = basis * &coef;
            let vals = spatial.evaluate(self.op.manifold(), &DMatrix::from_column_slice(u.len(), 1, u.as_slice()));
            let scale: f64 = amplitudes.iter().map(|a| a * a).sum::<f64>()
                * (1.0
                    + self.op.lambda_max()
                    + self.pot.as_ref().map_or(0.0, |p| p.iter().cloned().fold(0.0, f64::max)));
            let tol = 1e-10 * scale;
            let (vertex, magnitude) =
                vals.iter()
                    .enumerate()
                    .fold((0, 0.0f64), |acc, (i, &v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
            if magnitude > tol {
                return Err(Error::DivergentIntegral { vertex, magnitude });
            }
        }
        amplitudes[..k].iter_mut().for_each(|a| *a = 0.0);
        Ok(())
    }

    fn run(&self, scaling: ConeScaling, terms: &[Term<'_>], scale: Option<TimeScale>) -> Result<EngineOutput> {
        integrate(self.op.manifold(), self.geometry(scaling), terms, self.engine, &self.quad, scale)
    }

    fn single(
        &self,
        scaling: ConeScaling,
        term: Term<'_>,
        scale: Option<TimeScale>,
        kernel_mass: f64,
    ) -> Result<FunctionalResult> {
        let out = self.run(scaling, std::slice::from_ref(&term), scale)?;
        Ok(FunctionalResult::from_squares(out.total(), self.engine, &out, kernel_mass))
    }

    /// Conical vertical functional `G_L`.
    pub fn conical_g(&self, f: &[f64]) -> Result<FunctionalResult> {
        let (mut c, mass) = self.coefficients(f)?;
        let spatial = self.energy();
        self.guard_kernel(&spatial, &mut c)?;
        let term = Term { spatial, profile: Profile::ExpPoly { rates: self.heat_rates(), scales: c, power: 0 } };
        self.single(ConeScaling::Parabolic, term, self.heat_scale(), mass)
    }

    /// Conical horizontal functional `S_L`.
    pub fn horizontal_s(&self, f: &[f64]) -> Result<FunctionalResult> {
        let (c, mass) = self.coefficients(f)?;
        let mut s: Vec<f64> = c.iter().zip(self.heat_rates()).map(|(c, l)| c * l).collect();
        let spatial = self.pointwise();
        self.guard_kernel(&spatial, &mut s)?;
        let term = Term { spatial, profile: Profile::ExpPoly { rates: self.heat_rates(), scales: s, power: 1 } };
        self.single(ConeScaling::Parabolic, term, self.heat_scale(), mass)
    }

    /// Conical functional with integrand `|phi(tL) f|^2 / t`.
    pub fn s_phi(&self, phi: &SpectralFn, f: &[f64]) -> Result<FunctionalResult> {
        let (c, mass) = self.coefficients(f)?;
        let spatial = self.pointwise();
        let term = match phi.structure() {
            Some((a, b)) if is_nonneg_int(2.0 * a - 1.0) => {
                let mut s: Vec<f64> = c.iter().zip(self.heat_rates()).map(|(c, l)| c * monomial(l, a)).collect();
                self.guard_kernel(&spatial, &mut s)?;
                let rates = self.heat_rates().into_iter().map(|r| b * r).collect();
                Term { spatial, profile: Profile::ExpPoly { rates, scales: s, power: (2.0 * a - 1.0) as u32 } }
            }
            _ => {
                let mut coefs = c.clone();
                let at_zero = phi.eval(0.0);
                let mut probe: Vec<f64> = coefs.iter().map(|c| c * at_zero).collect();
                self.guard_kernel(&spatial, &mut probe)?;
                zero_kernel(&mut coefs, self.op.kernel_dim());
                let g = phi.closure();
                Term {
                    spatial,
                    profile: Profile::General {
                        amp: Arc::new(move |t, l| g(t * l)),
                        lambdas: self.op.lambdas().to_vec(),
                        coefs,
                        power: -1.0,
                    },
                }
            }
        };
        self.single(ConeScaling::Parabolic, term, self.heat_scale(), mass)
    }

    /// Generalized conical functional with integrand `|grad F(tL) f|^2 + V |F(tL) f|^2`.
    pub fn generalized_g(&self, big_f: &SpectralFn, f: &[f64]) -> Result<FunctionalResult> {
        if !big_f.is_admissible() {
            return Err(Error::InvalidArgument(format!("{} violates its declared decay class", big_f.name())));
        }
        let (c, mass) = self.coefficients(f)?;
        let spatial = self.energy();
        let term = match big_f.structure() {
            Some((a, b)) if is_nonneg_int(2.0 * a) => {
                let mut s: Vec<f64> = c.iter().zip(self.heat_rates()).map(|(c, l)| c * monomial(l, a)).collect();
                self.guard_kernel(&spatial, &mut s)?;
                let rates = self.heat_rates().into_iter().map(|r| b * r).collect();
                Term { spatial, profile: Profile::ExpPoly { rates, scales: s, power: (2.0 * a) as u32 } }
            }
            _ => {
                let mut coefs = c.clone();
                let at_zero = big_f.eval(0.0);
                let mut probe: Vec<f64> = coefs.iter().map(|c| c * at_zero).collect();
                self.guard_kernel(&spatial, &mut probe)?;
                zero_kernel(&mut coefs, self.op.kernel_dim());
                let g = big_f.closure();
                Term {
                    spatial,
                    profile: Profile::General {
                        amp: Arc::new(move |t, l| g(t * l)),
                        lambdas: self.op.lambdas().to_vec(),
                        coefs,
                        power: 0.0,
                    },
                }
            }
        };
        self.single(ConeScaling::Parabolic, term, self.heat_scale(), mass)
    }

    /// Poisson functional and both parts from a single integration.
    pub fn poisson_parts(&self, f: &[f64]) -> Result<PoissonParts> {
        let (c, mass) = self.coefficients(f)?;
        let rates = self.poisson_rates();
        let point = self.pointwise();
        let energy = self.energy();
        let mut st: Vec<f64> = c.iter().zip(&rates).map(|(c, r)| c * r).collect();
        self.guard_kernel(&point, &mut st)?;
        let mut sx = c.clone();
        self.guard_kernel(&energy, &mut sx)?;
        let terms = [
            Term { spatial: point, profile: Profile::ExpPoly { rates: rates.clone(), scales: st, power: 1 } },
            Term { spatial: energy, profile: Profile::ExpPoly { rates, scales: sx, power: 1 } },
        ];
        let out = self.run(ConeScaling::POISSON, &terms, self.poisson_scale())?;
        let e = self.engine;
        Ok(PoissonParts {
            full: FunctionalResult::from_squares(out.total(), e, &out, mass),
            time: FunctionalResult::from_squares(out.per_term[0].clone(), e, &out, mass),
            space: FunctionalResult::from_squares(out.per_term[1].clone(), e, &out, mass),
        })
    }

    pub fn poisson_p(&self, f: &[f64], part: PoissonPart) -> Result<FunctionalResult> {
        let parts = self.poisson_parts(f)?;
        Ok(match part {
            PoissonPart::Full => parts.full,
            PoissonPart::Time => parts.time,
            PoissonPart::Space => parts.space,
        })
    }

    /// Evaluates both sides of the pointwise Poisson/heat comparison on cones of radius `2t`.
    ///
    /// Uses the quadrature engine regardless of the configured engine: the
    /// heat amplitudes `e^{-t^2 lambda}` are not exponential in `t`.
    pub fn comparison_probe(&self, f: &[f64]) -> Result<ComparisonProbe> {
        let poisson = self.poisson_p(f, PoissonPart::Full)?.values;
        let (c, _) = self.coefficients(f)?;
        let k = self.op.kernel_dim();
        let lambdas = self.op.lambdas().to_vec();
        let mut coefs = c;
        // the difference amplitude vanishes at lambda = 0; the heat part carries
        // an energy of the kernel field, which the guard inspects
        let energy = self.energy();
        let mut probe = coefs.clone();
        self.guard_kernel(&energy, &mut probe)?;
        zero_kernel(&mut coefs, k);
        let wide = ConeScaling::Linear { aperture: 2.0 };
        let scale = self.poisson_scale();
        let quad = |terms: &[Term<'_>]| -> Result<Vec<f64>> {
            let out = integrate(self.op.manifold(), self.geometry(wide), terms, Engine::Quadrature, &self.quad, scale)?;
            Ok(out.total().into_iter().map(|v| v.max(0.0).sqrt()).collect())
        };
        let difference = quad(&[Term {
            spatial: self.pointwise(),
            profile: Profile::General {
                amp: Arc::new(|t, l: f64| (-t * l.max(0.0).sqrt()).exp() - (-t * t * l).exp()),
                lambdas: lambdas.clone(),
                coefs: coefs.clone(),
                power: -1.0,
            },
        }])?;
        let heat = quad(&[
            Term {
                spatial: self.pointwise(),
                profile: Profile::General {
                    amp: Arc::new(|t, l| 2.0 * t * l * (-t * t * l).exp()),
                    lambdas: lambdas.clone(),
                    coefs: coefs.clone(),
                    power: 1.0,
                },
            },
            Term {
                spatial: energy,
                profile: Profile::General { amp: Arc::new(|t, l| (-t * t * l).exp()), lambdas, coefs, power: 1.0 },
            },
        ])?;
        let constant = poisson
            .iter()
            .zip(difference.iter().zip(&heat))
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, (a, b))| p / (a + b))
            .fold(0.0, f64::max);
        Ok(ComparisonProbe { poisson, difference, heat, constant })
    }

    /// Vertical functional `H_L` in closed form.
    pub fn vertical_h(&self, f: &[f64]) -> Result<FunctionalResult> {
        let (c, mass) = self.coefficients(f)?;
        let k = self.op.kernel_dim();
        let mut probe = c.clone();
        self.guard_kernel(&self.energy(), &mut probe)?;
        let m = self.op.manifold();
        let n = m.n();
        let lambdas = self.op.lambdas();
        let active: Vec<usize> = (k..self.op.dim()).filter(|&j| c[j] != 0.0).collect();
        let engine_out = EngineOutput { per_term: vec![], truncation: 0.0, quad_error: 0.0 };
        if active.is_empty() {
            return Ok(FunctionalResult::from_squares(vec![0.0; n], Engine::Exact, &engine_out, mass));
        }
        let phi = DMatrix::from_fn(n, active.len(), |i, p| self.op.modes()[(i, active[p])]);
        let w = DMatrix::from_fn(active.len(), active.len(), |p, q| {
            let (j, l) = (active[p], active[q]);
            c[j] * c[l] / (lambdas[j] + lambdas[l])
        });
        let pm = &phi * w;
        let q = |a: usize, b: usize| -> f64 { pm.row(a).dot(&phi.row(b)) };
        let diag: Vec<f64> = (0..n).map(|x| q(x, x)).collect();
        let mut sq = vec![0.0; n];
        for e in m.edges() {
            let cross = q(e.u, e.v);
            let val = e.w * (diag[e.u] + diag[e.v] - 2.0 * cross);
            sq[e.u] += val;
            sq[e.v] += val;
        }
        let mu = m.mu();
        for x in 0..n {
            sq[x] /= 2.0 * mu[x];
            if let Some(p) = &self.pot {
                sq[x] += p[x] * diag[x];
            }
        }
        Ok(FunctionalResult::from_squares(sq, Engine::Exact, &engine_out, mass))
    }
}

fn is_nonneg_int(x: f64) -> bool {
    x >= 0.0 && x.fract() == 0.0 && x <= 8.0
}

fn monomial(l: f64, a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        l.max(0.0).powf(a)
    }
}

fn zero_kernel(c: &mut [f64], k: usize) {
    c[..k].iter_mut().for_each(|v| *v = 0.0);
}

/// `H_L(f)`.
pub fn vertical_h(op: &SpectralOperator, f: &[f64]) -> Result<FunctionalResult> {
    SquareFunctions::new(op).vertical_h(f)
}

/// `G_L(f)`.
pub fn conical_g(op: &SpectralOperator, f: &[f64], engine: Engine) -> Result<FunctionalResult> {
    SquareFunctions::new(op).with_engine(engine).conical_g(f)
}

/// `S_L(f)`.
pub fn horizontal_s(op: &SpectralOperator, f: &[f64], engine: Engine) -> Result<FunctionalResult> {
    SquareFunctions::new(op).with_engine(engine).horizontal_s(f)
}

/// `S_phi(f)`.
pub fn s_phi(op: &SpectralOperator, phi: &SpectralFn, f: &[f64], engine: Engine) -> Result<FunctionalResult> {
    SquareFunctions::new(op).with_engine(engine).s_phi(phi, f)
}

/// `G^F_L(f)`.
pub fn generalized_g(op: &SpectralOperator, big_f: &SpectralFn, f: &[f64], engine: Engine) -> Result<FunctionalResult> {
    SquareFunctions::new(op).with_engine(engine).generalized_g(big_f, f)
}

/// `P_L(f)` or one of its parts.
pub fn poisson_p(op: &SpectralOperator, f: &[f64], part: PoissonPart, engine: Engine) -> Result<FunctionalResult> {
    SquareFunctions::new(op).with_engine(engine).poisson_p(f, part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{grid, DiscreteManifold};
    use crate::spectral::{assemble, PotentialSplit};

    fn path(n: usize) -> Arc<DiscreteManifold> {
        Arc::new(grid(1, n).unwrap())
    }

    #[test]
    fn single_mode_vertical() {
        let op = assemble(&path(2), &PotentialSplit::zero(2)).unwrap();
        let f = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()];
        let h = vertical_h(&op, &f).unwrap();
        for v in &h.values {
            assert!((v * v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_vanish() {
        let op = assemble(&path(5), &PotentialSplit::zero(5)).unwrap();
        let f = [2.0; 5];
        for e in [Engine::Exact, Engine::Quadrature] {
            assert!(conical_g(&op, &f, e).unwrap().values.iter().all(|&v| v < 1e-12));
            assert!(horizontal_s(&op, &f, e).unwrap().values.iter().all(|&v| v < 1e-12));
            let parts = SquareFunctions::new(&op).with_engine(e).poisson_parts(&f).unwrap();
            assert!(parts.full.values.iter().all(|&v| v < 1e-12));
        }
        assert!(vertical_h(&op, &f).unwrap().values.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn heat_exponent_needs_no_decay() {
        let op = assemble(&path(4), &PotentialSplit::zero(4)).unwrap();
        let f = [1.0, -2.0, 0.5, 0.5];
        let a = conical_g(&op, &f, Engine::Exact).unwrap();
        let b = generalized_g(&op, &SpectralFn::heat(), &f, Engine::Exact).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn kernel_with_nonzero_integrand_diverges() {
        let op = assemble(&path(3), &PotentialSplit::zero(3)).unwrap();
        let f = [1.0, 1.0, 1.0];
        let phi = SpectralFn::new("1", |_| 1.0, None);
        let r = s_phi(&op, &phi, &f, Engine::Quadrature);
        assert!(matches!(r, Err(Error::DivergentIntegral { .. })));
    }
}
