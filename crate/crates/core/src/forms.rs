//! Edge forms: `d`, `d*`, the Hodge operator `d d*`, form-valued functionals and Riesz transforms.
//!
//! Each undirected edge is stored once with orientation `u < v`; an edge field
//! holds `omega(u, v)` and `omega(v, u) = -omega(u, v)` is implied. The edge
//! inner product is `<omega, eta> = sum_e w_e omega_e eta_e`. Graphs carry no
//! 2-cells, so the Hodge operator on 1-forms reduces to `d d*`.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::cones::engine::{integrate, EngineOutput, Profile, Spatial, Term, TimeScale};
use crate::cones::{ConeGeometry, ConeScaling, Engine, FunctionalResult, QuadConfig, EXACT_DEFAULT_MAX};
use crate::error::{Error, Result};
use crate::manifold::DiscreteManifold;
use crate::spectral::{laplacian_apply, OperatorKind, PotentialSplit, SpectralOperator};

/// One value per canonical edge.
pub type EdgeField = Vec<f64>;

/// `(df)(u, v) = f(v) - f(u)`.
pub fn d_op(m: &DiscreteManifold, f: &[f64]) -> EdgeField {
    m.edges().iter().map(|e| f[e.v] - f[e.u]).collect()
}

/// `(d* omega)(x) = -(1/mu(x)) sum_y w(x, y) omega(x, y)`.
pub fn dstar_op(m: &DiscreteManifold, omega: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.n()];
    for (e, &o) in m.edges().iter().zip(omega) {
        out[e.u] -= e.w * o;
        out[e.v] += e.w * o;
    }
    for (o, mu) in out.iter_mut().zip(m.mu()) {
        *o /= mu;
    }
    out
}

/// `d d* omega`, applied directly.
pub fn hodge_apply(m: &DiscreteManifold, omega: &[f64]) -> EdgeField {
    d_op(m, &dstar_op(m, omega))
}

pub fn edge_inner(m: &DiscreteManifold, a: &[f64], b: &[f64]) -> f64 {
    m.edges().iter().zip(a.iter().zip(b)).map(|(e, (x, y))| e.w * x * y).sum()
}

pub fn edge_norm(m: &DiscreteManifold, a: &[f64]) -> f64 {
    edge_inner(m, a, a).sqrt()
}

/// Pointwise norm `|omega|^2(y) = (1/(2 mu(y))) sum_{e at y} w_e omega_e^2`.
pub fn edge_pointwise_sq(m: &DiscreteManifold, omega: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.n()];
    for (e, &o) in m.edges().iter().zip(omega) {
        out[e.u] += e.w * o * o;
        out[e.v] += e.w * o * o;
    }
    for (o, mu) in out.iter_mut().zip(m.mu()) {
        *o /= 2.0 * mu;
    }
    out
}

/// Diagonalizes `d d*` in the edge inner product. Requires positive conductances.
pub fn hodge_assemble(m: &Arc<DiscreteManifold>) -> Result<SpectralOperator> {
    if let Some(e) = m.edges().iter().find(|e| !(e.w > 0.0)) {
        return Err(Error::InvalidManifold(format!(
            "edge ({}, {}) has zero conductance; the edge inner product is degenerate",
            e.u, e.v
        )));
    }
    let ne = m.num_edges();
    let mu = m.mu();
    let sw: Vec<f64> = m.edges().iter().map(|e| e.w.sqrt()).collect();
    let mut s = DMatrix::zeros(ne, ne);
    for (x, &mass) in mu.iter().enumerate() {
        let nb = m.neighbors(x);
        for &(_, a) in nb {
            let sa = if m.edges()[a].v == x { 1.0 } else { -1.0 };
            for &(_, b) in nb {
                let sb = if m.edges()[b].v == x { 1.0 } else { -1.0 };
                s[(a, b)] += sw[a] * sw[b] * sa * sb / mass;
            }
        }
    }
    let weights = m.edges().iter().map(|e| e.w).collect();
    SpectralOperator::from_symmetric(OperatorKind::Form, s, weights, Arc::clone(m), PotentialSplit::zero(m.n()))
}

/// Form-valued Poisson functional and its parts.
#[derive(Clone, Debug)]
pub struct FormPoissonParts {
    pub full: FunctionalResult,
    pub time: FunctionalResult,
    pub dstar: FunctionalResult,
    /// The `d` part needs 2-forms; identically zero here.
    pub d: FunctionalResult,
}

/// Evaluator of the form-valued functionals for one Hodge operator.
pub struct FormFunctions<'a> {
    opf: &'a SpectralOperator,
    dstar_modes: DMatrix<f64>,
    engine: Engine,
    quad: QuadConfig,
    parabolic: OnceLock<ConeGeometry>,
    poisson: OnceLock<ConeGeometry>,
}

impl<'a> FormFunctions<'a> {
    pub fn new(opf: &'a SpectralOperator) -> Result<Self> {
        if opf.kind() != OperatorKind::Form {
            return Err(Error::InvalidArgument("expected a form operator".into()));
        }
        let m = opf.manifold();
        let k = opf.dim();
        let mut dstar_modes = DMatrix::zeros(m.n(), k);
        for j in 0..k {
            let col = dstar_op(m, opf.modes().column(j).as_slice());
            dstar_modes.set_column(j, &DVector::from_vec(col));
        }
        let engine = if m.n() <= EXACT_DEFAULT_MAX { Engine::Exact } else { Engine::Quadrature };
        Ok(FormFunctions {
            opf,
            dstar_modes,
            engine,
            quad: QuadConfig::default(),
            parabolic: OnceLock::new(),
            poisson: OnceLock::new(),
        })
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn with_quad(mut self, quad: QuadConfig) -> Self {
        self.quad = quad;
        self
    }

    /// Coefficients with harmonic components removed; fails if a harmonic mode has nonzero `d*`.
    fn coefficients(&self, omega: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut c = self.opf.coefficients(omega)?;
        let k = self.opf.kernel_dim();
        let mass = c[..k].iter().map(|v| v * v).sum();
        let scale: f64 = c.iter().map(|v| v * v).sum::<f64>() * (1.0 + self.opf.lambda_max());
        let mut harmonic = DVector::zeros(self.opf.dim());
        for j in 0..k {
            harmonic[j] = c[j];
        }
        let d = &self.dstar_modes * harmonic;
        let mu = self.opf.manifold().mu();
        if let Some((vertex, v)) = d.iter().enumerate().map(|(y, v)| (y, v * v)).max_by(|a, b| a.1.total_cmp(&b.1)) {
            if v > 1e-10 * scale / mu[vertex] {
                return Err(Error::DivergentIntegral { vertex, magnitude: v });
            }
        }
        c[..k].iter_mut().for_each(|v| *v = 0.0);
        Ok((c, mass))
    }

    fn rates(&self, sqrt: bool) -> Vec<f64> {
        let k = self.opf.kernel_dim();
        self.opf
            .lambdas()
            .iter()
            .enumerate()
            .map(|(j, &l)| {
                if j < k {
                    0.0
                } else if sqrt {
                    l.sqrt()
                } else {
                    l
                }
            })
            .collect()
    }

    fn scale(&self, sqrt: bool) -> Option<TimeScale> {
        self.opf.spectral_gap().map(|g| {
            let lm = self.opf.lambda_max();
            if sqrt {
                TimeScale { r_min: g.sqrt(), r_max: lm.sqrt() }
            } else {
                TimeScale { r_min: g, r_max: lm }
            }
        })
    }

    fn run(&self, scaling: ConeScaling, terms: &[Term<'_>], scale: Option<TimeScale>) -> Result<EngineOutput> {
        let m = self.opf.manifold();
        let geom = match scaling {
            ConeScaling::Parabolic => self.parabolic.get_or_init(|| ConeGeometry::new(m, scaling)),
            _ => self.poisson.get_or_init(|| ConeGeometry::new(m, scaling)),
        };
        integrate(m, geom, terms, self.engine, &self.quad, scale)
    }

    /// Conical functional of `d* e^{-t Hodge} omega`.
    pub fn conical_g(&self, omega: &[f64]) -> Result<FunctionalResult> {
        let (c, mass) = self.coefficients(omega)?;
        let term = Term {
            spatial: Spatial::Pointwise { basis: &self.dstar_modes },
            profile: Profile::ExpPoly { rates: self.rates(false), scales: c, power: 0 },
        };
        let out = self.run(ConeScaling::Parabolic, std::slice::from_ref(&term), self.scale(false))?;
        Ok(result(out.total(), self.engine, &out, mass))
    }

    /// Poisson functional on forms with its parts.
    pub fn poisson_parts(&self, omega: &[f64]) -> Result<FormPoissonParts> {
        let (c, mass) = self.coefficients(omega)?;
        let rates = self.rates(true);
        let st: Vec<f64> = c.iter().zip(&rates).map(|(c, r)| c * r).collect();
        let terms = [
            Term {
                spatial: Spatial::EdgeNorm { basis: self.opf.modes() },
                profile: Profile::ExpPoly { rates: rates.clone(), scales: st, power: 1 },
            },
            Term {
                spatial: Spatial::Pointwise { basis: &self.dstar_modes },
                profile: Profile::ExpPoly { rates, scales: c, power: 1 },
            },
        ];
        let out = self.run(ConeScaling::POISSON, &terms, self.scale(true))?;
        let n = self.opf.manifold().n();
        Ok(FormPoissonParts {
            full: result(out.total(), self.engine, &out, mass),
            time: result(out.per_term[0].clone(), self.engine, &out, mass),
            dstar: result(out.per_term[1].clone(), self.engine, &out, mass),
            d: result(vec![0.0; n], self.engine, &out, mass),
        })
    }
}

fn result(sq: Vec<f64>, engine: Engine, out: &EngineOutput, kernel_mass: f64) -> FunctionalResult {
    FunctionalResult {
        values: sq.into_iter().map(|v| v.max(0.0).sqrt()).collect(),
        engine,
        truncation: out.truncation,
        quad_error: out.quad_error,
        kernel_mass,
    }
}

/// Form part selector for [`poisson_forms`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormPart {
    Full,
    Time,
    D,
    Dstar,
}

pub fn conical_g_forms(opf: &SpectralOperator, omega: &[f64], engine: Engine) -> Result<FunctionalResult> {
    FormFunctions::new(opf)?.with_engine(engine).conical_g(omega)
}

pub fn poisson_forms(
    opf: &SpectralOperator,
    omega: &[f64],
    part: FormPart,
    engine: Engine,
) -> Result<FunctionalResult> {
    let p = FormFunctions::new(opf)?.with_engine(engine).poisson_parts(omega)?;
    Ok(match part {
        FormPart::Full => p.full,
        FormPart::Time => p.time,
        FormPart::D => p.d,
        FormPart::Dstar => p.dstar,
    })
}

/// Output of a Riesz transform.
#[derive(Clone, Debug)]
pub struct RieszOutput {
    pub field: Vec<f64>,
    /// Squared norm of the removed kernel component.
    pub kernel_mass: f64,
    pub warning: Option<String>,
}

fn riesz_common(op: &SpectralOperator, input: &[f64]) -> Result<(Vec<f64>, f64, Option<String>)> {
    let (g, removed) = op.calculus_on_range(|l| 1.0 / l.sqrt(), input)?;
    let total = op.inner(input, input);
    let warning = if total > 0.0 && removed >= total * (1.0 - 1e-12) {
        Some("input lies in the kernel; output is zero".to_string())
    } else {
        None
    };
    Ok((g, removed, warning))
}

/// `d Delta^{-1/2} f` on the complement of the kernel.
pub fn riesz_scalar(op: &SpectralOperator, f: &[f64]) -> Result<RieszOutput> {
    if op.kind() != OperatorKind::Scalar {
        return Err(Error::InvalidArgument("expected a scalar operator".into()));
    }
    let (g, kernel_mass, warning) = riesz_common(op, f)?;
    Ok(RieszOutput { field: d_op(op.manifold(), &g), kernel_mass, warning })
}

/// `d* Hodge^{-1/2} omega` on the complement of the harmonic forms.
pub fn riesz_forms(opf: &SpectralOperator, omega: &[f64]) -> Result<RieszOutput> {
    if opf.kind() != OperatorKind::Form {
        return Err(Error::InvalidArgument("expected a form operator".into()));
    }
    let (g, kernel_mass, warning) = riesz_common(opf, omega)?;
    Ok(RieszOutput { field: dstar_op(opf.manifold(), &g), kernel_mass, warning })
}

/// Residuals of `d Delta = Hodge d` over a random battery.
#[derive(Clone, Debug, Serialize)]
pub struct CommutationReport {
    pub fields: usize,
    /// `max ||d(Delta f) - Hodge(df)||_edge / ||df||_edge`.
    pub max_residual: f64,
}

/// Checks the commutation formula on `fields` Gaussian fields plus the constant field.
pub fn commutation_check(m: &DiscreteManifold, fields: usize, seed: u64) -> CommutationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_residual: f64 = 0.0;
    let mut battery: Vec<Vec<f64>> = vec![vec![1.0; m.n()]];
    for _ in 0..fields {
        battery.push((0..m.n()).map(|_| StandardNormal.sample(&mut rng)).collect());
    }
    for f in &battery {
        let df = d_op(m, f);
        let lhs = d_op(m, &laplacian_apply(m, f));
        let rhs = hodge_apply(m, &df);
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let num = edge_norm(m, &diff);
        let den = edge_norm(m, &df);
        let r = if den > 0.0 { num / den } else { num };
        max_residual = max_residual.max(r);
    }
    CommutationReport { fields: battery.len(), max_residual }
}

/// `max ||d e^{-t Delta} f - e^{-t Hodge} d f||_edge / ||df||_edge` over the given fields and times.
pub fn intertwining_residual(
    op: &SpectralOperator,
    opf: &SpectralOperator,
    fields: &[Vec<f64>],
    times: &[f64],
) -> Result<f64> {
    let m = op.manifold();
    let mut worst: f64 = 0.0;
    for f in fields {
        let df = d_op(m, f);
        let den = edge_norm(m, &df);
        for &t in times {
            let lhs = d_op(m, &op.heat_apply(t, f)?);
            let rhs = opf.heat_apply(t, &df)?;
            let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
            let num = edge_norm(m, &diff);
            worst = worst.max(if den > 0.0 { num / den } else { num });
        }
    }
    Ok(worst)
}

/// CSV rows `u,v,value`.
pub fn write_edge_field<W: Write>(m: &DiscreteManifold, omega: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["u", "v", "value"])?;
    for (e, v) in m.edges().iter().zip(omega) {
        w.write_record([e.u.to_string(), e.v.to_string(), format!("{v:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}
