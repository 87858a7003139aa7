//! Worked examples checked against closed forms or independently computed references.

use std::f64::consts::PI;
use std::sync::Arc;

use conelab::cones::{tent_norm, ConeFunction, ConeScaling, Engine, PoissonPart, SpectralFn, SquareFunctions};
use conelab::czd::{cz_decompose, cz_remainder, CZDecomposition};
use conelab::forms::{
    commutation_check, d_op, edge_norm, hodge_assemble, poisson_forms, riesz_scalar, FormFunctions, FormPart,
};
use conelab::manifold::{binary_tree, doubling_fit, dumbbell, grid, DiscreteManifold, Edge};
use conelab::probes::{davies_gaffney, gradient_heat_family, InputSpace};
use conelab::spectral::{assemble, gradient_sq, PotentialSplit, SpectralOperator};
use conelab::Error;

fn op_of(m: DiscreteManifold, v: Option<PotentialSplit>) -> SpectralOperator {
    let m = Arc::new(m);
    let v = v.unwrap_or_else(|| PotentialSplit::zero(m.n()));
    assemble(&m, &v).unwrap()
}

fn field(n: usize, seed: f64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * seed).sin() + 0.3 * ((i * i) as f64 * 0.7).cos()).collect()
}

fn sq(mu: &[f64], f: &[f64]) -> f64 {
    f.iter().zip(mu).map(|(v, m)| m * v * v).sum()
}

#[test]
fn p2_heat_kernel_and_spectrum() {
    let op = op_of(grid(1, 2).unwrap(), None);
    assert!(op.lambdas()[0].abs() < 1e-14);
    assert!((op.lambdas()[1] - 2.0).abs() < 1e-14);
    let k = op.heat_kernel(1.0).unwrap();
    assert!((k[(0, 0)] - (1.0 + (-2.0f64).exp()) / 2.0).abs() < 1e-14);
    let g = gradient_sq(op.manifold(), &[1.0, 0.0]);
    assert_eq!(g, vec![0.5, 0.5]);
}

#[test]
fn potential_shift_moves_spectrum() {
    let m = Arc::new(grid(2, 3).unwrap());
    let v = PotentialSplit::nonnegative((0..9).map(|i| (i % 4) as f64 * 0.25).collect()).unwrap();
    let a = assemble(&m, &v).unwrap();
    let b = assemble(&m, &v.shifted(0.7).unwrap()).unwrap();
    for (x, y) in a.lambdas().iter().zip(b.lambdas()) {
        assert!((y - x - 0.7).abs() < 1e-12);
    }
}

#[test]
fn negative_potential_is_indefinite() {
    let m = Arc::new(grid(1, 3).unwrap());
    let v = PotentialSplit::new(vec![0.0; 3], vec![5.0; 3], 3).unwrap();
    assert!(matches!(assemble(&m, &v), Err(Error::IndefiniteOperator { .. })));
}

#[test]
fn poisson_semigroup_by_subordination() {
    let op = op_of(grid(2, 3).unwrap(), Some(PotentialSplit::nonnegative(vec![0.1; 9]).unwrap()));
    let f = field(9, 0.9);
    let t = 0.8;
    // e^{-t sqrt L} = int_0^inf t / sqrt(4 pi s^3) e^{-t^2/(4s)} e^{-sL} ds, trapezoid in log s
    let (lo, hi, steps) = (-25.0f64, 8.0f64, 6000);
    let h = (hi - lo) / steps as f64;
    let mut acc = [0.0; 9];
    for i in 0..=steps {
        let s = (lo + i as f64 * h).exp();
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 } * h * s;
        let kernel = t / (4.0 * PI * s.powi(3)).sqrt() * (-t * t / (4.0 * s)).exp();
        for (a, v) in acc.iter_mut().zip(op.heat_apply(s, &f).unwrap()) {
            *a += w * kernel * v;
        }
    }
    let got = op.poisson_apply(t, &f).unwrap();
    let err = acc.iter().zip(&got).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err <= 1e-6 * got.iter().map(|v| v * v).sum::<f64>().sqrt(), "{err}");
}

#[test]
fn poisson_on_eigenmode() {
    let op = op_of(grid(2, 3).unwrap(), None);
    let k = 4;
    let phi = op.mode(k);
    let out = op.poisson_apply(0.6, &phi).unwrap();
    let scale = (-0.6 * op.lambdas()[k].sqrt()).exp();
    for (a, b) in out.iter().zip(&phi) {
        assert!((a - scale * b).abs() < 1e-12);
    }
}

#[test]
fn vertical_on_p2_mode() {
    let op = op_of(grid(1, 2).unwrap(), None);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = SquareFunctions::new(&op).vertical_h(&[s, -s]).unwrap();
    for v in h.values {
        assert!((v * v - 0.25).abs() < 1e-14);
    }
}

#[test]
fn generalized_functional_closed_forms() {
    let op = op_of(grid(2, 4).unwrap(), None);
    let f = op.project_off_kernel(&field(16, 1.3)).unwrap();
    let sf = SquareFunctions::new(&op).with_engine(Engine::Exact);
    let heat = sf.generalized_g(&SpectralFn::heat(), &f).unwrap().values;
    let g = sf.conical_g(&f).unwrap().values;
    for (a, b) in heat.iter().zip(&g) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b));
    }
    // int_0^inf lambda F(t lambda)^2 dt = int_0^inf u^2 / (1 + u^2)^2 du = pi / 4
    let quad = SquareFunctions::new(&op).with_engine(Engine::Quadrature);
    let r = quad.generalized_g(&SpectralFn::rational(), &f).unwrap();
    let ratio = r.l2_sq(op.manifold().mu()) / sq(op.manifold().mu(), &f);
    assert!((ratio - PI / 4.0).abs() < 1e-6 * PI / 4.0, "{ratio}");
}

#[test]
fn horizontal_on_eigenmode_agrees_between_engines() {
    let op = op_of(grid(2, 4).unwrap(), None);
    let phi = op.mode(3);
    let a = SquareFunctions::new(&op).with_engine(Engine::Exact).horizontal_s(&phi).unwrap().values;
    let b = SquareFunctions::new(&op).with_engine(Engine::Quadrature).horizontal_s(&phi).unwrap().values;
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12));
    }
}

#[test]
fn hodge_and_scalar_spectra_coincide_off_zero() {
    let m = Arc::new(grid(2, 4).unwrap());
    let op = assemble(&m, &PotentialSplit::zero(16)).unwrap();
    let opf = hodge_assemble(&m).unwrap();
    let nz = |l: &[f64]| -> Vec<f64> { l.iter().cloned().filter(|&v| v > 1e-9).collect() };
    let (a, b) = (nz(op.lambdas()), nz(opf.lambdas()));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn form_conical_of_exact_form_matches_dirichlet_energy() {
    // d* e^{-t Hodge} df = L e^{-tL} f, so the squared norm is int_0^inf |L e^{-tL} f|^2 dt = <Lf, f> / 2
    let m = Arc::new(grid(2, 4).unwrap());
    let op = assemble(&m, &PotentialSplit::zero(16)).unwrap();
    let opf = hodge_assemble(&m).unwrap();
    let f = op.project_off_kernel(&field(16, 0.4)).unwrap();
    let df = d_op(&m, &f);
    let energy = edge_norm(&m, &df).powi(2);
    for engine in [Engine::Exact, Engine::Quadrature] {
        let g = FormFunctions::new(&opf).unwrap().with_engine(engine).conical_g(&df).unwrap();
        let ratio = g.l2_sq(m.mu()) / energy;
        assert!((ratio - 0.5).abs() < 1e-8, "{engine:?}: {ratio}");
    }
}

#[test]
fn form_poisson_parts_are_orthogonal() {
    let m = Arc::new(grid(2, 4).unwrap());
    let opf = hodge_assemble(&m).unwrap();
    let w = opf.project_off_kernel(&field(m.num_edges(), 2.1)).unwrap();
    let full = poisson_forms(&opf, &w, FormPart::Full, Engine::Exact).unwrap().values;
    let time = poisson_forms(&opf, &w, FormPart::Time, Engine::Exact).unwrap().values;
    let dstar = poisson_forms(&opf, &w, FormPart::Dstar, Engine::Exact).unwrap().values;
    let d = poisson_forms(&opf, &w, FormPart::D, Engine::Exact).unwrap().values;
    for x in 0..m.n() {
        let parts = time[x].powi(2) + dstar[x].powi(2) + d[x].powi(2);
        assert!((full[x].powi(2) - parts).abs() <= 1e-12 * (1.0 + parts));
    }
    let ratio = sq(m.mu(), &full) / edge_norm(&m, &w).powi(2);
    assert!((ratio - 0.5).abs() < 1e-10);
}

#[test]
fn harmonic_forms_give_zero() {
    // a single 4-cycle: the circulation form spans the harmonic forms
    let edges = vec![
        Edge { u: 0, v: 1, w: 1.0, len: 1.0 },
        Edge { u: 1, v: 2, w: 1.0, len: 1.0 },
        Edge { u: 2, v: 3, w: 1.0, len: 1.0 },
        Edge { u: 0, v: 3, w: 1.0, len: 1.0 },
    ];
    let m = Arc::new(DiscreteManifold::new(vec![1.0; 4], edges).unwrap());
    let opf = hodge_assemble(&m).unwrap();
    let omega = [1.0, 1.0, 1.0, -1.0];
    let p = poisson_forms(&opf, &omega, FormPart::Full, Engine::Exact).unwrap();
    assert!(p.values.iter().all(|v| v.abs() < 1e-12));
    assert!(p.kernel_mass > 0.0);
}

#[test]
fn scalar_riesz_kills_constants() {
    let op = op_of(grid(2, 3).unwrap(), None);
    let out = riesz_scalar(&op, &[2.0; 9]).unwrap();
    assert!(out.field.iter().all(|v| v.abs() < 1e-12));
    assert!(out.warning.is_some());
}

#[test]
fn commutation_batteries() {
    assert!(commutation_check(&grid(1, 3).unwrap(), 10, 1).max_residual <= 1e-12);
    assert!(commutation_check(&dumbbell(2, 4).unwrap(), 100, 2).max_residual <= 1e-12);
}

#[test]
fn carleson_norm_is_homogeneous() {
    let m = grid(1, 9).unwrap();
    let f =
        ConeFunction::from_fn(9, 0.1, 20.0, 30, ConeScaling::Parabolic, |y, t| (y as f64 - 4.0) * (-t).exp()).unwrap();
    for p in [2.0, 3.0, f64::INFINITY] {
        let a = tent_norm(&m, &f, p).unwrap();
        let b = tent_norm(&m, &f.scaled(2.0), p).unwrap();
        assert!((b - 2.0 * a).abs() <= 1e-12 * b);
    }
}

#[test]
fn poisson_parts_for_constants_vanish() {
    let op = op_of(grid(2, 3).unwrap(), None);
    let sf = SquareFunctions::new(&op);
    for part in [PoissonPart::Full, PoissonPart::Time, PoissonPart::Space] {
        assert!(sf.poisson_p(&[1.5; 9], part).unwrap().values.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn doubling_examples() {
    let single = DiscreteManifold::new(vec![2.0], vec![]).unwrap();
    assert_eq!(doubling_fit(&single, 1.0, 2.0).unwrap().get("N"), 0.0);
    let n = doubling_fit(&grid(2, 33).unwrap(), 2.0, 8.0).unwrap().get("N");
    assert!((1.7..=2.3).contains(&n), "{n}");
    let tree = doubling_fit(&binary_tree(8).unwrap(), 2.0, 6.0).unwrap();
    assert!(tree.has_flag("doubling suspect"));
}

#[test]
fn davies_gaffney_rejects_overlap() {
    let op = op_of(grid(2, 4).unwrap(), None);
    let fam = gradient_heat_family(&op);
    let m = op.manifold();
    let input = InputSpace { weights: m.mu(), support: vec![0, 1] };
    assert!(davies_gaffney(m, &fam, &input, &[0, 1], &[1, 2], &[1.0], 2, 0).is_err());
    assert!(davies_gaffney(m, &fam, &input, &[], &[3], &[1.0], 2, 0).is_err());
}

#[test]
fn remainder_of_zero_bad_parts() {
    let op = op_of(grid(2, 5).unwrap(), None);
    let m = op.manifold();
    let mut f = vec![0.0; 25];
    f[12] = 1.0;
    let dec = cz_decompose(m, &f, 0.5, 1.0).unwrap();
    let zeroed = CZDecomposition {
        bad: dec
            .bad
            .iter()
            .cloned()
            .map(|mut b| {
                b.values.iter_mut().for_each(|v| *v = 0.0);
                b
            })
            .collect(),
        ..dec.clone()
    };
    let fit = cz_remainder(&op, &zeroed, 2, 1..=2).unwrap();
    assert!(fit.rows.iter().all(|r| r[2] == 0.0));
    // annuli beyond the diameter are empty
    let fit = cz_remainder(&op, &dec, 1, 6..=7).unwrap();
    assert!(fit.rows.iter().all(|r| r[2] == 0.0));
    assert!(!fit.notices.is_empty());
}
