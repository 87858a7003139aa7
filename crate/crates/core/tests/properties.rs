use std::sync::Arc;

use proptest::prelude::*;

use conelab::cones::{area_a, vertical_v, ConeFunction, ConeScaling, Engine, SquareFunctions};
use conelab::czd::{cz_decompose, maximal, maximal_p};
use conelab::forms::{commutation_check, d_op, dstar_op, edge_inner};
use conelab::manifold::{grid, DiscreteManifold, Edge};
use conelab::probes::{hull_fit, lp_norm, ratio_search, weak_lp, RatioConfig};
use conelab::spectral::{assemble, PotentialSplit};

/// Connected random graph: a path backbone plus extra chords, random weights and lengths.
fn arb_manifold() -> impl Strategy<Value = DiscreteManifold> {
    (3usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(0.2f64..3.0, n),
            prop::collection::vec((0.2f64..3.0, 0.5f64..2.0), n - 1),
            prop::collection::vec((0..n, 0..n, 0.2f64..3.0), 0..n),
        )
            .prop_map(move |(mu, path, chords)| {
                let mut edges: Vec<Edge> =
                    path.iter().enumerate().map(|(i, &(w, len))| Edge { u: i, v: i + 1, w, len }).collect();
                for (a, b, w) in chords {
                    let (u, v) = (a.min(b), a.max(b));
                    if u != v && !edges.iter().any(|e| e.u == u && e.v == v) {
                        edges.push(Edge { u, v, w, len: 1.0 });
                    }
                }
                DiscreteManifold::new(mu, edges).unwrap()
            })
    })
}

fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

fn with_fields(k: usize) -> impl Strategy<Value = (DiscreteManifold, Vec<Vec<f64>>)> {
    arb_manifold().prop_flat_map(move |m| {
        let n = m.n();
        (Just(m), prop::collection::vec(field(n), k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weak_norm_below_strong((m, fs) in with_fields(1), p in 1.0f64..6.0) {
        prop_assert!(weak_lp(&m, &fs[0], p) <= lp_norm(&m, &fs[0], p) * (1.0 + 1e-12));
    }

    #[test]
    fn balls_are_symmetric(m in arb_manifold(), r in 0.0f64..6.0) {
        for x in 0..m.n() {
            let b = m.ball(x, r).unwrap();
            for &y in &b.members {
                prop_assert!(m.ball(y, r).unwrap().members.contains(&x));
            }
        }
    }

    #[test]
    fn metric_triangle_inequality(m in arb_manifold()) {
        let n = m.n();
        for x in 0..n {
            prop_assert_eq!(m.dist(x, x), 0.0);
            for y in 0..n {
                prop_assert_eq!(m.dist(x, y), m.dist(y, x));
                for z in 0..n {
                    prop_assert!(m.dist(x, z) <= m.dist(x, y) + m.dist(y, z) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn maximal_sublinear_and_dominating((m, fs) in with_fields(2)) {
        let (mf, mg) = (maximal(&m, &fs[0]), maximal(&m, &fs[1]));
        let sum: Vec<f64> = fs[0].iter().zip(&fs[1]).map(|(a, b)| a + b).collect();
        let ms = maximal(&m, &sum);
        for x in 0..m.n() {
            prop_assert!(ms[x] <= mf[x] + mg[x] + 1e-12);
            prop_assert!(mf[x] >= fs[0][x].abs() - 1e-12);
        }
    }

    #[test]
    fn cz_structure((m, fs) in with_fields(1), q in 0.05f64..0.95, p in prop::sample::select(vec![1.0, 1.5])) {
        let f = &fs[0];
        let mut mp = maximal_p(&m, f, p);
        let lo = mp.iter().cloned().fold(f64::INFINITY, f64::min);
        mp.sort_by(f64::total_cmp);
        let lambda = mp[((mp.len() - 1) as f64 * q) as usize].max(lo * 1.0001);
        let Ok(dec) = cz_decompose(&m, f, lambda, p) else { return Ok(()) };
        prop_assert!(dec.reconstruction_error(f) <= 1e-12 * (1.0 + lp_norm(&m, f, f64::INFINITY)));
        let omega: Vec<bool> = maximal_p(&m, f, p).iter().map(|&v| v > lambda).collect();
        for b in &dec.bad {
            for y in 0..m.n() {
                if b.values[y] != 0.0 {
                    prop_assert!(b.ball.members.contains(&y));
                }
            }
            for &y in &b.ball.members {
                prop_assert!(omega[y]);
            }
        }
    }

    #[test]
    fn fubini_with_matched_radii(m in arb_manifold(), seed in 0u64..1000, parabolic in any::<bool>()) {
        let scaling = if parabolic { ConeScaling::Parabolic } else { ConeScaling::POISSON };
        let f = ConeFunction::from_fn(m.n(), 0.05, 50.0, 24, scaling, |y, t| ((y as f64 + 1.0) * (seed as f64 + t)).sin()).unwrap();
        let a = lp_norm(&m, &area_a(&m, &f).unwrap(), 2.0);
        let v = lp_norm(&m, &vertical_v(&f).unwrap(), 2.0);
        prop_assert!((a - v).abs() <= 1e-10 * v.max(1e-300));
    }

    #[test]
    fn codifferential_is_adjoint((m, fs) in with_fields(1), seed in 0u64..1000) {
        let f = &fs[0];
        let omega: Vec<f64> = (0..m.num_edges()).map(|k| ((k as f64 + 1.0) * (seed as f64 + 0.5)).cos()).collect();
        let lhs = edge_inner(&m, &d_op(&m, f), &omega);
        let rhs: f64 = f.iter().zip(dstar_op(&m, &omega)).zip(m.mu()).map(|((a, b), w)| w * a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn commutation_on_random_graphs(m in arb_manifold(), seed in 0u64..1000) {
        prop_assert!(commutation_check(&m, 4, seed).max_residual <= 1e-12);
    }

    #[test]
    fn hull_fit_is_feasible(points in prop::collection::vec((0.0f64..50.0, -30.0f64..5.0), 1..30)) {
        let (a, c) = hull_fit(&points);
        prop_assert!(c >= 0.0);
        for (s, y) in points {
            prop_assert!(y <= a - c * s + 1e-9 * (1.0 + y.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn semigroup_property((m, fs) in with_fields(1), s in 0.01f64..3.0, t in 0.01f64..3.0) {
        let m = Arc::new(m);
        let op = assemble(&m, &PotentialSplit::zero(m.n())).unwrap();
        let f = &fs[0];
        let two = op.heat_apply(s, &op.heat_apply(t, f).unwrap()).unwrap();
        let one = op.heat_apply(s + t, f).unwrap();
        for (a, b) in two.iter().zip(&one) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
        // Markov: constants are preserved and the kernel is nonnegative
        let k = op.heat_kernel(t).unwrap();
        prop_assert!(k.iter().all(|&v| v >= -1e-12));
        let ones = op.heat_apply(t, &vec![1.0; m.n()]).unwrap();
        prop_assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn functionals_are_homogeneous((m, fs) in with_fields(1), c in -4.0f64..4.0) {
        let m = Arc::new(m);
        let v = PotentialSplit::nonnegative((0..m.n()).map(|i| (i % 3) as f64 * 0.5).collect()).unwrap();
        let op = assemble(&m, &v).unwrap();
        let sf = SquareFunctions::new(&op).with_engine(Engine::Exact);
        let f = &fs[0];
        let cf: Vec<f64> = f.iter().map(|x| c * x).collect();
        let (g, gc) = (sf.conical_g(f).unwrap().values, sf.conical_g(&cf).unwrap().values);
        let (h, hc) = (sf.vertical_h(f).unwrap().values, sf.vertical_h(&cf).unwrap().values);
        for x in 0..m.n() {
            prop_assert!((gc[x] - c.abs() * g[x]).abs() <= 1e-9 * (1.0 + gc[x]));
            prop_assert!((hc[x] - c.abs() * h[x]).abs() <= 1e-9 * (1.0 + hc[x]));
        }
    }

    #[test]
    fn l2_identity_on_random_graphs((m, fs) in with_fields(1)) {
        let m = Arc::new(m);
        let op = assemble(&m, &PotentialSplit::zero(m.n())).unwrap();
        let f = op.project_off_kernel(&fs[0]).unwrap();
        let nf = op.norm(&f).powi(2);
        prop_assume!(nf > 1e-6);
        let sf = SquareFunctions::new(&op).with_engine(Engine::Exact);
        let g = sf.conical_g(&f).unwrap().l2_sq(m.mu());
        let s = sf.horizontal_s(&f).unwrap().l2_sq(m.mu());
        prop_assert!((g / nf - 0.5).abs() < 1e-8);
        prop_assert!((s / nf - 0.25).abs() < 1e-8);
    }
}

#[test]
fn ratio_search_monotone_in_restarts() {
    let m = grid(2, 3).unwrap();
    let functional = |f: &[f64]| -> conelab::Result<Vec<f64>> {
        Ok(f.iter().enumerate().map(|(i, v)| v.abs() * (1.0 + (i as f64).sin().abs())).collect())
    };
    let mut prev = 0.0;
    for restarts in [1, 2, 4, 8] {
        let cfg = RatioConfig { restarts, steps: 10, ..Default::default() };
        let r = ratio_search(&m, &functional, 3.0, &cfg, &[]).unwrap().ratio;
        assert!(r >= prev, "restarts {restarts}: {r} < {prev}");
        prev = r;
    }
}

#[test]
fn ratio_search_deterministic() {
    let m = grid(2, 3).unwrap();
    let functional = |f: &[f64]| -> conelab::Result<Vec<f64>> { Ok(f.iter().map(|v| v.abs() * 2.0).collect()) };
    let cfg = RatioConfig { restarts: 3, steps: 5, ..Default::default() };
    let a = ratio_search(&m, &functional, 1.5, &cfg, &[]).unwrap();
    let b = ratio_search(&m, &functional, 1.5, &cfg, &[]).unwrap();
    assert_eq!(a.ratio.to_bits(), b.ratio.to_bits());
    assert_eq!(a.witness, b.witness);
    assert!((a.ratio - 2.0).abs() < 1e-9);
}
