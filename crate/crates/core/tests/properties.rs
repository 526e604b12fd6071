use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use graphflame::blowup::{detect_blowup, phi_trace, DetectorConfig, Outcome};
use graphflame::graph::{GraphBuilder, VertexFunction, WeightedGraph};
use graphflame::semilinear::{picard_solve, NonlinearSource, PicardMode, ScalarFn, SolverConfig};
use graphflame::spectral::dirichlet_generator;

fn connected_graph(seed: u64, n: usize) -> WeightedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    for i in 0..n {
        b = b.node(format!("v{i}"), rng.random_range(0.5..=2.0));
    }
    let mut pairs = std::collections::HashSet::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        pairs.insert((j, i));
    }
    for _ in 0..n {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i != j {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let mut pairs: Vec<_> = pairs.into_iter().collect();
    pairs.sort();
    for (i, j) in pairs {
        b = b.edge(format!("v{i}"), format!("v{j}"), rng.random_range(0.1..2.0));
    }
    b.build().unwrap()
}

fn graph() -> impl Strategy<Value = WeightedGraph> {
    (any::<u64>(), 2usize..16).prop_map(|(s, n)| connected_graph(s, n))
}

fn values(n: usize, seed: u64, lo: f64, hi: f64) -> VertexFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VertexFunction((0..n).map(|_| rng.random_range(lo..hi)).collect())
}

fn dot(u: &VertexFunction, v: &VertexFunction, mu: &[f64]) -> f64 {
    u.0.iter().zip(&v.0).zip(mu).map(|((a, b), m)| a * b * m).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn laplacian_is_linear(g in graph(), s in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let n = g.num_vertices();
        let (u, v) = (values(n, s, -1.0, 1.0), values(n, s ^ 1, -1.0, 1.0));
        let combo = VertexFunction(u.0.iter().zip(&v.0).map(|(x, y)| a * x + b * y).collect());
        let lhs = g.laplacian_apply(&combo).unwrap();
        let (lu, lv) = (g.laplacian_apply(&u).unwrap(), g.laplacian_apply(&v).unwrap());
        for i in 0..n {
            assert_abs_diff_eq!(lhs[i], a * lu[i] + b * lv[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn laplacian_is_self_adjoint_and_conserves_mass(g in graph(), s in any::<u64>()) {
        let n = g.num_vertices();
        let (u, v) = (values(n, s, -1.0, 1.0), values(n, s ^ 7, -1.0, 1.0));
        let (lu, lv) = (g.laplacian_apply(&u).unwrap(), g.laplacian_apply(&v).unwrap());
        assert_abs_diff_eq!(dot(&lu, &v, g.mu()), dot(&u, &lv, g.mu()), epsilon = 1e-10);
        let ones = VertexFunction::constant(n, 1.0);
        assert_abs_diff_eq!(dot(&lu, &ones, g.mu()), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn kernel_is_symmetric_positive_substochastic(g in graph(), r in 1usize..4, t in 0.01..20.0f64) {
        let gen = dirichlet_generator(&g, &g.ball(0, r)).unwrap();
        let mu = gen.mu();
        for y in 0..gen.len() {
            let col = gen.kernel_column(y, t).unwrap();
            let mass: f64 = col.iter().zip(mu).map(|(p, m)| p * m).sum();
            prop_assert!(mass <= 1.0 + 1e-10);
            for x in 0..gen.len() {
                prop_assert!(col[x] >= 0.0);
                assert_abs_diff_eq!(col[x], gen.kernel_local(y, x, t).unwrap(), epsilon = 1e-12);
            }
        }
        // the truncation is connected, so the kernel is strictly positive inside it
        prop_assert!(gen.kernel_local(0, gen.len() - 1, t).unwrap() > 0.0);
    }

    #[test]
    fn kernel_semigroup_identity(g in graph(), t in 0.05..5.0f64, s in 0.05..5.0f64) {
        let gen = dirichlet_generator(&g, &g.ball(0, 2)).unwrap();
        let mu = gen.mu();
        let m = gen.len();
        for x in 0..m {
            for y in 0..m {
                let conv: f64 = (0..m).map(|z| gen.kernel_local(x, z, t).unwrap() * gen.kernel_local(z, y, s).unwrap() * mu[z]).sum();
                assert_abs_diff_eq!(conv, gen.kernel_local(x, y, t + s).unwrap(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn kernel_increases_with_radius(g in graph(), t in 0.05..10.0f64) {
        let small = g.ball(0, 2);
        let large = g.ball(0, 3);
        let (gs, gl) = (dirichlet_generator(&g, &small).unwrap(), dirichlet_generator(&g, &large).unwrap());
        for &x in &small.members {
            for &y in &small.members {
                let ps = gs.kernel_local(gs.local(x).unwrap(), gs.local(y).unwrap(), t).unwrap();
                let pl = gl.kernel_local(gl.local(x).unwrap(), gl.local(y).unwrap(), t).unwrap();
                prop_assert!(ps <= pl + 1e-12, "p_2 = {ps} > p_3 = {pl}");
            }
        }
    }

    #[test]
    fn lipschitz_is_monotone_in_delta(a in 0.0..2.0f64, p in 1.0..4.0f64, d1 in 0.01..5.0f64, d2 in 0.01..5.0f64) {
        let (lo, hi) = (d1.min(d2), d1.max(d2));
        let src = NonlinearSource::new(ScalarFn::LinearPlusPower { a, b: 1.0, p });
        prop_assert!(src.lipschitz(lo).unwrap() <= src.lipschitz(hi).unwrap() * (1.0 + 1e-9));
        let knots = vec![(0.0, 0.0), (1.0, a), (2.0, a + p), (3.0, a + p)];
        let tab = NonlinearSource::new(ScalarFn::table(knots));
        prop_assert!(tab.lipschitz(lo).unwrap() <= tab.lipschitz(hi).unwrap() * (1.0 + 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_flow_is_reported_bounded(g in graph(), s in any::<u64>()) {
        let gen = dirichlet_generator(&g, &g.whole()).unwrap();
        let u0 = values(gen.len(), s, 0.0, 1.0);
        let det = detect_blowup(&gen, &NonlinearSource::zero(), &u0, 5.0, 1e3, &DetectorConfig::default()).unwrap();
        match det.outcome {
            Outcome::Bounded { sup_norm } => prop_assert!(sup_norm <= u0.sup_norm() + 1e-9),
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn detector_blowup_matches_spatially_constant_ode(g in graph(), c in 0.5..2.0f64) {
        // constant data stays constant on a whole finite graph: u' = u², T* = 1/c
        let gen = dirichlet_generator(&g, &g.whole()).unwrap();
        let u0 = VertexFunction::constant(gen.len(), c);
        let src = NonlinearSource::self_minorant(ScalarFn::Power { coef: 1.0, p: 2.0 });
        let det = detect_blowup(&gen, &src, &u0, 3.0 / c, 1e6 * c, &DetectorConfig::default()).unwrap();
        match det.outcome {
            Outcome::Blowup { t_est, .. } => prop_assert!((t_est - 1.0 / c).abs() < 0.02 / c, "{t_est} vs {}", 1.0 / c),
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn phi_is_nondecreasing_for_nonnegative_sources(g in graph(), s in any::<u64>(), r in 2usize..4) {
        let gen = dirichlet_generator(&g, &g.ball(0, r)).unwrap();
        let u0 = values(gen.len(), s, 0.0, 0.3);
        let src = NonlinearSource::self_minorant(ScalarFn::LinearPlusPower { a: 0.5, b: 1.0, p: 2.0 });
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let (path, _) = picard_solve(&gen, &src, &u0, &times, &PicardMode::BallSup { segment: None }, &SolverConfig::default()).unwrap();
        let tr = phi_trace(&gen, &path, 0, 1.0).unwrap();
        prop_assert!(tr.max_decrease() <= 1e-8, "{}", tr.max_decrease());
    }
}
