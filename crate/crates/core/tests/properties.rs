use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use kwlab::blowup::{self, DiagnosticsConfig};
use kwlab::functional::{self, FunctionalContext};
use kwlab::solver::{self, SolverOptions};
use kwlab::surface::{ConformalSpec, FourierMode, GridSpec, Node, ScalarField, SurfaceGrid};

fn grid_with(n: usize, a: f64, b: f64) -> Arc<SurfaceGrid> {
    let modes = vec![
        FourierMode { kx: 1, ky: 0, re: a, im: 0.0 },
        FourierMode { kx: 1, ky: 1, re: 0.0, im: b },
    ];
    GridSpec { n, w: ConformalSpec::Modes(modes) }.build().unwrap()
}

fn field(grid: &Arc<SurfaceGrid>, seed: u64) -> ScalarField {
    ScalarField::random_band_limited(grid.clone(), seed, 5, 1.0)
}

fn shifted(u: &ScalarField, v: &ScalarField, t: f64) -> ScalarField {
    u.with_values(u.values().iter().zip(v.values()).map(|(a, b)| a + t * b).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn integration_by_parts(seed in 0u64..10_000, a in -0.3f64..0.3, b in -0.3f64..0.3) {
        let grid = grid_with(64, a, b);
        let f = field(&grid, seed);
        let q = field(&grid, seed + 1);
        let lhs = grid.inner_g(f.values(), grid.laplacian_g(&q).values());
        let p: Vec<f64> = f.values().iter().zip(q.values()).map(|(x, y)| x + y).collect();
        let m: Vec<f64> = f.values().iter().zip(q.values()).map(|(x, y)| x - y).collect();
        let cross = 0.25 * (grid.grad_norm_sq_g(&p) - grid.grad_norm_sq_g(&m));
        prop_assert!((lhs + cross).abs() <= 1e-10 * (f.grad_norm_sq() + q.grad_norm_sq()));
    }

    #[test]
    fn laplacian_integrates_to_zero(seed in 0u64..10_000, a in -0.3f64..0.3, b in -0.3f64..0.3) {
        let grid = grid_with(64, a, b);
        let lf = grid.laplacian_g(&field(&grid, seed));
        let scale: f64 = lf.values().iter().map(|v| v.abs()).sum::<f64>() / grid.len() as f64;
        prop_assert!(lf.integral().abs() <= 1e-11 * scale.max(1.0));
    }

    #[test]
    fn gauss_bonnet(a in -0.4f64..0.4, b in -0.4f64..0.4) {
        let grid = grid_with(64, a, b);
        prop_assert!(grid.integral_g(grid.gauss_curvature()).abs() < 1e-9);
        prop_assert!((grid.integral_g(&vec![1.0; grid.len()]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_form_conformally_invariant(seed in 0u64..10_000, a in -0.3f64..0.3, b in -0.3f64..0.3) {
        let flat = SurfaceGrid::flat(64).unwrap();
        let curved = grid_with(64, a, b);
        let f = field(&flat, seed);
        let q = field(&flat, seed + 7);
        let on = |g: &Arc<SurfaceGrid>| {
            let qg = ScalarField::new(g.clone(), q.values().to_vec()).unwrap();
            g.inner_g(f.values(), g.laplacian_g(&qg).values())
        };
        let (x, y) = (on(&flat), on(&curved));
        prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
    }

    #[test]
    fn gauge_invariance_and_normalization(seed in 0u64..10_000, c in -5.0f64..5.0, eps in 0.0f64..10.0) {
        let grid = SurfaceGrid::flat(32).unwrap();
        let h = ScalarField::from_fn(grid.clone(), |x, y| 1.2 + (2.0 * PI * x).cos() * (2.0 * PI * y).sin());
        let ctx = FunctionalContext::new(h, eps).unwrap();
        let u = field(&grid, seed);
        let j0 = functional::eval_j(&ctx, &u).unwrap();
        let j1 = functional::eval_j(&ctx, &u.add_constant(c)).unwrap();
        prop_assert!((j0 - j1).abs() <= 1e-9 * j0.abs().max(1.0));
        let v = functional::normalize_h1(&ctx, &u).unwrap();
        prop_assert!((functional::mass(&ctx, &v) - 1.0).abs() < 1e-12);
        let w = functional::normalize_h1(&ctx, &v).unwrap();
        let drift = v.values().iter().zip(w.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(drift < 1e-12);
    }

    #[test]
    fn gradient_matches_difference_quotient(seed in 0u64..10_000, eps in 0.0f64..2.0) {
        let grid = SurfaceGrid::flat(32).unwrap();
        let h = ScalarField::from_fn(grid.clone(), |x, _| 0.8 + (2.0 * PI * x).cos());
        let ctx = FunctionalContext::new(h, eps).unwrap();
        let u = ScalarField::random_band_limited(grid.clone(), seed, 3, 0.3);
        prop_assume!(functional::mass(&ctx, &u) > 0.0);
        let v = field(&grid, seed + 3);
        let t = 1e-5;
        let fd = (functional::eval_j(&ctx, &shifted(&u, &v, t)).unwrap()
            - functional::eval_j(&ctx, &shifted(&u, &v, -t)).unwrap()) / (2.0 * t);
        let g = functional::grad_j(&ctx, &u).unwrap();
        let an = grid.inner_g(g.values(), v.values());
        let norm = (grid.inner_g(g.values(), g.values()) * grid.inner_g(v.values(), v.values())).sqrt();
        prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3 * norm));
    }

    #[test]
    fn descent_direction_has_negative_slope(seed in 0u64..10_000) {
        let grid = grid_with(32, 0.2, -0.1);
        let h = ScalarField::from_fn(grid.clone(), |x, y| 1.0 + 0.5 * (2.0 * PI * (x + y)).sin());
        let ctx = FunctionalContext::new(h, 1.0).unwrap();
        let u = field(&grid, seed);
        let g = functional::grad_j(&ctx, &u).unwrap();
        let d = solver::descent_direction(&ctx, &u).unwrap();
        prop_assert!(grid.inner_g(g.values(), d.values()) < 0.0);
        let scale = d.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(d.mean().abs() <= 1e-12 * scale.max(1.0), "{} {}", d.mean(), scale);
    }

    #[test]
    fn energy_partition_exact(seed in 0u64..10_000, px in 0usize..64, py in 0usize..64, lambda in 6.0f64..12.0) {
        let grid = SurfaceGrid::flat(64).unwrap();
        let u = field(&grid, seed);
        let cfg = DiagnosticsConfig { neck_outer: 0.2, neck_inner_multiplier: 2.0, ..DiagnosticsConfig::default() };
        let s = blowup::energy_decomposition(&u, Node::new(px, py), lambda, &cfg).unwrap();
        prop_assert!((s.inner + s.neck + s.outer - s.total).abs() <= 1e-10 * s.total.max(1.0));
    }

    #[test]
    fn rank_correlation_bounded_and_symmetric(a in prop::collection::vec(-10.0f64..10.0, 3..12), seed in 0u64..100) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * ((seed + i as u64) % 5) as f64 - i as f64).collect();
        let r = solver::rank_correlation(&a, &b);
        if r.is_finite() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            prop_assert!((r - solver::rank_correlation(&b, &a)).abs() < 1e-12);
        }
        let self_r = solver::rank_correlation(&a, &a);
        prop_assert!(!self_r.is_finite() || (self_r - 1.0).abs() < 1e-12);
    }
}

#[test]
fn accepted_iterates_decrease_energy_and_stay_gauged() {
    let grid = SurfaceGrid::flat(64).unwrap();
    let h = ScalarField::from_fn(grid.clone(), |x, _| (2.0 * PI * x).sin() + 0.1);
    let ctx = FunctionalContext::new(h, 4.0 * PI).unwrap();
    let init = ScalarField::constant(grid.clone(), 0.0);
    let opts = SolverOptions { max_iter: 100, tol: 1e-14, ..SolverOptions::default() };
    let state = solver::minimize_at_eps(&ctx, &init, &opts).unwrap();
    assert!(state.j_history.len() > 10);
    for w in state.j_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
    }
    assert!(state.u.mean().abs() < 1e-12);
    assert!(state.mass > 0.0);
    assert!(state.monitor.int_violations == 0 && state.monitor.checked > 0);
}
