//! Property tests of the structural invariants.

use delay_mfg::convergence::fit_loglog;
use delay_mfg::hilbert::{apply_a, apply_a_star, apply_b, apply_b_star, inner_product, LagGrid, PathH, ProductPoint};
use delay_mfg::riccati::{solve_e_system, CouplingKind, GameParams};
use delay_mfg::sim::{estimate_cost, simulate, InitialData, SimConfig, Strategy as Play, StrategySpec};
use delay_mfg::value::{eval_value_master, eval_value_nplayer, optimal_control_nplayer, MeasureSummary};
use proptest::prelude::*;

const NS: usize = 8;

fn lag() -> LagGrid {
    LagGrid::new(0.5, NS).unwrap()
}

fn path() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, NS + 1)
}

fn point() -> impl Strategy<Value = ProductPoint> {
    (-2.0..2.0f64, path()).prop_map(|(z0, v)| ProductPoint::new(z0, PathH::new(v, &lag()).unwrap()))
}

fn small_params() -> impl Strategy<Value = GameParams> {
    (0.0..2.0f64, 0.0..2.0f64, 0.0..2.0f64).prop_map(|(sigma, epsilon, c)| GameParams {
        sigma,
        epsilon,
        c,
        ..GameParams::default()
    })
}

fn shift(p: &ProductPoint, a: f64, b: &[f64]) -> ProductPoint {
    let v: Vec<f64> = p.z1.values().iter().zip(b).map(|(x, y)| x + y).collect();
    ProductPoint::new(p.z0 + a, PathH::new(v, &lag()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inner_product_is_symmetric_and_bilinear(z in point(), w in point(), v in point(), a in -3.0..3.0f64) {
        let g = lag();
        let zw = inner_product(&z, &w, &g).unwrap();
        prop_assert!((zw - inner_product(&w, &z, &g).unwrap()).abs() <= 1e-12 * (1.0 + zw.abs()));
        let comb: Vec<f64> = z.z1.values().iter().zip(v.z1.values()).map(|(x, y)| a * x + y).collect();
        let zv = ProductPoint::new(a * z.z0 + v.z0, PathH::new(comb, &g).unwrap());
        let lhs = inner_product(&zv, &w, &g).unwrap();
        let rhs = a * zw + inner_product(&v, &w, &g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
        prop_assert!(inner_product(&z, &z, &g).unwrap() >= 0.0);
    }

    #[test]
    fn b_star_is_the_adjoint_of_b(z in point(), u in -3.0..3.0f64) {
        let g = lag();
        let lhs = inner_product(&apply_b(u, &g), &z, &g).unwrap();
        let rhs = u * apply_b_star(&z);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn a_star_is_the_adjoint_of_a(z in point(), w in point()) {
        let g = lag();
        let mut zv = z.z1.values().to_vec();
        zv[0] = 0.0;
        let z = ProductPoint::new(z.z0, PathH::new(zv, &g).unwrap());
        let w = ProductPoint::new(w.z1.last(), w.z1.clone());
        let lhs = inner_product(&apply_a(&z, &g).unwrap(), &w, &g).unwrap();
        let rhs = inner_product(&z, &apply_a_star(&w, &g).unwrap(), &g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn e2_is_symmetric(p in small_params(), n in 2usize..6) {
        for coupling in [CouplingKind::NPlayer(n), CouplingKind::MeanField] {
            let e = solve_e_system(&p, 20, coupling).unwrap();
            for k in [0, 7, 20] {
                for j in 0..=e.n_s() {
                    for l in 0..=e.n_s() {
                        prop_assert_eq!(e.e2(k, j, l), e.e2(k, l, j));
                    }
                }
            }
        }
    }

    #[test]
    fn master_value_is_translation_invariant(z in point(), m in point(), a in -2.0..2.0f64, b in path()) {
        let e = solve_e_system(&GameParams::default(), 16, CouplingKind::MeanField).unwrap();
        let mu = MeasureSummary::new(m.z0, m.z1.clone());
        let u = eval_value_master(&e, 0.0, &z, &mu).unwrap();
        let zs = shift(&z, a, &b);
        let ms = shift(&m, a, &b);
        let us = eval_value_master(&e, 0.0, &zs, &MeasureSummary::new(ms.z0, ms.z1.clone())).unwrap();
        prop_assert!((u - us).abs() <= 1e-10 * (1.0 + u.abs()));
    }

    #[test]
    fn nash_values_are_permutation_equivariant(pop in prop::collection::vec(point(), 4), rot in 1usize..4) {
        let e = solve_e_system(&GameParams::default(), 16, CouplingKind::NPlayer(4)).unwrap();
        let perm: Vec<ProductPoint> = (0..4).map(|i| pop[(i + rot) % 4].clone()).collect();
        for i in 0..4 {
            let v = eval_value_nplayer(&e, 0.5, &perm, i).unwrap();
            let w = eval_value_nplayer(&e, 0.5, &pop, (i + rot) % 4).unwrap();
            prop_assert!((v - w).abs() <= 1e-10 * (1.0 + v.abs()));
            let a = optimal_control_nplayer(&e, 0.5, &perm, i).unwrap();
            let b = optimal_control_nplayer(&e, 0.5, &pop, (i + rot) % 4).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn cost_ignores_relabeling_of_the_others(xi in prop::collection::vec(-1.0..1.0f64, 4), phi in -1.0..1.0f64) {
        // no noise, so the comparison is exact up to summation order
        let p = GameParams { sigma: 0.0, ..GameParams::default() };
        let e = solve_e_system(&p, 10, CouplingKind::NPlayer(4)).unwrap();
        let cfg = SimConfig { n_t: 10, m_paths: 1, seed: 1, store_paths: false };
        let s = StrategySpec::uniform(4, Play::NashNPlayer);
        let a = InitialData::constant(&e.lag(), xi.clone(), phi);
        let b = InitialData::constant(&e.lag(), vec![xi[0], xi[3], xi[1], xi[2]], phi);
        let ca = estimate_cost(&simulate(&p, Some(&e), None, &a, &s, cfg).unwrap(), 0).0;
        let cb = estimate_cost(&simulate(&p, Some(&e), None, &b, &s, cfg).unwrap(), 0).0;
        prop_assert!((ca - cb).abs() <= 1e-12 * (1.0 + ca.abs()));
    }

    #[test]
    fn rate_fit_recovers_power_laws(c in 0.01..100.0f64, p in -3.0..-0.1f64) {
        let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|&n: &f64| (n, c * n.powf(p))).collect();
        let fit = fit_loglog(&pts).unwrap();
        prop_assert!((fit.slope - p).abs() < 1e-10);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
    }
}
