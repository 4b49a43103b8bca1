mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use saa_core::market::{AssetCategory, AssetId};
use saa_core::pc::{self, MethodId, PcOutcome, PcParams, REGISTRY};
use saa_core::solver::Bounds;
use saa_core::Execution;

fn grid_best<F: Fn(&[f64]) -> Option<f64>>(f: F) -> f64 {
    simplex_grid3(100)
        .iter()
        .filter_map(|w| f(w))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn gmv_and_ratio_methods_match_grid() {
    for seed in 0..12 {
        let inp = random_instance(seed, 3, 120);
        let g = pc::gmv(&inp).unwrap();
        let grid = -grid_best(|w| Some(-quad(&inp.sigma, w)));
        assert!(quad(&inp.sigma, &g.weights) <= grid + 1e-12, "gmv seed {seed}");

        let s = pc::max_sharpe(&inp).unwrap();
        let grid = grid_best(|w| Some(sharpe(&inp, w)));
        assert!(sharpe(&inp, &s.weights) >= grid - 1e-9, "sharpe seed {seed}");
        assert!(sharpe(&inp, &s.weights) - grid <= 1e-3);

        let d = pc::max_diversification(&inp).unwrap();
        let grid = grid_best(|w| Some(diversification_ratio(&inp, w)));
        assert!(
            diversification_ratio(&inp, &d.weights) >= grid - 1e-9,
            "maxdiv seed {seed}"
        );
    }
}

#[test]
fn scenario_methods_match_grid() {
    for seed in 20..28 {
        let inp = random_instance(seed, 3, 120);
        let c = pc::cvar_min(&inp).unwrap();
        let mine = cvar_oracle(&port_returns(&inp.scenarios, &c.weights), 0.95);
        let grid = -grid_best(|w| Some(-cvar_oracle(&port_returns(&inp.scenarios, w), 0.95)));
        // The solver may beat the grid but never lose to it.
        assert!(mine <= grid + 1e-6, "cvar seed {seed}: {mine} vs {grid}");

        let m = pc::mean_downside(&inp, inp.rf).unwrap();
        let grid = grid_best(|w| Some(sortino(&inp, w, inp.rf)));
        assert!(sortino(&inp, &m.weights, inp.rf) >= grid - 1e-6, "sortino seed {seed}");
    }
}

#[test]
fn entropy_with_floor_matches_grid() {
    for seed in 40..46 {
        let inp = random_instance(seed, 3, 120);
        let s_star = pc::max_sharpe(&inp).unwrap().diagnostics.sharpe;
        let p = pc::max_entropy(&inp, 0.8).unwrap();
        assert!(sharpe(&inp, &p.weights) >= 0.8 * s_star - 1e-9);
        let grid = grid_best(|w| (sharpe(&inp, w) >= 0.8 * s_star).then(|| entropy(w)));
        assert!(entropy(&p.weights) >= grid - 1e-9, "entropy seed {seed}");
    }
}

#[test]
fn erc_contributions_equal_on_random_matrices() {
    for seed in 0..10u64 {
        let n = 4 + (seed as usize % 5);
        let inp = random_instance(100 + seed, n, 120);
        let p = pc::risk_parity_erc(&inp).unwrap();
        let w = &p.weights;
        let total = quad(&inp.sigma, w);
        for i in 0..n {
            let rc = w[i] * (0..n).map(|j| inp.sigma[(i, j)] * w[j]).sum::<f64>() / total;
            assert!((rc - 1.0 / n as f64).abs() <= 1e-8, "seed {seed} asset {i}");
        }
    }
}

#[test]
fn hrp_two_block_allocation() {
    let vols = [0.10, 0.20, 0.15, 0.30];
    let corr = |i: usize, j: usize| {
        if i == j {
            1.0
        } else if i / 2 == j / 2 {
            0.9
        } else {
            0.0
        }
    };
    let sigma = DMatrix::from_fn(4, 4, |i, j| corr(i, j) * vols[i] * vols[j]);
    let mut inp = random_instance(1, 4, 60);
    inp.sigma = sigma;
    let p = pc::hrp(&inp).unwrap();
    // Inverse-variance mix inside each block is (0.8, 0.2) for both blocks.
    let v_left = 0.64 * 0.01 + 0.04 * 0.04 + 2.0 * 0.8 * 0.2 * 0.9 * 0.10 * 0.20;
    let v_right = 0.64 * 0.0225 + 0.04 * 0.09 + 2.0 * 0.8 * 0.2 * 0.9 * 0.15 * 0.30;
    let a = v_right / (v_left + v_right);
    let expected = [a * 0.8, a * 0.2, (1.0 - a) * 0.8, (1.0 - a) * 0.2];
    for (x, e) in p.weights.iter().zip(expected) {
        assert!((x - e).abs() <= 1e-9, "{:?} vs {:?}", p.weights, expected);
    }
    assert_eq!(pc::hrp_leaf_order(&DMatrix::from_fn(4, 4, corr)), vec![0, 1, 2, 3]);
}

#[test]
fn bl_posterior_two_assets_by_hand() {
    let sigma = DMatrix::from_row_slice(2, 2, &[0.04, 0.012, 0.012, 0.09]);
    let tau = 0.05;
    let pi = [0.03, 0.05];
    let q = [0.05, 0.02];
    let om = [0.002, 0.004];
    let p = DMatrix::<f64>::identity(2, 2);
    let omega = DMatrix::from_row_slice(2, 2, &[om[0], 0.0, 0.0, om[1]]);
    let post = pc::bl_posterior(&pi, &sigma, tau, &p, &q, &omega).unwrap();
    // π + τΣ (τΣ + Ω)⁻¹ (Q − π) with the 2×2 inverse written out.
    let (a, b, d) = (tau * 0.04 + om[0], tau * 0.012, tau * 0.09 + om[1]);
    let det = a * d - b * b;
    let diff = [q[0] - pi[0], q[1] - pi[1]];
    let m = [(d * diff[0] - b * diff[1]) / det, (-b * diff[0] + a * diff[1]) / det];
    let expected = [
        pi[0] + tau * (0.04 * m[0] + 0.012 * m[1]),
        pi[1] + tau * (0.012 * m[0] + 0.09 * m[1]),
    ];
    for k in 0..2 {
        assert!((post[k] - expected[k]).abs() <= 1e-9);
    }
    let exact = pc::bl_posterior(&pi, &sigma, tau, &p, &q, &DMatrix::zeros(2, 2)).unwrap();
    assert!((exact[0] - q[0]).abs() < 1e-12 && (exact[1] - q[1]).abs() < 1e-12);
}

#[test]
fn robust_mv_with_large_kappa_approaches_gmv() {
    let inp = random_instance(7, 3, 120);
    let r = pc::robust_mv(&inp, 60.0, 120).unwrap();
    let g = pc::gmv(&inp).unwrap();
    let l1: f64 = r.weights.iter().zip(&g.weights).map(|(a, b)| (a - b).abs()).sum();
    assert!(l1 < 0.05);
}

#[test]
fn resampling_diversifies_tangency() {
    let inp = random_instance(11, 3, 120);
    let params = PcParams::default();
    let r = pc::resampled_frontier(&inp, &params, Execution::Parallel).unwrap();
    let s = pc::max_sharpe(&inp).unwrap();
    assert!(r.diagnostics.effective_n > s.diagnostics.effective_n);
    let again = pc::resampled_frontier(&inp, &params, Execution::Sequential).unwrap();
    assert_eq!(r.weights, again.weights);
}

#[test]
fn tail_parity_near_inverse_vol_for_independent_gaussians() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = Normal::new(0.0, 1.0).unwrap();
    let vols = [0.02, 0.04, 0.06];
    let x = DMatrix::from_fn(3000, 3, |_, i| vols[i] * z.sample(&mut rng));
    let mut inp = random_instance(0, 3, 60);
    inp.sigma = annual_cov(&x);
    inp.scenarios = x;
    let p = pc::tail_risk_parity(&inp).unwrap();
    let inv: Vec<f64> = vols.iter().map(|v| 1.0 / v).collect();
    let s: f64 = inv.iter().sum();
    let l1: f64 = p.weights.iter().zip(&inv).map(|(a, b)| (a - b / s).abs()).sum();
    assert!(l1 < 0.05, "{:?}", p.weights);
    let cc = pc::smoothed_tail_contributions(&p.weights, &inp.scenarios, 0.95, p.details["smoothing"]);
    let spread = cc.iter().cloned().fold(f64::MIN, f64::max) - cc.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 1e-4);
}

#[test]
fn mean_downside_tracks_sharpe_for_symmetric_scenarios() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = Normal::new(0.0, 1.0).unwrap();
    let mar = 0.03;
    let half = DMatrix::from_fn(150, 2, |_, i| [0.04, 0.02][i] * z.sample(&mut rng));
    // Mirror every row through the centre mar/12 so the joint law is symmetric.
    let x = DMatrix::from_fn(300, 2, |r, i| {
        let v = half[(r % 150, i)];
        mar / 12.0 + if r < 150 { v } else { -v }
    });
    let mut inp = random_instance(0, 2, 60);
    inp.sigma = annual_cov(&x);
    inp.scenarios = x;
    inp.mu = vec![0.09, 0.05];
    inp.rf = mar;
    let d = pc::mean_downside(&inp, mar).unwrap();
    let s = pc::max_sharpe(&inp).unwrap();
    assert!(
        (d.weights[0] - s.weights[0]).abs() <= 0.01,
        "{:?} {:?}",
        d.weights,
        s.weights
    );
}

#[test]
fn drawdown_limit_holds_and_beats_grid() {
    let inp = random_instance(3, 3, 120);
    let limit = 0.10;
    let p = pc::maxdd_constrained(&inp, limit).unwrap();
    let dd = max_drawdown_of(&port_returns(&inp.scenarios, &p.weights));
    assert!(dd <= limit + 1e-9, "drawdown {dd}");
    let er = |w: &[f64]| inp.mu.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let grid = grid_best(|w| (max_drawdown_of(&port_returns(&inp.scenarios, w)) <= limit).then(|| er(w)));
    assert!(er(&p.weights) >= grid - 1e-3);
}

#[test]
fn tpa_residual_no_worse_than_grid() {
    let mut inp = random_instance(2, 4, 60);
    let loadings = vec![[1.0, 0.0], [0.0, 1.0], [0.6, 0.3], [0.2, 0.8]];
    inp.factor_loadings = loadings.clone();
    let resid = |w: &[f64]| {
        let e: f64 = (0..4).map(|i| loadings[i][0] * w[i]).sum::<f64>() - 0.6;
        let b: f64 = (0..4).map(|i| loadings[i][1] * w[i]).sum::<f64>() - 0.4;
        (e * e + b * b).sqrt()
    };
    let p = pc::tpa_two_factor(&inp, &loadings, [0.6, 0.4]).unwrap();
    let mut best = f64::INFINITY;
    for a in 0..=100 {
        for b in 0..=(100 - a) {
            for c in 0..=(100 - a - b) {
                let w = [a as f64, b as f64, c as f64, (100 - a - b - c) as f64].map(|v| v / 100.0);
                best = best.min(resid(&w));
            }
        }
    }
    assert!(resid(&p.weights) <= best + 1e-6);
}

fn with_cash(mut inp: pc::PcInputs) -> pc::PcInputs {
    let last = inp.n() - 1;
    inp.assets[last] = AssetId::new("cash", AssetCategory::Cash);
    inp
}

#[test]
fn run_all_orders_and_degrades() {
    let inp = with_cash(random_instance(13, 6, 120));
    let params = PcParams {
        resamples: 20,
        ..PcParams::default()
    };
    let out = pc::run_all(&inp, &params, &REGISTRY, Execution::Parallel).unwrap();
    assert_eq!(out.len(), 21);
    let failures: Vec<_> = out.iter().filter(|o| o.proposal().is_none()).collect();
    assert!(failures.is_empty(), "{failures:?}");
    let ids: Vec<MethodId> = out.iter().map(|o| o.proposal().unwrap().method).collect();
    assert_eq!(&ids[..20], &REGISTRY[..]);
    assert_eq!(ids[20], MethodId::MaxEntropy);
    assert_eq!(out[20].proposal().unwrap().category, pc::Category::E);

    let seq = pc::run_all(&inp, &params, &REGISTRY, Execution::Sequential).unwrap();
    assert_eq!(out, seq);

    let empty = PcParams {
        researcher_library: vec![],
        ..params
    };
    let out = pc::run_all(&inp, &empty, &REGISTRY, Execution::Parallel).unwrap();
    assert_eq!(out.len(), 20);
    match &out[19] {
        PcOutcome::Proposal(p) => assert_eq!(p.details["peers"], 19.0),
        PcOutcome::Failed(f) => panic!("{f:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_method_returns_a_bounded_simplex_vector(seed in 0u64..10_000, n in 2usize..6, capped in any::<bool>()) {
        let mut inp = with_cash(random_instance(seed, n, 60));
        if capped {
            inp.bounds = Bounds { lo: vec![0.01; n], hi: vec![0.7; n] };
        }
        let params = PcParams { resamples: 8, ..PcParams::default() };
        let out = pc::run_all(&inp, &params, &REGISTRY, Execution::Sequential).unwrap();
        for o in &out {
            match o {
                PcOutcome::Proposal(p) => assert_simplex(&p.weights, &inp.bounds, p.method.key()),
                PcOutcome::Failed(f) => prop_assert!(false, "{} failed: {}", f.method, f.error),
            }
        }
    }

    #[test]
    fn max_sharpe_is_scale_invariant(seed in 0u64..10_000, k in 0.1f64..10.0) {
        let inp = random_instance(seed, 4, 60);
        let base = pc::max_sharpe(&inp).unwrap();
        let mut scaled = inp.clone();
        scaled.sigma = &inp.sigma * k;
        scaled.mu = inp.mu.iter().map(|m| inp.rf + (m - inp.rf) * k.sqrt()).collect();
        let other = pc::max_sharpe(&scaled).unwrap();
        for (a, b) in base.weights.iter().zip(&other.weights) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn hrp_is_deterministic(seed in 0u64..10_000) {
        let inp = random_instance(seed, 5, 60);
        prop_assert_eq!(pc::hrp(&inp).unwrap(), pc::hrp(&inp).unwrap());
    }
}

#[test]
fn adversarial_dominates_floor_feasible_peers() {
    // Peers below the Sharpe floor can sit further from the centroid than any
    // admissible portfolio, so only floor-feasible peers are compared.
    let params = PcParams {
        resamples: 20,
        ..PcParams::default()
    };
    let mut beaten = Vec::new();
    for seed in 0..50u64 {
        let inp = with_cash(random_instance(500 + seed, 6, 120));
        let out = pc::run_all(&inp, &params, &REGISTRY, Execution::Parallel).unwrap();
        let props: Vec<_> = out.iter().filter_map(|o| o.proposal()).collect();
        let adv = props.iter().find(|p| p.method == MethodId::Adversarial).unwrap();
        let peers: Vec<&Vec<f64>> = props
            .iter()
            .filter(|p| p.method != MethodId::Adversarial)
            .map(|p| &p.weights)
            .collect();
        let s_star = pc::max_sharpe(&inp).unwrap().diagnostics.sharpe;
        assert!(sharpe(&inp, &adv.weights) >= 0.75 * s_star - 1e-9, "seed {seed}");
        let n = inp.n();
        let centroid: Vec<f64> = (0..n)
            .map(|i| peers.iter().map(|p| p[i]).sum::<f64>() / peers.len() as f64)
            .collect();
        let tv = |w: &[f64]| {
            let d: Vec<f64> = w.iter().zip(&centroid).map(|(a, b)| a - b).collect();
            quad(&inp.sigma, &d)
        };
        for (p, w) in props.iter().filter(|p| p.method != MethodId::Adversarial).zip(&peers) {
            if tv(w) > tv(&adv.weights) + 1e-12 && sharpe(&inp, w) >= 0.75 * s_star {
                beaten.push((seed, p.method.key(), tv(w), tv(&adv.weights)));
            }
        }
    }
    assert!(beaten.is_empty(), "{beaten:?}");
}
