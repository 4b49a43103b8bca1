#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use saa_core::market::{AssetCategory, AssetId};
use saa_core::pc::PcInputs;
use saa_core::solver::Bounds;

/// Seeded instance: monthly scenarios from a random two-factor model,
/// Σ the annualized sample covariance of those scenarios.
pub fn random_instance(seed: u64, n: usize, t: usize) -> PcInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let u = Uniform::new(0.0, 1.0).unwrap();
    let load: Vec<[f64; 2]> = (0..n)
        .map(|_| [0.01 + 0.04 * u.sample(&mut rng), 0.03 * (u.sample(&mut rng) - 0.5)])
        .collect();
    let idio: Vec<f64> = (0..n).map(|_| 0.005 + 0.03 * u.sample(&mut rng)).collect();
    let drift: Vec<f64> = (0..n).map(|_| 0.002 + 0.008 * u.sample(&mut rng)).collect();
    let mut x = DMatrix::<f64>::zeros(t, n);
    for r in 0..t {
        let f = [z.sample(&mut rng), z.sample(&mut rng)];
        for i in 0..n {
            x[(r, i)] = drift[i] + load[i][0] * f[0] + load[i][1] * f[1] + idio[i] * z.sample(&mut rng);
        }
    }
    let sigma = annual_cov(&x);
    let mu: Vec<f64> = (0..n).map(|_| 0.02 + 0.08 * u.sample(&mut rng)).collect();
    PcInputs {
        assets: (0..n)
            .map(|i| AssetId::new(format!("a{i}"), AssetCategory::Equity))
            .collect(),
        mu,
        confidence: vec![0.5; n],
        sigma,
        scenarios: x,
        caps: Some(vec![1.0 / n as f64; n]),
        rf: 0.02,
        bounds: Bounds::unit(n),
        target_vol: 0.10,
        cvar_level: 0.95,
        factor_loadings: (0..n)
            .map(|i| if i % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect(),
    }
}

pub fn annual_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, n) = (x.nrows(), x.ncols());
    let m: Vec<f64> = (0..n).map(|i| x.column(i).mean()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        (0..t).map(|r| (x[(r, i)] - m[i]) * (x[(r, j)] - m[j])).sum::<f64>() / (t - 1) as f64 * 12.0
    })
}

/// Every point of the 3-asset simplex on a grid of `1/steps`.
pub fn simplex_grid3(steps: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for a in 0..=steps {
        for b in 0..=(steps - a) {
            let c = steps - a - b;
            out.push([
                a as f64 / steps as f64,
                b as f64 / steps as f64,
                c as f64 / steps as f64,
            ]);
        }
    }
    out
}

pub fn quad(s: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = w.len();
    (0..n)
        .map(|i| (0..n).map(|j| w[i] * s[(i, j)] * w[j]).sum::<f64>())
        .sum()
}

pub fn sharpe(inp: &PcInputs, w: &[f64]) -> f64 {
    let er: f64 = inp.mu.iter().zip(w).map(|(a, b)| a * b).sum();
    (er - inp.rf) / quad(&inp.sigma, w).sqrt()
}

pub fn port_returns(x: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|r| (0..w.len()).map(|i| x[(r, i)] * w[i]).sum())
        .collect()
}

/// Sorted-tail CVaR in the auxiliary-variable form, evaluated by trying
/// every loss as the threshold.
pub fn cvar_oracle(rets: &[f64], alpha: f64) -> f64 {
    let k = 1.0 / ((1.0 - alpha) * rets.len() as f64);
    rets.iter()
        .map(|z0| {
            let z = -z0;
            z + k * rets.iter().map(|r| (-r - z).max(0.0)).sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn sortino(inp: &PcInputs, w: &[f64], mar: f64) -> f64 {
    let rets = port_returns(&inp.scenarios, w);
    let dd =
        (rets.iter().map(|r| (r - mar / 12.0).min(0.0).powi(2)).sum::<f64>() / rets.len() as f64).sqrt() * 12f64.sqrt();
    let ex: f64 = inp.mu.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - mar;
    if dd == 0.0 {
        f64::INFINITY
    } else {
        ex / dd
    }
}

pub fn entropy(w: &[f64]) -> f64 {
    -w.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

pub fn diversification_ratio(inp: &PcInputs, w: &[f64]) -> f64 {
    let n = w.len();
    let num: f64 = (0..n).map(|i| w[i] * inp.sigma[(i, i)].sqrt()).sum();
    num / quad(&inp.sigma, w).sqrt()
}

pub fn max_drawdown_of(rets: &[f64]) -> f64 {
    let mut wealth = 1.0;
    let mut peak = 1.0;
    let mut dd: f64 = 0.0;
    for r in rets {
        wealth *= 1.0 + r;
        peak = f64::max(peak, wealth);
        dd = dd.max(1.0 - wealth / peak);
    }
    dd
}

pub fn assert_simplex(w: &[f64], b: &Bounds, what: &str) {
    let s: f64 = w.iter().sum();
    assert!((s - 1.0).abs() <= 1e-9, "{what}: sum {s}");
    for (i, x) in w.iter().enumerate() {
        assert!(*x >= 0.0, "{what}: negative weight {x}");
        assert!(
            *x >= b.lo[i] - 1e-12 && *x <= b.hi[i] + 1e-12,
            "{what}: bound violated at {i}"
        );
    }
}
