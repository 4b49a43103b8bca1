//! Writes the 18-asset, 360-month sample data set used by the end-to-end
//! tests and the sample config: monthly returns, fundamentals, market caps
//! and macro indicators.
//!
//! Usage: `cargo run -p saa-core --example make_fixture [out_dir]`
//! (default: `fixtures/` at the workspace root).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use saa_core::cma::{self, CmaContext, CmaMethod, CmaSettings};
use saa_core::market::{self, AssetCategory, AssetId, PanelSources, Universe};
use saa_core::regime::{self, DimensionWeights, MacroIndicators, Regime};
use saa_core::Execution;

const SEED: u64 = 1996;
const MONTHS: usize = 360;
const RF_NOW: f64 = 0.037;
/// Equilibrium risk aversion in the sample config.
const DELTA: f64 = 3.0;
const SHRINK: f64 = 0.2;

/// Factor order: equity, rates, credit, commodity, gold.
const FACTOR_VOL: [f64; 5] = [0.16, 0.06, 0.05, 0.18, 0.15];

fn factor_means(r: Regime) -> [f64; 5] {
    match r {
        Regime::Expansion => [0.16, 0.00, 0.03, 0.08, 0.02],
        Regime::LateCycle => [0.06, -0.01, 0.00, 0.03, 0.01],
        Regime::Recession => [-0.25, 0.08, -0.12, -0.20, 0.10],
        Regime::Recovery => [0.25, 0.02, 0.10, 0.05, 0.04],
    }
}

struct Asset {
    slug: &'static str,
    category: AssetCategory,
    loadings: [f64; 5],
    idio: f64,
    vol: f64,
    /// Annual premium over cash across the full sample.
    premium: f64,
    /// Annual premium over cash in late-cycle months, when pinned.
    late_premium: Option<f64>,
    cap: f64,
}

const fn a(
    slug: &'static str,
    category: AssetCategory,
    loadings: [f64; 5],
    idio: f64,
    vol: f64,
    premium: f64,
    cap: f64,
) -> Asset {
    Asset {
        slug,
        category,
        loadings,
        idio,
        vol,
        premium,
        late_premium: None,
        cap,
    }
}

use AssetCategory::{Cash, Equity, FixedIncome, RealAssets};

fn assets() -> Vec<Asset> {
    let mut v = vec![
        a(
            "us-large-cap",
            Equity,
            [1.0, 0.0, 0.0, 0.0, 0.0],
            0.03,
            0.155,
            0.088,
            40.0,
        ),
        a("us-growth", Equity, [1.1, 0.0, 0.0, 0.0, 0.0], 0.06, 0.175, 0.096, 5.0),
        a("us-value", Equity, [0.9, 0.0, 0.1, 0.0, 0.0], 0.05, 0.150, 0.072, 5.0),
        a(
            "us-small-cap",
            Equity,
            [1.15, 0.0, 0.2, 0.0, 0.0],
            0.09,
            0.195,
            0.050,
            3.0,
        ),
        a(
            "intl-developed",
            Equity,
            [0.9, 0.0, 0.0, 0.05, 0.0],
            0.08,
            0.165,
            0.045,
            12.0,
        ),
        a(
            "emerging-markets",
            Equity,
            [1.1, 0.0, 0.2, 0.15, 0.0],
            0.14,
            0.220,
            0.055,
            5.0,
        ),
        a(
            "short-term-treasuries",
            FixedIncome,
            [0.0, 0.25, 0.0, 0.0, 0.0],
            0.008,
            0.016,
            0.004,
            2.0,
        ),
        a(
            "intermediate-treasuries",
            FixedIncome,
            [0.0, 0.75, 0.0, 0.0, 0.0],
            0.012,
            0.048,
            0.016,
            5.0,
        ),
        a(
            "long-term-treasuries",
            FixedIncome,
            [0.0, 1.8, 0.0, 0.0, 0.0],
            0.03,
            0.115,
            0.030,
            2.0,
        ),
        a(
            "ig-corporates",
            FixedIncome,
            [0.05, 0.8, 0.4, 0.0, 0.0],
            0.015,
            0.058,
            0.022,
            5.0,
        ),
        a(
            "hy-corporates",
            FixedIncome,
            [0.3, 0.3, 1.0, 0.0, 0.0],
            0.03,
            0.088,
            0.036,
            1.5,
        ),
        a(
            "intl-sovereigns",
            FixedIncome,
            [0.0, 0.8, 0.0, 0.0, 0.0],
            0.04,
            0.075,
            0.013,
            6.0,
        ),
        a(
            "intl-corporates",
            FixedIncome,
            [0.05, 0.7, 0.4, 0.0, 0.0],
            0.03,
            0.068,
            0.019,
            2.0,
        ),
        a(
            "usd-em-debt",
            FixedIncome,
            [0.25, 0.6, 0.8, 0.0, 0.0],
            0.05,
            0.095,
            0.036,
            1.5,
        ),
        a("reits", RealAssets, [1.0, 0.3, 0.3, 0.0, 0.0], 0.12, 0.190, 0.063, 1.5),
        a("gold", RealAssets, [0.0, 0.1, 0.0, 0.0, 1.0], 0.05, 0.150, 0.042, 1.5),
        a(
            "commodities",
            RealAssets,
            [0.2, 0.0, 0.0, 1.0, 0.0],
            0.06,
            0.170,
            0.015,
            0.5,
        ),
        a("cash", Cash, [0.0; 5], 0.0, 0.0, 0.0, 1.5),
    ];
    v[0].late_premium = Some(0.061);
    v[3].late_premium = Some(0.044);
    v
}

/// Equity fundamentals at the as-of date: CAPE, trailing P/E, dividend
/// yield, buyback yield, earnings growth.
fn equity_fundamentals(slug: &str) -> Option<[f64; 5]> {
    Some(match slug {
        "us-large-cap" => [25.0, 24.0, 0.014, 0.015, 0.0],
        "us-growth" => [31.25, 33.0, 0.007, 0.012, 0.0],
        "us-value" => [18.0, 16.0, 0.024, 0.012, 0.040],
        "us-small-cap" => [14.0, 18.0, 0.015, 0.010, 0.0],
        "intl-developed" => [16.0, 15.0, 0.031, 0.008, 0.040],
        "emerging-markets" => [13.0, 11.0, 0.029, 0.004, 0.055],
        "reits" => [20.0, 28.0, 0.038, 0.0, 0.030],
        _ => return None,
    })
}

/// Inverse-Gordon targets pinned by solving for earnings growth.
fn gordon_target(slug: &str) -> Option<f64> {
    match slug {
        "us-large-cap" => Some(0.043),
        "us-small-cap" => Some(0.075),
        _ => None,
    }
}

/// Yield to maturity at the as-of date.
fn ytm(slug: &str) -> Option<f64> {
    Some(match slug {
        "short-term-treasuries" => 0.039,
        "intermediate-treasuries" => 0.041,
        "long-term-treasuries" => 0.046,
        "ig-corporates" => 0.051,
        "hy-corporates" => 0.072,
        "intl-sovereigns" => 0.034,
        "intl-corporates" => 0.043,
        "usd-em-debt" => 0.068,
        _ => return None,
    })
}

fn month_ends() -> Vec<NaiveDate> {
    (0..MONTHS)
        .map(|k| {
            let (y, m) = (1996 + (k / 12) as i32, (k % 12) as u32 + 1);
            let first_next = if m == 12 {
                NaiveDate::from_ymd_opt(y + 1, 1, 1)
            } else {
                NaiveDate::from_ymd_opt(y, m + 1, 1)
            };
            first_next.unwrap().pred_opt().unwrap()
        })
        .collect()
}

/// Stylized cycle: (first month inclusive as yyyymm, regime).
const CYCLE: [(u32, Regime); 16] = [
    (199601, Regime::Expansion),
    (199807, Regime::LateCycle),
    (200101, Regime::Recession),
    (200207, Regime::Recovery),
    (200401, Regime::Expansion),
    (200601, Regime::LateCycle),
    (200711, Regime::Recession),
    (200907, Regime::Recovery),
    (201107, Regime::Expansion),
    (201801, Regime::LateCycle),
    (202001, Regime::Recession),
    (202007, Regime::Recovery),
    (202107, Regime::Expansion),
    (202201, Regime::LateCycle),
    (202307, Regime::Expansion),
    (202407, Regime::LateCycle),
];

fn true_regime(d: NaiveDate) -> Regime {
    let key = d.year() as u32 * 100 + d.month();
    CYCLE
        .iter()
        .rev()
        .find(|(start, _)| *start <= key)
        .map(|(_, r)| *r)
        .unwrap()
}

fn template(r: Regime) -> [f64; 4] {
    match r {
        Regime::Expansion => [3.2, 1.8, -0.5, -0.4],
        Regime::LateCycle => [2.8, 3.0, 1.0, 0.4],
        Regime::Recession => [-0.5, 2.5, -1.5, 1.2],
        Regime::Recovery => [1.2, 1.5, -1.0, -0.5],
    }
}

/// Short rate path (annual), linear between knots.
fn short_rate(d: NaiveDate) -> f64 {
    const KNOTS: [(f64, f64); 15] = [
        (1996.0, 0.052),
        (2000.5, 0.060),
        (2002.0, 0.017),
        (2004.0, 0.010),
        (2006.5, 0.050),
        (2008.0, 0.020),
        (2009.0, 0.002),
        (2015.9, 0.002),
        (2019.0, 0.023),
        (2020.3, 0.001),
        (2022.0, 0.001),
        (2023.5, 0.052),
        (2024.7, 0.052),
        (2025.5, 0.042),
        (2026.0, RF_NOW),
    ];
    let t = d.year() as f64 + (d.month() as f64 - 0.5) / 12.0;
    for w in KNOTS.windows(2) {
        let ((t0, r0), (t1, r1)) = (w[0], w[1]);
        if t <= t1 {
            let u = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            return r0 + u * (r1 - r0);
        }
    }
    RF_NOW
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn demean(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rescales deviations to the target vol, then pins the full-sample mean
/// (and the late-cycle mean when requested) with regime-wise constants.
/// Returns the series as `s·u + k + mean` pieces so the caller can solve for
/// `s` against a covariance target.
struct Shape {
    u: Vec<f64>,
    k: Vec<f64>,
    mean: f64,
}

impl Shape {
    fn new(raw: &[f64], late: &[bool], mean_target: f64, late_target: Option<f64>) -> Shape {
        let x = demean(raw);
        let n = x.len() as f64;
        match late_target {
            None => Shape {
                u: x,
                k: vec![0.0; raw.len()],
                mean: mean_target,
            },
            Some(l) => {
                let p = late.iter().filter(|b| **b).count() as f64 / n;
                let xl = mean(
                    &x.iter()
                        .zip(late)
                        .filter(|(_, b)| **b)
                        .map(|(v, _)| *v)
                        .collect::<Vec<_>>(),
                );
                let z: Vec<f64> = late.iter().map(|b| if *b { 1.0 - p } else { -p }).collect();
                Shape {
                    u: x.iter().zip(&z).map(|(v, z)| v - xl * z / (1.0 - p)).collect(),
                    k: z.iter().map(|z| (l - mean_target) * z / (1.0 - p)).collect(),
                    mean: mean_target,
                }
            }
        }
    }

    fn series(&self, s: f64) -> Vec<f64> {
        self.u.iter().zip(&self.k).map(|(u, k)| s * u + k + self.mean).collect()
    }

    /// Scale giving the requested annualized vol.
    fn scale_for_vol(&self, vol: f64) -> f64 {
        // Var(s·u + k) = s²·uu + 2s·uk + kk, all over T − 1.
        let t1 = (self.u.len() - 1) as f64;
        let (uu, uk, kk) = (
            dot(&self.u, &self.u) / t1,
            dot(&self.u, &self.k) / t1,
            dot(&self.k, &self.k) / t1,
        );
        solve_quadratic(uu, 2.0 * uk, kk - vol * vol / 12.0)
    }
}

fn solve_quadratic(a: f64, b: f64, c: f64) -> f64 {
    let disc = b * b - 4.0 * a * c;
    assert!(disc >= 0.0, "calibration target unreachable");
    (-b + disc.sqrt()) / (2.0 * a)
}

fn fmt_row(date: NaiveDate, xs: &[f64], dp: usize) -> String {
    let mut s = date.to_string();
    for x in xs {
        let _ = write!(s, ",{:.*}", dp, x + 0.0);
    }
    s.push('\n');
    s
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.6}"))
}

fn write_fundamentals(path: &Path, assets: &[Asset], dates: &[NaiveDate], growth: &dyn Fn(&str) -> f64) {
    let mut s = String::from(
        "slug,as_of,cape,trailing_pe,dividend_yield,buyback_yield,earnings_growth,yield_to_maturity,risk_free_rate\n",
    );
    let year_ends: Vec<NaiveDate> = dates.iter().copied().filter(|d| d.month() == 12).collect();
    for asset in assets {
        for (k, d) in year_ends.iter().enumerate() {
            let last = k + 1 == year_ends.len();
            // CAPE history oscillates around 0.9× today's level so the
            // median anchor sits a little below the current reading.
            let wave = 0.9 + 0.15 * (k as f64 * 0.7).sin();
            let (cape, pe, dy, bb, g) = match equity_fundamentals(asset.slug) {
                Some(f) if last => (Some(f[0]), Some(f[1]), Some(f[2]), Some(f[3]), Some(growth(asset.slug))),
                Some(f) => (
                    Some(f[0] * wave),
                    Some(f[1] * wave),
                    Some(f[2]),
                    Some(f[3]),
                    Some(f[4].max(0.03)),
                ),
                None => (None, None, None, None, None),
            };
            let y = ytm(asset.slug).map(|y| if last { y } else { y + short_rate(*d) - RF_NOW });
            let rf = (asset.category == Cash).then(|| if last { RF_NOW } else { short_rate(*d) });
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                asset.slug,
                d,
                opt(cape),
                opt(pe),
                opt(dy),
                opt(bb),
                opt(g),
                opt(y),
                opt(rf)
            );
        }
    }
    fs::write(path, s).expect("write fundamentals");
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    fs::create_dir_all(&out).expect("create output dir");
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let dates = month_ends();
    let assets = assets();
    let n = assets.len();

    // Indicators: regime template plus noise, with a pinned final reading.
    let mut indicators = Vec::with_capacity(MONTHS);
    for (k, d) in dates.iter().enumerate() {
        let t = template(true_regime(*d));
        let r = if k + 1 == MONTHS {
            [3.1, 2.4, 1.25, 0.8]
        } else {
            [
                t[0] + 0.3 * normal(),
                t[1] + 0.2 * normal(),
                t[2] + 0.2 * normal(),
                t[3] + 0.15 * normal(),
            ]
        };
        indicators.push(MacroIndicators {
            as_of: *d,
            growth_reading: r[0],
            inflation_reading: r[1],
            policy_reading: r[2],
            financial_conditions_reading: r[3],
        });
    }
    let labels =
        regime::label_history(&indicators, &regime::default_thresholds(), &DimensionWeights::default()).unwrap();
    let late: Vec<bool> = labels.iter().map(|(_, r)| *r == Regime::LateCycle).collect();

    // Factor and idiosyncratic draws.
    let factors: Vec<[f64; 5]> = labels
        .iter()
        .map(|(_, r)| {
            let m = factor_means(*r);
            std::array::from_fn(|f| m[f] / 12.0 + FACTOR_VOL[f] / 12f64.sqrt() * normal())
        })
        .collect();
    let cash: Vec<f64> = dates
        .iter()
        .map(|d| short_rate(*d) / 12.0 + 0.0002 * normal())
        .collect();
    let cash_mean = mean(&cash);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut shapes: Vec<Option<Shape>> = Vec::with_capacity(n);
    for asset in &assets {
        if asset.category == Cash {
            columns.push(cash.clone());
            shapes.push(None);
            continue;
        }
        let raw: Vec<f64> = factors
            .iter()
            .map(|f| dot(f, &asset.loadings) + asset.idio / 12f64.sqrt() * normal())
            .collect();
        let shape = Shape::new(
            &raw,
            &late,
            asset.premium / 12.0 + cash_mean,
            asset.late_premium.map(|l| {
                l / 12.0
                    + mean(
                        &cash
                            .iter()
                            .zip(&late)
                            .filter(|(_, b)| **b)
                            .map(|(c, _)| *c)
                            .collect::<Vec<_>>(),
                    )
            }),
        );
        columns.push(shape.series(shape.scale_for_vol(asset.vol)));
        shapes.push(Some(shape));
    }

    // US Large Cap: pick the scale so that δ·(Σw)₀ hits the 5.6% equilibrium
    // premium under the shrunk covariance.
    let total_cap: f64 = assets.iter().map(|a| a.cap).sum();
    let w: Vec<f64> = assets.iter().map(|a| a.cap / total_cap).collect();
    let t1 = (MONTHS - 1) as f64;
    let lc = shapes[0].as_ref().unwrap();
    let others: f64 = (1..n).map(|j| w[j] * dot(&lc.u, &demean(&columns[j]))).sum::<f64>();
    let others_k: f64 = (1..n).map(|j| w[j] * dot(&lc.k, &demean(&columns[j]))).sum::<f64>();
    let target = (0.093 - RF_NOW) / DELTA * t1 / 12.0;
    let (uu, uk, kk) = (dot(&lc.u, &lc.u), dot(&lc.u, &lc.k), dot(&lc.k, &lc.k));
    let s = solve_quadratic(
        w[0] * uu,
        2.0 * w[0] * uk + (1.0 - SHRINK) * others,
        w[0] * kk + (1.0 - SHRINK) * others_k - target,
    );
    columns[0] = lc.series(s);

    let mut csv = String::from("date");
    for asset in &assets {
        csv.push(',');
        csv.push_str(asset.slug);
    }
    csv.push('\n');
    for (t, d) in dates.iter().enumerate() {
        let row: Vec<f64> = columns.iter().map(|c| c[t]).collect();
        csv.push_str(&fmt_row(*d, &row, 10));
    }
    fs::write(out.join("returns.csv"), csv).expect("write returns");

    let mut ind = String::from("date,growth,inflation,policy,financial\n");
    for i in &indicators {
        let r = [
            i.growth_reading,
            i.inflation_reading,
            i.policy_reading,
            i.financial_conditions_reading,
        ];
        ind.push_str(&fmt_row(i.as_of, &r, 4));
    }
    fs::write(out.join("indicators.csv"), ind).expect("write indicators");

    let as_of = *dates.last().unwrap();
    let mut caps = String::from("date,slug,cap\n");
    for asset in &assets {
        let _ = writeln!(caps, "{as_of},{},{:.1}", asset.slug, asset.cap * 1000.0);
    }
    fs::write(out.join("caps.csv"), caps).expect("write caps");

    // Earnings growth: solved so the inverse-Gordon estimate hits its target
    // for pinned assets; US Growth's is solved afterwards so that the judge
    // marks the blend down by 2.0pp.
    let anchor = |slug: &str| {
        let f = equity_fundamentals(slug).unwrap();
        let mut hist: Vec<f64> = (0..MONTHS / 12 - 1)
            .map(|k| f[0] * (0.9 + 0.15 * (k as f64 * 0.7).sin()))
            .collect();
        hist.push(f[0]);
        hist.sort_by(f64::total_cmp);
        let m = hist.len() / 2;
        let med = if hist.len() % 2 == 1 {
            hist[m]
        } else {
            0.5 * (hist[m - 1] + hist[m])
        };
        // The anchor is taken from the written (6 dp) values.
        (med * 1e6).round() / 1e6
    };
    let valuation = |slug: &str| {
        let f = equity_fundamentals(slug).unwrap();
        (anchor(slug) / f[0]).powf(1.0 / 3.0) - 1.0
    };
    let base_growth = |slug: &str| -> f64 {
        let f = equity_fundamentals(slug).unwrap();
        match gordon_target(slug) {
            Some(t) => t - f[2] - f[3] - valuation(slug),
            None => f[4],
        }
    };
    let fpath = out.join("fundamentals.csv");
    let universe = Universe::new(assets.iter().map(|a| AssetId::new(a.slug, a.category)).collect()).unwrap();
    let growth_delta = |g_growth: f64| -> f64 {
        write_fundamentals(&fpath, &assets, &dates, &|slug| {
            if slug == "us-growth" {
                g_growth
            } else {
                base_growth(slug)
            }
        });
        let sources = PanelSources {
            returns: vec![out.join("returns.csv")],
            fundamentals: Some(fpath.clone()),
            caps: Some(out.join("caps.csv")),
        };
        let panel = market::load_panel(&sources, &universe).unwrap();
        let cov = market::shrink_covariance(&market::sample_covariance(&panel).unwrap(), SHRINK).unwrap();
        let caps = panel.caps.as_ref().unwrap().weights(&universe).unwrap();
        let settings = CmaSettings {
            risk_aversion: DELTA,
            ..CmaSettings::default()
        };
        let labels = cma::align_labels(&panel.dates, &labels);
        let ctx = CmaContext {
            panel: &panel,
            sigma: &cov.matrix,
            cap_weights: &caps,
            risk_free_rate: RF_NOW,
            regime: Regime::LateCycle,
            labels: &labels,
            as_of: Some(as_of),
            settings: &settings,
        };
        let set = cma::build_cma_set(&ctx, Execution::Sequential).unwrap();
        let g = set.get("us-growth").unwrap();
        let blend = g
            .candidates
            .iter()
            .find(|c| c.method == CmaMethod::AutoBlend)
            .unwrap()
            .estimate;
        g.judge.as_ref().unwrap().final_estimate - blend
    };
    // Δ is affine in earnings growth while the clamp is inactive.
    let (g0, g1) = (0.02, 0.04);
    let (d0, d1) = (growth_delta(g0), growth_delta(g1));
    let g = g0 + (-0.020 - d0) * (g1 - g0) / (d1 - d0);
    let g = (g * 1e6).round() / 1e6;
    let d = growth_delta(g);
    println!(
        "wrote {} (US Growth earnings growth {g:.6}, judge delta {:.4}pp)",
        out.display(),
        d * 100.0
    );
}
