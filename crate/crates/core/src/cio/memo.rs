use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::CioDecision;
use crate::pc::PcInputs;
use crate::regime::RegimeView;

/// Relative drift from target that triggers an off-cycle rebalance.
pub const DEFAULT_DRIFT_TRIGGER: f64 = 0.25;

/// Ex-ante figures for the reference portfolio (a 60/40 mix).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkStats {
    pub expected_return: f64,
    pub vol: f64,
    pub sharpe: f64,
    pub backtest_sharpe: Option<f64>,
}

pub struct MemoInputs<'a> {
    pub as_of: NaiveDate,
    pub decision: &'a CioDecision,
    pub inputs: &'a PcInputs,
    /// Display names in universe order; slugs are used when absent.
    pub names: Option<&'a [String]>,
    pub view: &'a RegimeView,
    pub benchmark: BenchmarkStats,
    /// Target weights of the last approved allocation, by slug.
    pub previous: Option<&'a BTreeMap<String, f64>>,
    pub drift_trigger: f64,
}

fn pct(x: f64, dp: usize) -> String {
    // Adding 0.0 folds −0.0 into 0.0.
    format!("{:.*}%", dp, x * 100.0 + 0.0)
}

fn signed_pp(x: f64) -> String {
    let v = x * 100.0 + 0.0;
    if v >= 0.0 {
        format!("+{v:.1}pp")
    } else {
        format!("{v:.1}pp")
    }
}

/// Markdown board memo with seven fixed sections.
pub fn render_board_memo(m: &MemoInputs<'_>) -> String {
    let dec = m.decision;
    let chosen = &dec.chosen;
    let d = &chosen.diagnostics;
    let slugs = m.inputs.slugs();
    let name = |k: usize| {
        m.names
            .and_then(|n| n.get(k))
            .cloned()
            .unwrap_or_else(|| slugs[k].clone())
    };
    let w = &chosen.asset_weights;
    let rc: Vec<f64> = slugs
        .iter()
        .map(|s| dec.report.risk_contributions.get(s).copied().unwrap_or(0.0))
        .collect();

    let mut s = String::new();
    let _ = writeln!(s, "# Board Memo: Strategic Asset Allocation ({})\n", m.as_of);
    let _ = writeln!(
        s,
        "Recommended allocation: **{}** ensemble of {} candidate portfolios.\n",
        chosen.method,
        chosen.candidate_weights.iter().filter(|(_, c)| *c > 0.0).count()
    );

    let _ = writeln!(s, "## 1. Expected Performance Relative to the 60/40 Benchmark\n");
    let _ = writeln!(s, "| Metric | Recommended | 60/40 Benchmark |");
    let _ = writeln!(s, "|---|---:|---:|");
    let b = &m.benchmark;
    let _ = writeln!(
        s,
        "| Expected return | {} | {} |",
        pct(d.expected_return, 2),
        pct(b.expected_return, 2)
    );
    let _ = writeln!(s, "| Volatility | {} | {} |", pct(d.vol, 2), pct(b.vol, 2));
    let _ = writeln!(s, "| Sharpe ratio | {:.2} | {:.2} |", d.sharpe, b.sharpe);
    let bt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.2}"));
    let _ = writeln!(
        s,
        "| Backtest Sharpe | {} | {} |",
        bt(dec.report.backtest.map(|x| x.sharpe)),
        bt(b.backtest_sharpe)
    );
    let _ = writeln!(s, "| Tracking error | {} | {} |", pct(d.tracking_error, 2), pct(0.0, 2));
    let _ = writeln!(s, "| Effective N | {:.1} | n/a |\n", d.effective_n);

    let _ = writeln!(s, "## 2. Macro Rationale\n");
    let _ = writeln!(s, "{}\n", m.view.narrative);
    let _ = writeln!(s, "{}\n", dec.rationale);

    let _ = writeln!(s, "## 3. Largest Positions\n");
    let _ = writeln!(s, "| Asset Class | Category | Weight | Risk Contrib. |");
    let _ = writeln!(s, "|---|---|---:|---:|");
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|a, b| w[*b].total_cmp(&w[*a]).then(a.cmp(b)));
    for k in &order {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            name(*k),
            m.inputs.assets[*k].category,
            pct(w[*k], 1),
            pct(rc[*k], 1)
        );
    }
    let _ = writeln!(
        s,
        "| **Total** | | {} | {} |\n",
        pct(w.iter().sum(), 1),
        pct(rc.iter().sum(), 1)
    );

    let _ = writeln!(s, "## 4. Changes Since the Last Review\n");
    match m.previous {
        None => {
            let _ = writeln!(
                s,
                "This is the initial allocation; there is no prior approved portfolio.\n"
            );
        }
        Some(prev) => {
            let mut moves: Vec<(usize, f64)> = (0..w.len())
                .map(|k| (k, w[k] - prev.get(&slugs[k]).copied().unwrap_or(0.0)))
                .filter(|(_, delta)| delta.abs() >= 0.0005)
                .collect();
            moves.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
            let turnover: f64 = (0..w.len())
                .map(|k| (w[k] - prev.get(&slugs[k]).copied().unwrap_or(0.0)).abs())
                .sum::<f64>()
                * 0.5;
            if moves.is_empty() {
                let _ = writeln!(s, "No weight moved by more than 0.05pp since the last review.\n");
            } else {
                let _ = writeln!(s, "One-way turnover versus the last review: {}.\n", pct(turnover, 1));
                let _ = writeln!(s, "| Asset Class | Previous | Recommended | Change |");
                let _ = writeln!(s, "|---|---:|---:|---:|");
                for (k, delta) in moves {
                    let _ = writeln!(
                        s,
                        "| {} | {} | {} | {} |",
                        name(k),
                        pct(w[k] - delta, 1),
                        pct(w[k], 1),
                        signed_pp(delta)
                    );
                }
                s.push('\n');
            }
        }
    }

    let _ = writeln!(s, "## 5. Key Risks to Monitor\n");
    let top = order[0];
    let top_rc = (0..rc.len())
        .max_by(|a, b| rc[*a].total_cmp(&rc[*b]).then(b.cmp(a)))
        .unwrap_or(0);
    let _ = writeln!(
        s,
        "- Risk concentration: {} carries {} of total risk on a {} weight.",
        name(top_rc),
        pct(rc[top_rc], 1),
        pct(w[top_rc], 1)
    );
    let _ = writeln!(s, "- Largest position: {} at {}.", name(top), pct(w[top], 1));
    if let Some(cvar) = dec.report.cvar_95 {
        let _ = writeln!(s, "- Tail loss: historical monthly 95% CVaR of {}.", pct(cvar, 2));
    }
    if let Some(dd) = dec.report.max_drawdown {
        let _ = writeln!(s, "- Drawdown: worst historical peak-to-trough loss of {}.", pct(dd, 1));
    }
    let _ = writeln!(
        s,
        "- Regime shift: the allocation is conditioned on a {} regime; a reclassification warrants an off-cycle review.",
        m.view.regime
    );
    let _ = writeln!(
        s,
        "- Factor tilts versus the benchmark: equity beta {:+.2}, duration {:+.2} years.\n",
        dec.report.equity_beta_tilt + 0.0,
        dec.report.duration_tilt + 0.0
    );

    let _ = writeln!(s, "## 6. Rebalancing Plan\n");
    let _ = writeln!(
        s,
        "Rebalance to target quarterly. Between scheduled dates, an asset whose weight drifts more than \
         {} (relative) from its target triggers an off-cycle rebalance.\n",
        pct(m.drift_trigger, 0)
    );
    let _ = writeln!(s, "| Asset Class | Target | Lower Trigger | Upper Trigger |");
    let _ = writeln!(s, "|---|---:|---:|---:|");
    for k in order.iter().filter(|k| w[**k] > 0.0) {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            name(*k),
            pct(w[*k], 1),
            pct(w[*k] * (1.0 - m.drift_trigger), 1),
            pct(w[*k] * (1.0 + m.drift_trigger), 1)
        );
    }
    s.push('\n');

    let _ = writeln!(s, "## 7. IPS Compliance Statement\n");
    let all_pass = dec.report.is_compliant();
    let _ = writeln!(
        s,
        "{}\n",
        if all_pass {
            "The recommended allocation satisfies every Investment Policy Statement check."
        } else {
            "The recommended allocation does NOT satisfy every Investment Policy Statement check."
        }
    );
    let _ = writeln!(s, "| Check | Value | Limit | Status |");
    let _ = writeln!(s, "|---|---:|---:|---|");
    for f in &dec.report.ips_flags {
        let value = f.value.map_or("n/a".to_string(), |v| pct(v, 2));
        let limit = match f.bound {
            [Some(lo), Some(hi)] => format!("{} to {}", pct(lo, 2), pct(hi, 2)),
            [Some(lo), None] => format!(">= {}", pct(lo, 2)),
            [None, Some(hi)] => format!("<= {}", pct(hi, 2)),
            [None, None] => "none".to_string(),
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            f.check.label(),
            value,
            limit,
            if f.pass { "Pass" } else { "Fail" }
        );
    }
    s
}
