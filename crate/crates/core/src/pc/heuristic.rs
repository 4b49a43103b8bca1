use std::collections::BTreeMap;

use super::{MethodId, PcInputs, PcProposal};
use crate::error::{Result, SaaError};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicKind {
    EqualWeight,
    MarketCap,
    InverseVol,
    InverseVariance,
}

pub fn heuristic_weights(kind: HeuristicKind, inputs: &PcInputs) -> Result<PcProposal> {
    let n = inputs.n();
    let vols = inputs.vols();
    let (method, raw, why) = match kind {
        HeuristicKind::EqualWeight => (MethodId::EqualWeight, vec![1.0; n], "Equal weight across the universe."),
        HeuristicKind::MarketCap => {
            let caps = inputs
                .caps
                .clone()
                .ok_or_else(|| SaaError::Value("market-cap weights require a cap snapshot".into()))?;
            (
                MethodId::MarketCap,
                caps,
                "Weights proportional to market capitalization.",
            )
        }
        HeuristicKind::InverseVol => (
            MethodId::InverseVol,
            inverse_power(&vols, 1)?,
            "Weights proportional to inverse volatility.",
        ),
        HeuristicKind::InverseVariance => (
            MethodId::InverseVariance,
            inverse_power(&vols, 2)?,
            "Weights proportional to inverse variance.",
        ),
    };
    let total: f64 = raw.iter().sum();
    if total <= 0.0 || raw.iter().any(|x| *x < 0.0) {
        return Err(SaaError::Value(format!(
            "{method}: raw scores are not a positive vector"
        )));
    }
    let w = raw.iter().map(|x| x / total).collect();
    PcProposal::build(method, inputs, w, why, BTreeMap::new())
}

fn inverse_power(vols: &[f64], p: i32) -> Result<Vec<f64>> {
    if vols.iter().any(|v| *v <= 0.0) {
        return Err(SaaError::Domain(
            "inverse-vol weights need strictly positive vols".into(),
        ));
    }
    Ok(vols.iter().map(|v| v.powi(-p)).collect())
}

/// Equal weight over the non-cash assets (all assets if there is no cash).
pub(crate) fn ex_cash_equal_weight(inputs: &PcInputs) -> Vec<f64> {
    let cash = inputs.cash_index();
    let n = inputs.n();
    let risky = n - usize::from(cash.is_some() && n > 1);
    (0..n)
        .map(|i| {
            if Some(i) == cash && n > 1 {
                0.0
            } else {
                1.0 / risky as f64
            }
        })
        .collect()
}

/// Scales `base` down to the vol target and parks the remainder in cash.
pub fn volatility_targeting(inputs: &PcInputs, base: &[f64]) -> Result<PcProposal> {
    let vol = linalg::quad_form(&inputs.sigma, base).max(0.0).sqrt();
    let s = if vol > 0.0 {
        (inputs.target_vol / vol).min(1.0)
    } else {
        1.0
    };
    let mut details = BTreeMap::from([("base_vol".to_string(), vol), ("scale".to_string(), s)]);
    let Some(cash) = inputs.cash_index() else {
        details.insert("scale".into(), 1.0);
        return PcProposal::build(
            MethodId::VolTargeting,
            inputs,
            base.to_vec(),
            "No cash asset in the universe; base portfolio kept unscaled.",
            details,
        );
    };
    let mut w: Vec<f64> = base.iter().map(|x| s * x).collect();
    w[cash] += 1.0 - s;
    let why = format!(
        "Base vol {:.2}% against a {:.2}% target: {:.1}% in the base portfolio, the rest in cash.",
        vol * 100.0,
        inputs.target_vol * 100.0,
        s * 100.0
    );
    PcProposal::build(MethodId::VolTargeting, inputs, w, why, details)
}

/// Average-correlation ranks scaled by inverse volatility.
pub fn min_correlation(inputs: &PcInputs) -> Result<PcProposal> {
    let n = inputs.n();
    let vols = inputs.vols();
    if vols.iter().any(|v| *v <= 0.0) {
        return Err(SaaError::Domain("min-correlation needs positive vols".into()));
    }
    let corr = linalg::correlation_from_covariance(&inputs.sigma);
    let avg: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                return 0.0;
            }
            (0..n).filter(|&j| j != i).map(|j| corr[(i, j)]).sum::<f64>() / (n - 1) as f64
        })
        .collect();
    // Highest rank to the least correlated asset.
    let neg: Vec<f64> = avg.iter().map(|a| -a).collect();
    let ranks = linalg::average_ranks(&neg);
    let total: f64 = ranks.iter().sum();
    let raw: Vec<f64> = ranks.iter().zip(&vols).map(|(r, v)| r / total / v).collect();
    let w = linalg::normalize(raw);
    PcProposal::build(
        MethodId::MinCorrelation,
        inputs,
        w,
        "Least-correlated assets ranked highest, scaled by inverse volatility.",
        BTreeMap::new(),
    )
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(usize),
    Merge(Box<Node>, Box<Node>),
}

impl Node {
    fn min_index(&self) -> usize {
        match self {
            Node::Leaf(i) => *i,
            Node::Merge(a, b) => a.min_index().min(b.min_index()),
        }
    }

    fn leaves(&self, out: &mut Vec<usize>) {
        match self {
            Node::Leaf(i) => out.push(*i),
            Node::Merge(a, b) => {
                a.leaves(out);
                b.leaves(out);
            }
        }
    }
}

/// Dendrogram leaf order from single linkage on √((1−ρ)/2). Ties go to the
/// pair with the lowest member indices; the child holding the lower index
/// is placed first.
pub fn hrp_leaf_order(corr: &nalgebra::DMatrix<f64>) -> Vec<usize> {
    let n = corr.nrows();
    let dist = |i: usize, j: usize| ((1.0 - corr[(i, j)]).max(0.0) / 2.0).sqrt();
    let mut clusters: Vec<(Node, Vec<usize>)> = (0..n).map(|i| (Node::Leaf(i), vec![i])).collect();
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let d = clusters[a]
                    .1
                    .iter()
                    .flat_map(|&i| clusters[b].1.iter().map(move |&j| dist(i, j)))
                    .fold(f64::INFINITY, f64::min);
                let ka = clusters[a].0.min_index();
                let kb = clusters[b].0.min_index();
                let key = (d, ka.min(kb), ka.max(kb));
                let better = match best {
                    None => true,
                    Some((bd, l1, l2, _, _)) => key.0 < bd || (key.0 == bd && (key.1, key.2) < (l1, l2)),
                };
                if better {
                    best = Some((key.0, key.1, key.2, a, b));
                }
            }
        }
        let (_, _, _, a, b) = best.expect("at least two clusters");
        let (nb, mb) = clusters.remove(b);
        let (na, ma) = clusters.remove(a);
        let (first, second) = if na.min_index() <= nb.min_index() {
            (na, nb)
        } else {
            (nb, na)
        };
        let mut members = ma;
        members.extend(mb);
        clusters.push((Node::Merge(Box::new(first), Box::new(second)), members));
    }
    let mut order = Vec::with_capacity(n);
    if let Some((root, _)) = clusters.pop() {
        root.leaves(&mut order);
    }
    order
}

fn cluster_variance(sigma: &nalgebra::DMatrix<f64>, members: &[usize]) -> f64 {
    let ivp: Vec<f64> = members.iter().map(|&i| 1.0 / sigma[(i, i)]).collect();
    let s: f64 = ivp.iter().sum();
    let mut v = 0.0;
    for (a, &i) in members.iter().enumerate() {
        for (b, &j) in members.iter().enumerate() {
            v += ivp[a] / s * ivp[b] / s * sigma[(i, j)];
        }
    }
    v
}

pub fn hrp(inputs: &PcInputs) -> Result<PcProposal> {
    let n = inputs.n();
    if (0..n).any(|i| inputs.sigma[(i, i)] <= 0.0) {
        return Err(SaaError::Domain("HRP needs positive variances".into()));
    }
    let corr = linalg::correlation_from_covariance(&inputs.sigma);
    let order = hrp_leaf_order(&corr);
    let mut w = vec![1.0; n];
    let mut stack: Vec<Vec<usize>> = vec![order.clone()];
    while let Some(items) = stack.pop() {
        if items.len() < 2 {
            continue;
        }
        let (left, right) = items.split_at(items.len() / 2);
        let vl = cluster_variance(&inputs.sigma, left);
        let vr = cluster_variance(&inputs.sigma, right);
        let alpha = 1.0 - vl / (vl + vr);
        for &i in left {
            w[i] *= alpha;
        }
        for &i in right {
            w[i] *= 1.0 - alpha;
        }
        stack.push(left.to_vec());
        stack.push(right.to_vec());
    }
    let details = order
        .iter()
        .enumerate()
        .map(|(pos, i)| (format!("leaf_{pos:02}"), *i as f64))
        .collect();
    PcProposal::build(
        MethodId::Hrp,
        inputs,
        w,
        "Single-linkage tree on correlation distance, recursive inverse-variance bisection.",
        details,
    )
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::market::{AssetCategory, AssetId};
    use nalgebra::DMatrix;

    #[test]
    fn inverse_vol_two_assets() {
        let inp = inputs(&[0.05, 0.05], diag(&[0.1, 0.2]), no_scenarios(2));
        let p = heuristic_weights(HeuristicKind::InverseVol, &inp).unwrap();
        assert!((p.weights[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equal_vols_collapse_to_equal_weight() {
        let inp = inputs(&[0.05; 3], diag(&[0.15; 3]), no_scenarios(3));
        for k in [
            HeuristicKind::EqualWeight,
            HeuristicKind::InverseVol,
            HeuristicKind::InverseVariance,
        ] {
            let p = heuristic_weights(k, &inp).unwrap();
            assert!(p.weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn vol_targeting_halves_exposure() {
        let mut inp = inputs(&[0.06, 0.02], diag(&[0.16, 0.0]), no_scenarios(2));
        inp.assets[1] = AssetId::new("cash", AssetCategory::Cash);
        inp.target_vol = 0.08;
        let p = volatility_targeting(&inp, &[1.0, 0.0]).unwrap();
        assert!((p.weights[0] - 0.5).abs() < 1e-12 && (p.weights[1] - 0.5).abs() < 1e-12);
        inp.target_vol = 0.32;
        let p = volatility_targeting(&inp, &[1.0, 0.0]).unwrap();
        assert_eq!(p.weights, vec![1.0, 0.0]);
    }

    #[test]
    fn min_correlation_prefers_the_diversifier() {
        let v = 0.2 * 0.2;
        let s = DMatrix::from_row_slice(3, 3, &[v, 0.9 * v, 0.0, 0.9 * v, v, 0.0, 0.0, 0.0, v]);
        let p = min_correlation(&inputs(&[0.05; 3], s, no_scenarios(3))).unwrap();
        assert!(p.weights[2] > p.weights[0] && p.weights[2] > p.weights[1]);
        let eq = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.04 } else { 0.01 });
        let p = min_correlation(&inputs(&[0.05; 3], eq, no_scenarios(3))).unwrap();
        assert!(p.weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn hrp_two_assets_is_inverse_variance() {
        let p = hrp(&inputs(&[0.05; 2], diag(&[0.1, 0.2]), no_scenarios(2))).unwrap();
        assert!((p.weights[0] - 0.8).abs() < 1e-15);
    }
}
