use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DMatrix;

use super::{FundamentalsSnapshot, MarketCapSnapshot, ReturnSeries, Universe};
use crate::error::{Result, SaaError};

/// Input file set for [`load_panel`].
#[derive(Debug, Clone, Default)]
pub struct PanelSources {
    /// One or more wide `date,<slug>,...` return files.
    pub returns: Vec<PathBuf>,
    pub fundamentals: Option<PathBuf>,
    pub caps: Option<PathBuf>,
}

/// Return series for every universe asset on one common monthly calendar.
#[derive(Debug, Clone)]
pub struct AlignedPanel {
    pub universe: Universe,
    pub dates: Vec<NaiveDate>,
    /// T × n matrix of simple monthly returns, columns in universe order.
    pub returns: DMatrix<f64>,
    /// Per-asset fundamentals history sorted by `as_of`.
    pub fundamentals: BTreeMap<String, Vec<FundamentalsSnapshot>>,
    pub caps: Option<MarketCapSnapshot>,
}

impl AlignedPanel {
    pub fn n_rows(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.returns.ncols()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.returns.column(i).iter().copied().collect()
    }

    pub fn series(&self, i: usize) -> ReturnSeries {
        ReturnSeries {
            asset: self.universe.assets()[i].slug.clone(),
            dates: self.dates.clone(),
            returns: self.column(i),
        }
    }

    /// Latest fundamentals row at or before `as_of` (any row when `as_of` is None).
    pub fn latest_fundamentals(&self, slug: &str, as_of: Option<NaiveDate>) -> Option<&FundamentalsSnapshot> {
        let rows = self.fundamentals.get(slug)?;
        rows.iter().rev().find(|r| match (as_of, r.as_of) {
            (Some(limit), Some(d)) => d <= limit,
            _ => true,
        })
    }

    /// Restricts the panel to rows dated on or before `as_of`.
    pub fn truncate_to(&self, as_of: NaiveDate) -> AlignedPanel {
        let keep = self.dates.iter().take_while(|d| **d <= as_of).count();
        AlignedPanel {
            universe: self.universe.clone(),
            dates: self.dates[..keep].to_vec(),
            returns: self.returns.rows(0, keep).into_owned(),
            fundamentals: self.fundamentals.clone(),
            caps: self.caps.clone(),
        }
    }
}

fn parse_date(s: &str, source: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| SaaError::format(source, format!("bad date `{s}`: {e}")))
}

fn parse_opt_f64(s: &str, source: &str, what: &str) -> Result<Option<f64>> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(None);
    }
    let v: f64 = t
        .parse()
        .map_err(|_| SaaError::format(source, format!("bad number `{t}` in {what}")))?;
    if !v.is_finite() {
        return Err(SaaError::Value(format!("{source}: non-finite value in {what}")));
    }
    Ok(Some(v))
}

/// Parses a wide returns file: header `date,<slug>,...`; blank cells are missing.
pub fn parse_returns_csv<R: Read>(reader: R, source: &str) -> Result<Vec<ReturnSeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("date") || headers.len() < 2 {
        return Err(SaaError::format(source, "header must be `date,<slug>,...`"));
    }
    let slugs: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut out: Vec<ReturnSeries> = slugs
        .iter()
        .map(|s| ReturnSeries {
            asset: s.clone(),
            dates: Vec::new(),
            returns: Vec::new(),
        })
        .collect();
    let mut last: Option<NaiveDate> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let date = parse_date(&rec[0], source)?;
        if let Some(prev) = last {
            if date <= prev {
                return Err(SaaError::format(
                    source,
                    format!("dates not strictly increasing at {date}"),
                ));
            }
        }
        last = Some(date);
        for (k, series) in out.iter_mut().enumerate() {
            let cell = rec.get(k + 1).unwrap_or("");
            if let Some(r) = parse_opt_f64(cell, source, &series.asset)? {
                if r <= -1.0 {
                    return Err(SaaError::Value(format!(
                        "{source}: return {r} for `{}` on {date} is not above -1",
                        series.asset
                    )));
                }
                series.dates.push(date);
                series.returns.push(r);
            }
        }
    }
    Ok(out)
}

pub fn parse_fundamentals_csv<R: Read>(reader: R, source: &str) -> Result<Vec<FundamentalsSnapshot>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let slug_col = col("slug").ok_or_else(|| SaaError::format(source, "missing `slug` column"))?;
    let date_col = col("as_of").ok_or_else(|| SaaError::format(source, "missing `as_of` column"))?;
    let named = [
        "cape",
        "trailing_pe",
        "dividend_yield",
        "buyback_yield",
        "earnings_growth",
        "yield_to_maturity",
        "risk_free_rate",
    ];
    let cols: Vec<Option<usize>> = named.iter().map(|n| col(n)).collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |k: usize| -> Result<Option<f64>> {
            match cols[k] {
                Some(c) => parse_opt_f64(rec.get(c).unwrap_or(""), source, named[k]),
                None => Ok(None),
            }
        };
        let snap = FundamentalsSnapshot {
            asset: rec[slug_col].to_string(),
            as_of: Some(parse_date(&rec[date_col], source)?),
            cape: get(0)?,
            trailing_pe: get(1)?,
            dividend_yield: get(2)?,
            buyback_yield: get(3)?,
            earnings_growth: get(4)?,
            yield_to_maturity: get(5)?,
            risk_free_rate: get(6)?,
        };
        for (v, name) in [(snap.cape, "cape"), (snap.trailing_pe, "trailing_pe")] {
            if matches!(v, Some(x) if x <= 0.0) {
                return Err(SaaError::Value(format!(
                    "{source}: {name} must be positive for `{}`",
                    snap.asset
                )));
            }
        }
        out.push(snap);
    }
    Ok(out)
}

/// Parses `date,slug,cap` rows and keeps the latest date.
pub fn parse_caps_csv<R: Read>(reader: R, source: &str) -> Result<MarketCapSnapshot> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut by_date: BTreeMap<NaiveDate, BTreeMap<String, f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(SaaError::format(source, "expected `date,slug,cap`"));
        }
        let date = parse_date(&rec[0], source)?;
        let cap = parse_opt_f64(&rec[2], source, "cap")?.ok_or_else(|| SaaError::format(source, "blank cap"))?;
        if cap < 0.0 {
            return Err(SaaError::Value(format!("{source}: negative cap for `{}`", &rec[1])));
        }
        by_date.entry(date).or_default().insert(rec[1].to_string(), cap);
    }
    let (as_of, caps) = by_date
        .into_iter()
        .next_back()
        .ok_or_else(|| SaaError::format(source, "no rows"))?;
    if !caps.values().any(|&c| c > 0.0) {
        return Err(SaaError::Value(format!("{source}: no strictly positive cap")));
    }
    Ok(MarketCapSnapshot { as_of, caps })
}

/// Truncates every universe series to the common overlapping window.
pub fn align_series(series: &[ReturnSeries], universe: &Universe) -> Result<(Vec<NaiveDate>, DMatrix<f64>)> {
    let mut chosen: Vec<&ReturnSeries> = Vec::with_capacity(universe.len());
    for a in universe.assets() {
        let s = series
            .iter()
            .find(|s| s.asset == a.slug && !s.dates.is_empty())
            .ok_or_else(|| SaaError::MissingAsset {
                slug: a.slug.clone(),
                source_name: "returns".into(),
            })?;
        chosen.push(s);
    }
    let start = chosen.iter().map(|s| s.dates[0]).max().expect("non-empty");
    let end = chosen
        .iter()
        .map(|s| *s.dates.last().expect("non-empty"))
        .min()
        .expect("non-empty");
    if start > end {
        return Err(SaaError::InsufficientData("return series do not overlap".into()));
    }
    let windowed: Vec<BTreeSet<NaiveDate>> = chosen
        .iter()
        .map(|s| s.dates.iter().copied().filter(|d| *d >= start && *d <= end).collect())
        .collect();
    let common: BTreeSet<NaiveDate> = windowed
        .iter()
        .skip(1)
        .fold(windowed[0].clone(), |acc, s| acc.intersection(s).copied().collect());
    for (s, w) in chosen.iter().zip(&windowed) {
        if w.len() != common.len() {
            return Err(SaaError::format(
                "returns",
                format!("`{}` has gaps inside the common window", s.asset),
            ));
        }
    }
    let dates: Vec<NaiveDate> = common.into_iter().collect();
    let mut m = DMatrix::zeros(dates.len(), chosen.len());
    for (j, s) in chosen.iter().enumerate() {
        let mut row = 0;
        for (d, r) in s.dates.iter().zip(&s.returns) {
            if row < dates.len() && *d == dates[row] {
                m[(row, j)] = *r;
                row += 1;
            }
        }
    }
    Ok((dates, m))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| SaaError::io(path, e))
}

pub fn load_panel(sources: &PanelSources, universe: &Universe) -> Result<AlignedPanel> {
    if sources.returns.is_empty() {
        return Err(SaaError::Config("no returns file given".into()));
    }
    let mut series = Vec::new();
    for p in &sources.returns {
        series.extend(parse_returns_csv(open(p)?, &p.display().to_string())?);
    }
    let (dates, returns) = align_series(&series, universe)?;

    let mut fundamentals: BTreeMap<String, Vec<FundamentalsSnapshot>> = BTreeMap::new();
    if let Some(p) = &sources.fundamentals {
        for row in parse_fundamentals_csv(open(p)?, &p.display().to_string())? {
            if universe.index_of(&row.asset).is_some() {
                fundamentals.entry(row.asset.clone()).or_default().push(row);
            }
        }
        for rows in fundamentals.values_mut() {
            rows.sort_by_key(|r| r.as_of);
        }
    }
    let caps = match &sources.caps {
        Some(p) => Some(parse_caps_csv(open(p)?, &p.display().to_string())?),
        None => None,
    };
    Ok(AlignedPanel {
        universe: universe.clone(),
        dates,
        returns,
        fundamentals,
        caps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{AssetCategory, AssetId};

    fn two_asset_universe() -> Universe {
        Universe::new(vec![
            AssetId::new("a", AssetCategory::Equity),
            AssetId::new("b", AssetCategory::Equity),
        ])
        .unwrap()
    }

    #[test]
    fn alignment_takes_the_overlap() {
        let csv = "date,a,b\n2020-01-31,0.01,\n2020-02-29,0.02,0.03\n2020-03-31,0.01,0.02\n2020-04-30,,0.01\n";
        let series = parse_returns_csv(csv.as_bytes(), "t").unwrap();
        let (dates, m) = align_series(&series, &two_asset_universe()).unwrap();
        assert_eq!(
            dates,
            vec![
                NaiveDate::from_ymd_opt(2020, 2, 29).unwrap(),
                NaiveDate::from_ymd_opt(2020, 3, 31).unwrap()
            ]
        );
        assert_eq!(m.nrows(), 2);
        assert_eq!(m[(0, 1)], 0.03);
    }

    #[test]
    fn return_below_minus_one_is_a_value_error() {
        let csv = "date,a\n2020-01-31,-1.5\n";
        assert!(matches!(
            parse_returns_csv(csv.as_bytes(), "t"),
            Err(SaaError::Value(_))
        ));
    }

    #[test]
    fn non_monotone_dates_are_a_format_error() {
        let csv = "date,a\n2020-02-29,0.01\n2020-01-31,0.01\n";
        assert!(matches!(
            parse_returns_csv(csv.as_bytes(), "t"),
            Err(SaaError::Format { .. })
        ));
    }

    #[test]
    fn missing_asset_names_the_slug() {
        let csv = "date,a\n2020-01-31,0.01\n";
        let series = parse_returns_csv(csv.as_bytes(), "t").unwrap();
        match align_series(&series, &two_asset_universe()) {
            Err(SaaError::MissingAsset { slug, .. }) => assert_eq!(slug, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn interior_gap_is_rejected() {
        let csv = "date,a,b\n2020-01-31,0.01,0.01\n2020-02-29,,0.01\n2020-03-31,0.01,0.01\n";
        let series = parse_returns_csv(csv.as_bytes(), "t").unwrap();
        assert!(align_series(&series, &two_asset_universe()).is_err());
    }

    #[test]
    fn fundamentals_blank_means_absent() {
        let csv = "as_of,slug,cape,trailing_pe,dividend_yield,buyback_yield,earnings_growth,yield_to_maturity,risk_free_rate\n2026-02-28,a,25,22,0.013,0.02,0.05,,0.037\n";
        let rows = parse_fundamentals_csv(csv.as_bytes(), "f").unwrap();
        assert_eq!(rows[0].cape, Some(25.0));
        assert_eq!(rows[0].yield_to_maturity, None);
    }

    #[test]
    fn caps_keep_latest_date() {
        let csv = "date,slug,cap\n2025-12-31,a,1\n2026-02-28,a,2\n2026-02-28,b,2\n";
        let snap = parse_caps_csv(csv.as_bytes(), "c").unwrap();
        assert_eq!(snap.caps.len(), 2);
        assert_eq!(snap.weights(&two_asset_universe()).unwrap(), vec![0.5, 0.5]);
    }
}
