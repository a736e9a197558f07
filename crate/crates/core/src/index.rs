//! Derived indices: greenwashing degree, substantive disclosure score,
//! performance pressure, executive-team stability, the J-F media
//! coefficient, and the entropy-weight TOPSIS pollution index.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{mean, sample_var};

/// Checklist scores for one disclosure report.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    /// GRI standard, ISO 14001, Big Four auditor, third-party assurance, awards.
    pub credibility: [u8; 5],
    pub compliance: u8,
    pub safety: u8,
    /// Accidents, violations and petition cases disclosed, 0 to 3.
    pub negative_events: u8,
    pub welfare: u8,
    pub emergency: u8,
    pub three_simultaneities: u8,
    pub cleaner_production: u8,
    /// Wastewater, COD, SO2, CO2, smoke and dust, solid waste; each 0 (none),
    /// 1 (qualitative) or 2 (quantitative).
    pub emissions: [u8; 6],
    /// Waste gas, wastewater, smoke and dust, noise and light, solid waste.
    pub treatments: [u8; 5],
}

impl Rubric {
    pub fn maximal() -> Self {
        Rubric {
            credibility: [1; 5],
            compliance: 1,
            safety: 1,
            negative_events: 3,
            welfare: 1,
            emergency: 1,
            three_simultaneities: 1,
            cleaner_production: 1,
            emissions: [2; 6],
            treatments: [2; 5],
        }
    }

    fn items(&self) -> Vec<(String, u8, u8)> {
        const CRED: [&str; 5] = ["gri", "iso14001", "big4", "third_party", "honors"];
        const EMIS: [&str; 6] = ["wastewater", "cod", "so2", "co2", "smoke_dust", "solid_waste"];
        const TREAT: [&str; 5] = ["waste_gas", "wastewater", "smoke_dust", "noise_light", "solid_waste"];
        let mut v = Vec::with_capacity(23);
        for (n, s) in CRED.iter().zip(self.credibility) {
            v.push((format!("credibility.{n}"), s, 1));
        }
        v.push(("compliance".into(), self.compliance, 1));
        v.push(("safety".into(), self.safety, 1));
        v.push(("negative_events".into(), self.negative_events, 3));
        v.push(("welfare".into(), self.welfare, 1));
        v.push(("emergency".into(), self.emergency, 1));
        v.push(("three_simultaneities".into(), self.three_simultaneities, 1));
        v.push(("cleaner_production".into(), self.cleaner_production, 1));
        for (n, s) in EMIS.iter().zip(self.emissions) {
            v.push((format!("emissions.{n}"), s, 2));
        }
        for (n, s) in TREAT.iter().zip(self.treatments) {
            v.push((format!("treatments.{n}"), s, 2));
        }
        v
    }
}

/// Sum of the checklist items, in `[0, 36]`.
pub fn substantive_score(rubric: &Rubric) -> Result<u32> {
    let mut total = 0u32;
    for (name, score, max) in rubric.items() {
        if score > max {
            return Err(Error::Domain(format!(
                "rubric item `{name}` = {score} exceeds its maximum {max}"
            )));
        }
        total += u32::from(score);
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisclosureRecord {
    pub firm_id: String,
    pub year: i32,
    pub keyword_hits: u64,
    pub total_tokens: u64,
    pub rubric: Rubric,
}

impl DisclosureRecord {
    /// Textual disclosure volume: keyword share of all tokens.
    pub fn textual_volume(&self) -> Result<f64> {
        if self.total_tokens == 0 || self.keyword_hits > self.total_tokens {
            return Err(Error::Domain(format!(
                "{} {}: need 0 <= keyword_hits <= total_tokens and total_tokens > 0",
                self.firm_id, self.year
            )));
        }
        Ok(self.keyword_hits as f64 / self.total_tokens as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenwashScore {
    pub firm_id: String,
    pub year: i32,
    pub mws: f64,
    pub mrs: f64,
    pub gw: f64,
}

/// Per-year z-score of a slice with the n - 1 denominator.
fn zscores(v: &[f64], year: i32, what: &str) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::Degenerate(format!(
            "year {year} has a single record; {what} cannot be standardized"
        )));
    }
    let m = mean(v);
    let sd = sample_var(v).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate(format!("year {year}: {what} has zero variance")));
    }
    Ok(v.iter().map(|x| (x - m) / sd).collect())
}

/// Greenwashing degree: standardized textual volume minus standardized
/// substantive score, both standardized within each year. Output order
/// follows the input.
pub fn greenwash_index(records: &[DisclosureRecord]) -> Result<Vec<GreenwashScore>> {
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_year.entry(r.year).or_default().push(i);
    }
    let mut out: Vec<Option<GreenwashScore>> = vec![None; records.len()];
    for (year, idx) in by_year {
        let mw = idx
            .iter()
            .map(|&i| records[i].textual_volume())
            .collect::<Result<Vec<_>>>()?;
        let mr = idx
            .iter()
            .map(|&i| substantive_score(&records[i].rubric).map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        let mws = zscores(&mw, year, "textual volume")?;
        let mrs = zscores(&mr, year, "substantive score")?;
        for (k, &i) in idx.iter().enumerate() {
            out[i] = Some(GreenwashScore {
                firm_id: records[i].firm_id.clone(),
                year,
                mws: mws[k],
                mrs: mrs[k],
                gw: mws[k] - mrs[k],
            });
        }
    }
    Ok(out.into_iter().flatten().collect())
}

/// Arithmetic mean of the per-analyst net-profit forecasts.
pub fn mean_forecast(forecasts: &[f64]) -> Result<f64> {
    if forecasts.is_empty() {
        return Err(Error::Domain("no analyst forecasts".into()));
    }
    Ok(mean(forecasts))
}

/// Expectation gap scaled by total assets. Attach it to the following year
/// when building the panel (see [`lag_one_period`]).
pub fn performance_pressure(forecast_mean: f64, actual: f64, assets: f64) -> Result<f64> {
    if !(assets > 0.0) {
        return Err(Error::Domain(format!("total assets must be positive, got {assets}")));
    }
    Ok((forecast_mean - actual) / assets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyedValue {
    pub firm_id: String,
    pub year: i32,
    pub value: f64,
}

/// Shifts each value forward one year, so that year t carries the t - 1 value.
pub fn lag_one_period(values: &[KeyedValue]) -> Vec<KeyedValue> {
    values
        .iter()
        .map(|k| KeyedValue {
            firm_id: k.firm_id.clone(),
            year: k.year + 1,
            value: k.value,
        })
        .collect()
}

/// Retention-weighted executive-team stability between two adjacent years:
/// the stayer share of each year's team, weighted by that year's share of
/// the combined headcount.
pub fn team_stability(m_t: u32, m_t1: u32, departures: u32, arrivals: u32) -> Result<f64> {
    if m_t == 0 || m_t1 == 0 || departures > m_t || arrivals > m_t1 {
        return Err(Error::Domain(format!(
            "invalid team counts: M_t={m_t}, M_t+1={m_t1}, departures={departures}, arrivals={arrivals}"
        )));
    }
    if departures == m_t && arrivals == m_t1 {
        // complete turnover sits on the open end of (0, 1]
        return Err(Error::Domain("complete team turnover leaves stability undefined".into()));
    }
    let (mt, mt1) = (f64::from(m_t), f64::from(m_t1));
    let total = mt + mt1;
    Ok((mt - f64::from(departures)) / mt * (mt / total)
        + (mt1 - f64::from(arrivals)) / mt1 * (mt1 / total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub firm_id: String,
    pub year: i32,
    pub member: String,
}

/// Team stability for every firm observed in two consecutive years, keyed by
/// the later year. Departures and arrivals come from set differences of the
/// member lists.
pub fn roster_stability(roster: &[RosterEntry]) -> Result<Vec<KeyedValue>> {
    let mut teams: BTreeMap<(&str, i32), BTreeSet<&str>> = BTreeMap::new();
    for e in roster {
        teams
            .entry((e.firm_id.as_str(), e.year))
            .or_default()
            .insert(e.member.as_str());
    }
    let mut out = Vec::new();
    for (&(firm, year), team) in &teams {
        let Some(next) = teams.get(&(firm, year + 1)) else {
            continue;
        };
        let departures = team.difference(next).count() as u32;
        let arrivals = next.difference(team).count() as u32;
        match team_stability(team.len() as u32, next.len() as u32, departures, arrivals) {
            Ok(value) => out.push(KeyedValue {
                firm_id: firm.to_string(),
                year: year + 1,
                value,
            }),
            Err(e) => log::warn!("{firm} {}: {e}", year + 1),
        }
    }
    Ok(out)
}

/// J-F coefficient from positive (`e`), negative (`c`) and total (`t`)
/// report counts.
pub fn jf_coefficient(positive: u32, negative: u32, total: u32) -> Result<f64> {
    if total == 0 || u64::from(positive) + u64::from(negative) > u64::from(total) {
        return Err(Error::Domain(format!(
            "need total > 0 and positive + negative <= total, got e={positive}, c={negative}, t={total}"
        )));
    }
    let (e, c, t) = (f64::from(positive), f64::from(negative), f64::from(total));
    Ok(if e > c {
        (e * e - e * c) / (t * t)
    } else if e < c {
        (e * c - c * c) / (t * t)
    } else {
        0.0
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopsisResult {
    pub weights: Vec<f64>,
    pub closeness: Vec<f64>,
}

/// Entropy-weight TOPSIS over a city-by-indicator matrix where every
/// indicator is a pollution volume. Higher closeness means more polluted.
pub fn entropy_topsis(matrix: &[Vec<f64>]) -> Result<TopsisResult> {
    let n = matrix.len();
    if n < 2 {
        return Err(Error::Degenerate("entropy-TOPSIS needs at least two cities".into()));
    }
    let k = matrix[0].len();
    if k == 0 || matrix.iter().any(|r| r.len() != k) {
        return Err(Error::Shape("ragged or empty indicator matrix".into()));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain("indicator values must be finite and nonnegative".into()));
    }
    let mut norm = vec![vec![0.0; k]; n];
    let mut divergence = vec![0.0; k];
    for j in 0..k {
        let lo = matrix.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = matrix.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            continue;
        }
        for i in 0..n {
            norm[i][j] = (matrix[i][j] - lo) / (hi - lo);
        }
        let col_sum: f64 = norm.iter().map(|r| r[j]).sum();
        let entropy = -norm
            .iter()
            .map(|r| {
                let p = r[j] / col_sum;
                if p > 0.0 {
                    p * p.ln()
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / (n as f64).ln();
        divergence[j] = 1.0 - entropy;
    }
    let total: f64 = divergence.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("every indicator is constant across cities".into()));
    }
    let weights: Vec<f64> = divergence.iter().map(|d| d / total).collect();
    let closeness = norm
        .iter()
        .map(|row| {
            let (mut best, mut worst) = (0.0, 0.0);
            for j in 0..k {
                // normalized columns span [0, 1], so the ideals are 1 and 0
                let v = weights[j] * row[j];
                best += (v - weights[j]).powi(2);
                worst += v * v;
            }
            let (dp, dm) = (best.sqrt(), worst.sqrt());
            if dp + dm > 0.0 {
                dm / (dp + dm)
            } else {
                0.0
            }
        })
        .collect();
    Ok(TopsisResult { weights, closeness })
}

/// Flat CSV layout of a [`DisclosureRecord`].
#[derive(Debug, Deserialize)]
struct DisclosureRow {
    firm_id: String,
    year: i32,
    keyword_hits: u64,
    total_tokens: u64,
    gri: u8,
    iso14001: u8,
    big4: u8,
    third_party: u8,
    honors: u8,
    compliance: u8,
    safety: u8,
    negative_events: u8,
    welfare: u8,
    emergency: u8,
    three_simultaneities: u8,
    cleaner_production: u8,
    em_wastewater: u8,
    em_cod: u8,
    em_so2: u8,
    em_co2: u8,
    em_smoke_dust: u8,
    em_solid_waste: u8,
    tr_waste_gas: u8,
    tr_wastewater: u8,
    tr_smoke_dust: u8,
    tr_noise_light: u8,
    tr_solid_waste: u8,
}

pub fn read_disclosures<R: Read>(reader: R) -> Result<Vec<DisclosureRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: DisclosureRow = row?;
        out.push(DisclosureRecord {
            firm_id: r.firm_id,
            year: r.year,
            keyword_hits: r.keyword_hits,
            total_tokens: r.total_tokens,
            rubric: Rubric {
                credibility: [r.gri, r.iso14001, r.big4, r.third_party, r.honors],
                compliance: r.compliance,
                safety: r.safety,
                negative_events: r.negative_events,
                welfare: r.welfare,
                emergency: r.emergency,
                three_simultaneities: r.three_simultaneities,
                cleaner_production: r.cleaner_production,
                emissions: [
                    r.em_wastewater,
                    r.em_cod,
                    r.em_so2,
                    r.em_co2,
                    r.em_smoke_dust,
                    r.em_solid_waste,
                ],
                treatments: [
                    r.tr_waste_gas,
                    r.tr_wastewater,
                    r.tr_smoke_dust,
                    r.tr_noise_light,
                    r.tr_solid_waste,
                ],
            },
        });
    }
    Ok(out)
}

/// Reads `city,<indicator>...`; returns city labels and the value matrix.
pub fn read_city_matrix<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut cities = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        cities.push(rec.get(0).unwrap_or_default().to_string());
        let vals = rec
            .iter()
            .skip(1)
            .map(|c| {
                c.parse::<f64>().map_err(|_| Error::Parse {
                    row: i + 1,
                    column: "indicator".into(),
                    message: format!("`{c}` is not numeric"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    Ok((cities, rows))
}

pub fn read_roster<R: Read>(reader: R) -> Result<Vec<RosterEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Clone, Debug, Deserialize)]
pub struct ForecastRow {
    pub firm_id: String,
    pub year: i32,
    pub forecast: f64,
    pub actual: f64,
    pub assets: f64,
}

/// One row per analyst forecast; forecasts are averaged per firm-year and
/// the resulting pressure is attached to the following year.
pub fn pressure_from_forecasts(rows: &[ForecastRow]) -> Result<Vec<KeyedValue>> {
    let mut groups: BTreeMap<(&str, i32), (Vec<f64>, f64, f64)> = BTreeMap::new();
    for r in rows {
        let g = groups
            .entry((r.firm_id.as_str(), r.year))
            .or_insert_with(|| (Vec::new(), r.actual, r.assets));
        g.0.push(r.forecast);
    }
    let current = groups
        .into_iter()
        .map(|((firm, year), (f, actual, assets))| {
            Ok(KeyedValue {
                firm_id: firm.to_string(),
                year,
                value: performance_pressure(mean_forecast(&f)?, actual, assets)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(lag_one_period(&current))
}

pub fn read_forecasts<R: Read>(reader: R) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Clone, Debug, Deserialize)]
pub struct MediaRow {
    pub firm_id: String,
    pub year: i32,
    pub positive: u32,
    pub negative: u32,
    pub total: u32,
}

pub fn read_media<R: Read>(reader: R) -> Result<Vec<MediaRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fills checklist items in declaration order until `score` is reached.
    fn rubric_with_score(score: u8) -> Rubric {
        let mut r = Rubric::default();
        let mut left = score;
        let mut take = |slot: &mut u8, max: u8| {
            *slot = left.min(max);
            left -= *slot;
        };
        for s in r.credibility.iter_mut() {
            take(s, 1);
        }
        take(&mut r.compliance, 1);
        take(&mut r.safety, 1);
        take(&mut r.negative_events, 3);
        take(&mut r.welfare, 1);
        take(&mut r.emergency, 1);
        take(&mut r.three_simultaneities, 1);
        take(&mut r.cleaner_production, 1);
        for s in r.emissions.iter_mut().chain(r.treatments.iter_mut()) {
            take(s, 2);
        }
        r
    }

    fn record(firm: &str, year: i32, mw: f64, score: u8) -> DisclosureRecord {
        DisclosureRecord {
            firm_id: firm.into(),
            year,
            keyword_hits: (mw * 10_000.0).round() as u64,
            total_tokens: 10_000,
            rubric: rubric_with_score(score),
        }
    }

    #[test]
    fn score_bounds() {
        assert_eq!(substantive_score(&Rubric::default()).unwrap(), 0);
        assert_eq!(substantive_score(&Rubric::maximal()).unwrap(), 36);
        let r = Rubric {
            emissions: [2; 6],
            ..Rubric::default()
        };
        assert_eq!(substantive_score(&r).unwrap(), 12);
        let r = Rubric {
            treatments: [2; 5],
            ..Rubric::default()
        };
        assert_eq!(substantive_score(&r).unwrap(), 10);
    }

    #[test]
    fn score_rejects_out_of_range_item() {
        let r = Rubric {
            negative_events: 4,
            ..Rubric::default()
        };
        let err = substantive_score(&r).unwrap_err();
        assert!(err.to_string().contains("negative_events"));
    }

    #[test]
    fn greenwash_equal_zscores_cancel() {
        let recs = vec![
            record("a", 2015, 0.01, 10),
            record("b", 2015, 0.02, 20),
            record("c", 2015, 0.03, 30),
        ];
        for s in greenwash_index(&recs).unwrap() {
            assert!(s.gw.abs() < 1e-12, "{s:?}");
        }
    }

    #[test]
    fn greenwash_two_point_group() {
        let recs = vec![record("a", 2015, 0.01, 30), record("b", 2015, 0.03, 10)];
        let s = greenwash_index(&recs).unwrap();
        let r2 = std::f64::consts::SQRT_2;
        assert!((s[0].gw + r2).abs() < 1e-12);
        assert!((s[1].gw - r2).abs() < 1e-12);
    }

    #[test]
    fn greenwash_degenerate_year() {
        let recs = vec![record("a", 2016, 0.02, 4), record("b", 2016, 0.02, 4)];
        let err = greenwash_index(&recs).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
        assert!(err.to_string().contains("2016"));
        let single = vec![record("a", 2017, 0.02, 4)];
        assert!(greenwash_index(&single).unwrap_err().to_string().contains("2017"));
    }

    #[test]
    fn pressure_examples() {
        assert!((performance_pressure(120.0, 100.0, 1000.0).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(performance_pressure(100.0, 100.0, 1000.0).unwrap(), 0.0);
        assert!((performance_pressure(80.0, 100.0, 1000.0).unwrap() + 0.02).abs() < 1e-15);
        assert!(performance_pressure(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn pressure_is_lagged() {
        let rows = vec![
            ForecastRow { firm_id: "a".into(), year: 2015, forecast: 110.0, actual: 100.0, assets: 1000.0 },
            ForecastRow { firm_id: "a".into(), year: 2015, forecast: 130.0, actual: 100.0, assets: 1000.0 },
        ];
        let p = pressure_from_forecasts(&rows).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].year, 2016);
        assert!((p[0].value - 0.02).abs() < 1e-15);
    }

    #[test]
    fn stability_examples() {
        assert_eq!(team_stability(10, 10, 0, 0).unwrap(), 1.0);
        assert!((team_stability(10, 10, 2, 2).unwrap() - 0.8).abs() < 1e-15);
        assert!((team_stability(10, 20, 0, 10).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(team_stability(0, 10, 0, 0).is_err());
        assert!(team_stability(10, 10, 11, 0).is_err());
    }

    #[test]
    fn stability_from_roster() {
        let mut roster = Vec::new();
        for m in 0..10 {
            roster.push(RosterEntry { firm_id: "a".into(), year: 2015, member: format!("m{m}") });
        }
        for m in 2..12 {
            roster.push(RosterEntry { firm_id: "a".into(), year: 2016, member: format!("m{m}") });
        }
        let s = roster_stability(&roster).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].year, 2016);
        assert!((s[0].value - 0.8).abs() < 1e-15);
    }

    #[test]
    fn jf_cases() {
        assert_eq!(jf_coefficient(5, 5, 10).unwrap(), 0.0);
        assert_eq!(jf_coefficient(10, 0, 10).unwrap(), 1.0);
        assert_eq!(jf_coefficient(0, 10, 10).unwrap(), -1.0);
        assert!(jf_coefficient(0, 0, 0).is_err());
        assert!(jf_coefficient(6, 6, 10).is_err());
    }

    #[test]
    fn topsis_single_indicator() {
        let r = entropy_topsis(&[vec![10.0], vec![20.0]]).unwrap();
        assert_eq!(r.closeness, vec![0.0, 1.0]);
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn topsis_identical_cities() {
        assert!(matches!(
            entropy_topsis(&[vec![3.0, 4.0], vec![3.0, 4.0]]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn topsis_dominant_city() {
        let r = entropy_topsis(&[vec![9.0, 7.0], vec![1.0, 3.0], vec![4.0, 2.0]]).unwrap();
        assert_eq!(r.closeness[0], 1.0);
        assert!(r.closeness.iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn topsis_constant_column_gets_zero_weight() {
        let r = entropy_topsis(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![4.0, 5.0]]).unwrap();
        assert_eq!(r.weights[1], 0.0);
        assert!((r.weights[0] - 1.0).abs() < 1e-15);
    }
}
