//! Firm-year panel storage and the transformations applied before estimation.
//!
//! A [`PanelTable`] is columnar: every variable is a `Vec<f64>` tagged with a
//! [`Role`]. Rows are keyed by `(firm_id, year)` and the key is unique.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Outcome,
    Treatment,
    Control,
    FixedEffectKey,
    Mediator,
    Auxiliary,
}

/// Where a row came from. Generated rows remember the real row they were
/// resampled from so that year labels and lag histories can be recovered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RowOrigin {
    Real,
    Generated { source_firm: String, source_year: i32 },
}

impl RowOrigin {
    pub fn is_generated(&self) -> bool {
        matches!(self, RowOrigin::Generated { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub role: Role,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanelTable {
    firm_ids: Vec<String>,
    years: Vec<i32>,
    columns: Vec<Column>,
    origins: Option<Vec<RowOrigin>>,
}

impl PanelTable {
    pub fn new(firm_ids: Vec<String>, years: Vec<i32>, columns: Vec<Column>) -> Result<Self> {
        let table = PanelTable {
            firm_ids,
            years,
            columns,
            origins: None,
        };
        table.check()?;
        Ok(table)
    }

    fn check(&self) -> Result<()> {
        let n = self.firm_ids.len();
        if self.years.len() != n {
            return Err(Error::Shape(format!(
                "{} firm ids but {} years",
                n,
                self.years.len()
            )));
        }
        let mut seen_names = BTreeMap::new();
        let mut outcome = 0;
        let mut treatment = 0;
        for c in &self.columns {
            if c.values.len() != n {
                return Err(Error::Shape(format!(
                    "column `{}` has {} values, expected {}",
                    c.name,
                    c.values.len(),
                    n
                )));
            }
            if seen_names.insert(c.name.as_str(), ()).is_some() {
                return Err(Error::Schema(format!("column `{}` declared twice", c.name)));
            }
            if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("column `{}`, row {}", c.name, i)));
            }
            match c.role {
                Role::Outcome => outcome += 1,
                Role::Treatment => treatment += 1,
                _ => {}
            }
        }
        if outcome > 1 || treatment > 1 {
            return Err(Error::Schema(
                "at most one outcome and one treatment column may be declared".into(),
            ));
        }
        if let Some(o) = &self.origins {
            if o.len() != n {
                return Err(Error::Shape("origin vector length differs from row count".into()));
            }
        }
        let dups = duplicate_keys(&self.firm_ids, &self.years);
        if !dups.is_empty() {
            return Err(Error::Duplicate(dups));
        }
        Ok(())
    }

    pub fn with_origins(mut self, origins: Vec<RowOrigin>) -> Result<Self> {
        self.origins = Some(origins);
        self.check()?;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.firm_ids.len()
    }

    pub fn firm_ids(&self) -> &[String] {
        &self.firm_ids
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn origins(&self) -> Option<&[RowOrigin]> {
        self.origins.as_deref()
    }

    pub fn origin(&self, row: usize) -> RowOrigin {
        self.origins
            .as_ref()
            .map(|o| o[row].clone())
            .unwrap_or(RowOrigin::Real)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn role(&self, name: &str) -> Result<Role> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.role)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn names_with_role(&self, role: Role) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.role == role)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn outcome_name(&self) -> Option<String> {
        self.names_with_role(Role::Outcome).into_iter().next()
    }

    pub fn treatment_name(&self) -> Option<String> {
        self.names_with_role(Role::Treatment).into_iter().next()
    }

    /// Adds a column, or replaces the values and role of an existing one.
    pub fn set_column(&mut self, name: &str, role: Role, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::Shape(format!(
                "column `{name}` has {} values, expected {}",
                values.len(),
                self.n_rows()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("column `{name}`, row {i}")));
        }
        if matches!(role, Role::Outcome | Role::Treatment) {
            for c in self.columns.iter_mut() {
                if c.role == role && c.name != name {
                    c.role = Role::Auxiliary;
                }
            }
        }
        match self.columns.iter_mut().find(|c| c.name == name) {
            Some(c) => {
                c.role = role;
                c.values = values;
            }
            None => self.columns.push(Column {
                name: name.to_string(),
                role,
                values,
            }),
        }
        Ok(())
    }

    /// Changes the role of an existing column. Promoting a column to outcome
    /// or treatment demotes the previous holder of that role to auxiliary.
    pub fn set_role(&mut self, name: &str, role: Role) -> Result<()> {
        let values = self.column(name)?.to_vec();
        self.set_column(name, role, values)
    }

    /// Keeps the given rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> PanelTable {
        PanelTable {
            firm_ids: rows.iter().map(|&i| self.firm_ids[i].clone()).collect(),
            years: rows.iter().map(|&i| self.years[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    role: c.role,
                    values: rows.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
            origins: self
                .origins
                .as_ref()
                .map(|o| rows.iter().map(|&i| o[i].clone()).collect()),
        }
    }

    pub fn schema(&self) -> Schema {
        Schema {
            firm_column: "firm_id".into(),
            year_column: "year".into(),
            roles: self
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.role))
                .collect(),
        }
    }

    /// Writes the normalized CSV: `firm_id,year,<columns...>` followed by
    /// provenance columns when the table carries row origins.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["firm_id".to_string(), "year".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        if self.origins.is_some() {
            header.extend(["provenance", "source_firm", "source_year"].map(String::from));
        }
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.firm_ids[i].clone(), self.years[i].to_string()];
            rec.extend(self.columns.iter().map(|c| format_value(c.values[i])));
            if let Some(o) = &self.origins {
                match &o[i] {
                    RowOrigin::Real => rec.extend(["real".into(), String::new(), String::new()]),
                    RowOrigin::Generated {
                        source_firm,
                        source_year,
                    } => rec.extend([
                        "generated".into(),
                        source_firm.clone(),
                        source_year.to_string(),
                    ]),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_value(v: f64) -> String {
    format!("{v}")
}

fn duplicate_keys(firms: &[String], years: &[i32]) -> Vec<(String, i32)> {
    let mut seen: HashMap<(&str, i32), usize> = HashMap::new();
    for (f, &y) in firms.iter().zip(years) {
        *seen.entry((f.as_str(), y)).or_default() += 1;
    }
    let mut dups: Vec<(String, i32)> = seen
        .into_iter()
        .filter(|(_, c)| *c > 1)
        .map(|((f, y), _)| (f.to_string(), y))
        .collect();
    dups.sort();
    dups
}

/// Column-to-role mapping read from a JSON schema file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default = "default_firm_column")]
    pub firm_column: String,
    #[serde(default = "default_year_column")]
    pub year_column: String,
    pub roles: BTreeMap<String, Role>,
}

fn default_firm_column() -> String {
    "firm_id".into()
}

fn default_year_column() -> String {
    "year".into()
}

impl Schema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub table: PanelTable,
    pub report: IngestReport,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan" | ".")
}

pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<Ingested> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(f, schema)
}

/// Reads a headered CSV. Rows with a missing cell in any schema column are
/// dropped and counted; a non-numeric cell is a hard parse error.
pub fn ingest_reader<R: Read>(reader: R, schema: &Schema) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let firm_idx = find(&schema.firm_column)?;
    let year_idx = find(&schema.year_column)?;
    // header order, restricted to schema columns
    let mut cols: Vec<(usize, String, Role)> = Vec::new();
    for (name, role) in &schema.roles {
        cols.push((find(name)?, name.clone(), *role));
    }
    cols.sort_by_key(|c| c.0);
    let prov_idx = headers.iter().position(|h| h == "provenance");
    let src_firm_idx = headers.iter().position(|h| h == "source_firm");
    let src_year_idx = headers.iter().position(|h| h == "source_year");

    let mut firm_ids = Vec::new();
    let mut years = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); cols.len()];
    let mut origins = Vec::new();
    let mut report = IngestReport::default();

    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = row + 1;
        report.rows_read += 1;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let firm = cell(firm_idx);
        let year_cell = cell(year_idx);
        let mut missing = is_missing(firm) || is_missing(year_cell);
        let mut parsed = Vec::with_capacity(cols.len());
        for (i, name, _) in &cols {
            let c = cell(*i);
            if is_missing(c) {
                missing = true;
                continue;
            }
            let v: f64 = c.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("`{c}` is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: format!("`{c}` is not finite"),
                });
            }
            parsed.push(v);
        }
        if missing {
            report.rows_dropped += 1;
            continue;
        }
        let year: i32 = year_cell.parse().map_err(|_| Error::Parse {
            row,
            column: schema.year_column.clone(),
            message: format!("`{year_cell}` is not an integer year"),
        })?;
        firm_ids.push(firm.to_string());
        years.push(year);
        for (slot, v) in values.iter_mut().zip(parsed) {
            slot.push(v);
        }
        if let Some(p) = prov_idx {
            let origin = match cell(p) {
                "generated" => {
                    let sf = src_firm_idx.map(cell).unwrap_or("");
                    let sy = src_year_idx.map(cell).unwrap_or("");
                    let source_year = sy.parse().map_err(|_| Error::Parse {
                        row,
                        column: "source_year".into(),
                        message: format!("`{sy}` is not an integer year"),
                    })?;
                    RowOrigin::Generated {
                        source_firm: sf.to_string(),
                        source_year,
                    }
                }
                _ => RowOrigin::Real,
            };
            origins.push(origin);
        }
    }
    if report.rows_dropped > 0 {
        report.warnings.push(format!(
            "{} row(s) dropped for missing values",
            report.rows_dropped
        ));
    }
    let columns = cols
        .into_iter()
        .zip(values)
        .map(|((_, name, role), values)| Column { name, role, values })
        .collect();
    let mut table = PanelTable::new(firm_ids, years, columns)?;
    if prov_idx.is_some() {
        table = table.with_origins(origins)?;
    }
    Ok(Ingested { table, report })
}

fn rank_ceil(x: f64) -> usize {
    // guards against 0.99 * 200 landing a hair above an integer
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Symmetric nearest-rank bounds: the lower bound is the `ceil(lower*n)`-th
/// order statistic and the upper bound mirrors it from the top, so that
/// `1..=200` at 1%/99% gives `(2, 199)`.
pub fn nearest_rank_bounds(sorted: &[f64], lower: f64, upper: f64) -> (f64, f64) {
    let n = sorted.len();
    let lo_rank = rank_ceil(lower * n as f64).max(1).min(n);
    let hi_from_top = rank_ceil((1.0 - upper) * n as f64).max(1).min(n);
    (sorted[lo_rank - 1], sorted[n - hi_from_top])
}

/// Clamps each named column to its pooled empirical quantile range.
pub fn winsorize(
    table: &PanelTable,
    lower_pct: f64,
    upper_pct: f64,
    columns: &[String],
) -> Result<PanelTable> {
    if !(0.0..=1.0).contains(&lower_pct) || !(0.0..=1.0).contains(&upper_pct) || lower_pct >= upper_pct
    {
        return Err(Error::Domain(format!(
            "winsorization percentiles must satisfy 0 <= lower < upper <= 1, got {lower_pct}, {upper_pct}"
        )));
    }
    let mut out = table.clone();
    for name in columns {
        let col = out
            .columns
            .iter_mut()
            .find(|c| &c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
        if col.values.is_empty() {
            continue;
        }
        let mut sorted = col.values.clone();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = nearest_rank_bounds(&sorted, lower_pct, upper_pct);
        for v in col.values.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentVariant {
    Top2to10OverTop1,
    Top2to5OverTop1,
    SecondOverFirst,
}

impl TreatmentVariant {
    pub fn label(&self) -> &'static str {
        match self {
            TreatmentVariant::Top2to10OverTop1 => "top2to10_over_top1",
            TreatmentVariant::Top2to5OverTop1 => "top2to5_over_top1",
            TreatmentVariant::SecondOverFirst => "second_over_first",
        }
    }
}

/// Equity-balance ratio for one firm-year. `stakes` holds the largest
/// shareholdings in descending order (missing tail entries count as zero).
pub fn treatment_ratio(stakes: &[f64], variant: TreatmentVariant) -> Result<f64> {
    let largest = *stakes
        .first()
        .ok_or_else(|| Error::Domain("no shareholdings given".into()))?;
    if !(largest > 0.0) {
        return Err(Error::Domain(format!(
            "largest shareholding must be positive, got {largest}"
        )));
    }
    if stakes.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Domain("shareholdings must be nonnegative".into()));
    }
    if stakes.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Domain("shareholdings must be ordered descending".into()));
    }
    let upto = |k: usize| stakes.iter().skip(1).take(k - 1).sum::<f64>();
    let others = match variant {
        TreatmentVariant::Top2to10OverTop1 => upto(10),
        TreatmentVariant::Top2to5OverTop1 => upto(5),
        TreatmentVariant::SecondOverFirst => upto(2),
    };
    Ok(others / largest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivedTreatment {
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Computes the treatment column. Ratios at or above one are returned as-is
/// and flagged, since they indicate inconsistent shareholding data.
pub fn derive_treatment(
    shareholdings: &[Vec<f64>],
    variant: TreatmentVariant,
) -> Result<DerivedTreatment> {
    let mut values = Vec::with_capacity(shareholdings.len());
    let mut warnings = Vec::new();
    for (i, stakes) in shareholdings.iter().enumerate() {
        let r = treatment_ratio(stakes, variant)?;
        if r >= 1.0 {
            let msg = format!("row {i}: {} ratio {r} is outside [0, 1)", variant.label());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        values.push(r);
    }
    Ok(DerivedTreatment { values, warnings })
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnOrigin {
    Linear(String),
    Square(String),
    Dummy { key: String, level: f64 },
}

#[derive(Clone, Debug)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub columns: Vec<ColumnOrigin>,
}

impl Design {
    pub fn names(&self) -> Vec<String> {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnOrigin::Linear(n) => n.clone(),
                ColumnOrigin::Square(n) => format!("{n}^2"),
                ColumnOrigin::Dummy { key, level } => format!("{key}={}", format_value(*level)),
            })
            .collect()
    }
}

pub fn is_binary(values: &[f64]) -> bool {
    values.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Sorted distinct values of a key column.
pub fn levels(values: &[f64]) -> Vec<f64> {
    let mut l = values.to_vec();
    l.sort_by(f64::total_cmp);
    l.dedup();
    l
}

/// Design matrix from the table's control-role columns.
pub fn expand_design(table: &PanelTable, add_quadratics: bool, fe_keys: &[String]) -> Result<Design> {
    let controls = table.names_with_role(Role::Control);
    expand_design_with(table, &controls, add_quadratics, fe_keys)
}

/// Outcome, treatment and control names, falling back to the table's roles
/// for any that are not given. Every name must exist.
pub fn resolve_roles(
    table: &PanelTable,
    outcome: Option<&str>,
    treatment: Option<&str>,
    controls: Option<&[String]>,
) -> Result<(String, String, Vec<String>)> {
    let outcome = match outcome {
        Some(o) => o.to_string(),
        None => table.outcome_name().ok_or_else(|| Error::Schema("table has no outcome column".into()))?,
    };
    let treatment = match treatment {
        Some(t) => t.to_string(),
        None => table.treatment_name().ok_or_else(|| Error::Schema("table has no treatment column".into()))?,
    };
    let controls = controls.map(<[String]>::to_vec).unwrap_or_else(|| table.names_with_role(Role::Control));
    for name in [&outcome, &treatment].into_iter().chain(&controls) {
        table.column(name)?;
    }
    Ok((outcome, treatment, controls))
}

/// Fixed-effect key that refers to the panel's year index unless the table
/// has a column of that name.
pub const YEAR_KEY: &str = "year";

/// Builds `[controls | squares of continuous controls | FE dummies]`. Each
/// fixed-effect key is one-hot encoded with its smallest level dropped.
pub fn expand_design_with(
    table: &PanelTable,
    controls: &[String],
    add_quadratics: bool,
    fe_keys: &[String],
) -> Result<Design> {
    let n = table.n_rows();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut origins = Vec::new();
    let mut squares = Vec::new();
    for name in controls {
        let v = table.column(name)?;
        cols.push(v.to_vec());
        origins.push(ColumnOrigin::Linear(name.clone()));
        if add_quadratics && !is_binary(v) {
            squares.push((name.clone(), v.iter().map(|x| x * x).collect::<Vec<_>>()));
        }
    }
    for (name, sq) in squares {
        cols.push(sq);
        origins.push(ColumnOrigin::Square(name));
    }
    for key in fe_keys {
        let year_values: Vec<f64>;
        let v: &[f64] = if key == YEAR_KEY && !table.has_column(key) {
            year_values = table.years.iter().map(|&y| f64::from(y)).collect();
            &year_values
        } else {
            if table.role(key)? != Role::FixedEffectKey {
                return Err(Error::Schema(format!(
                    "`{key}` is not declared as a fixed_effect_key"
                )));
            }
            table.column(key)?
        };
        for level in levels(v).into_iter().skip(1) {
            cols.push(v.iter().map(|&x| if x == level { 1.0 } else { 0.0 }).collect());
            origins.push(ColumnOrigin::Dummy {
                key: key.clone(),
                level,
            });
        }
    }
    let matrix = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    Ok(Design {
        matrix,
        columns: origins,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance (n - 1 denominator); zero for fewer than two values.
pub fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Descriptive statistics for every column.
pub fn describe(table: &PanelTable) -> Vec<ColumnSummary> {
    table
        .columns
        .iter()
        .map(|c| {
            let v = &c.values;
            ColumnSummary {
                name: c.name.clone(),
                n: v.len(),
                mean: mean(v),
                median: median(v),
                sd: sample_var(v).sqrt(),
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedEffects {
    pub firm: bool,
    pub year: bool,
}

impl FixedEffects {
    pub const TWO_WAY: FixedEffects = FixedEffects {
        firm: true,
        year: true,
    };
}

fn group_index<K: std::hash::Hash + Eq + Clone>(keys: &[K]) -> (Vec<usize>, usize) {
    let mut map: HashMap<K, usize> = HashMap::new();
    let idx = keys
        .iter()
        .map(|k| {
            let next = map.len();
            *map.entry(k.clone()).or_insert(next)
        })
        .collect();
    (idx, map.len())
}

fn demean_groups(x: &mut [f64], groups: &[usize], n_groups: usize) -> f64 {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (v, &g) in x.iter().zip(groups) {
        sums[g] += v;
        counts[g] += 1;
    }
    let mut max_shift = 0.0f64;
    for (v, &g) in x.iter_mut().zip(groups) {
        let m = sums[g] / counts[g] as f64;
        max_shift = max_shift.max(m.abs());
        *v -= m;
    }
    max_shift
}

/// Within transformation for firm and/or year effects, by alternating
/// projections so that unbalanced panels are handled exactly. The grand mean
/// is added back so that the intercept of a regression on transformed data
/// is the overall constant.
pub fn within_transform(values: &[f64], firms: &[String], years: &[i32], fe: FixedEffects) -> Vec<f64> {
    let grand = mean(values);
    let mut x: Vec<f64> = values.iter().map(|v| v - grand).collect();
    let (fg, nf) = group_index(firms);
    let (yg, ny) = group_index(years);
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    for _ in 0..10_000 {
        let mut shift = 0.0f64;
        if fe.firm {
            shift = shift.max(demean_groups(&mut x, &fg, nf));
        }
        if fe.year {
            shift = shift.max(demean_groups(&mut x, &yg, ny));
        }
        if !(fe.firm && fe.year) || shift <= 1e-14 * scale {
            break;
        }
    }
    x.iter().map(|v| v + grand).collect()
}
