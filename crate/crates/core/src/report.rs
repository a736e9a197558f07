//! Estimate tables, Markdown reports and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::BaselineEstimate;
use crate::dml::mediation::MediationResult;
use crate::dml::{stars, DmlEstimate};
use crate::error::{Error, Result};

/// Columns every estimate CSV must carry, in order.
pub const REQUIRED_COLUMNS: [&str; 8] = ["label", "theta", "se", "stars", "ci_low", "ci_high", "n", "folds"];
/// Columns that may follow the required ones.
pub const OPTIONAL_COLUMNS: [&str; 3] = ["variable", "controls", "fixed_effects"];

/// One estimate in the shared row schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub label: String,
    pub theta: f64,
    pub se: f64,
    pub stars: String,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    /// Cross-fitting folds; empty for estimators without sample splitting.
    pub folds: Option<usize>,
    /// Name of the regressor the coefficient belongs to.
    pub variable: Option<String>,
    pub controls: Option<bool>,
    /// Fixed-effect keys joined by `+`.
    pub fixed_effects: Option<String>,
}

impl EstimateRow {
    pub fn from_dml(label: &str, variable: &str, est: &DmlEstimate, controls: bool, fe: &[String]) -> Self {
        EstimateRow {
            label: label.to_string(),
            theta: est.theta,
            se: est.se,
            stars: est.stars().to_string(),
            ci_low: est.ci95.0,
            ci_high: est.ci95.1,
            n: est.n,
            folds: Some(est.folds),
            variable: Some(variable.to_string()),
            controls: Some(controls),
            fixed_effects: Some(fe.join("+")),
        }
    }

    pub fn from_baseline(label: &str, variable: &str, est: &BaselineEstimate, fe: &[String]) -> Self {
        EstimateRow {
            label: label.to_string(),
            theta: est.effect,
            se: est.se,
            stars: est.stars().to_string(),
            ci_low: est.ci95.0,
            ci_high: est.ci95.1,
            n: est.n,
            folds: None,
            variable: Some(variable.to_string()),
            controls: Some(true),
            fixed_effects: Some(fe.join("+")),
        }
    }

    pub fn from_mediation(label: &str, res: &MediationResult, controls: bool, fe: &[String]) -> Self {
        EstimateRow {
            label: label.to_string(),
            theta: res.coefficient,
            se: res.se,
            stars: stars(res.p_value).to_string(),
            ci_low: res.ci95.0,
            ci_high: res.ci95.1,
            n: res.n,
            folds: None,
            variable: Some(res.treatment.clone()),
            controls: Some(controls),
            fixed_effects: Some(fe.join("+")),
        }
    }

    /// Coefficient with stars and the standard error in parentheses.
    pub fn cell(&self) -> String {
        format_cell(self.theta, self.se, &self.stars)
    }
}

pub fn format_cell(theta: f64, se: f64, stars: &str) -> String {
    format!("{theta:.4}{stars}({se:.4})")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

pub fn write_estimates<W: Write>(writer: W, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.extend(OPTIONAL_COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.theta.to_string(),
            r.se.to_string(),
            r.stars.clone(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.n.to_string(),
            opt(&r.folds),
            opt(&r.variable),
            opt(&r.controls),
            opt(&r.fixed_effects),
        ])?;
    }
    w.flush().map_err(|e| Error::Render(e.to_string()))?;
    Ok(())
}

pub fn save_estimates(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_estimates(&mut buf, rows)?;
    write_atomic(path, &buf)
}

fn parse_field<T: std::str::FromStr>(raw: &str, column: &str, row: usize) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Render(format!("column `{column}` row {row}: cannot parse `{raw}`")))
}

fn parse_optional<T: std::str::FromStr>(raw: Option<&str>, column: &str, row: usize) -> Result<Option<T>> {
    match raw.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => parse_field(s, column, row).map(Some),
    }
}

/// Reads estimate rows, naming the offending column on any schema problem.
pub fn read_estimates<R: std::io::Read>(reader: R) -> Result<Vec<EstimateRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for name in &header {
        if !REQUIRED_COLUMNS.contains(&name.as_str()) && !OPTIONAL_COLUMNS.contains(&name.as_str()) {
            return Err(Error::Render(format!("unexpected column `{name}` in estimate table")));
        }
    }
    let mut idx = BTreeMap::new();
    for name in REQUIRED_COLUMNS {
        let pos = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Render(format!("estimate table is missing column `{name}`")))?;
        idx.insert(name, pos);
    }
    for name in OPTIONAL_COLUMNS {
        if let Some(pos) = header.iter().position(|h| h == name) {
            idx.insert(name, pos);
        }
    }
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: &str| idx.get(c).and_then(|&p| rec.get(p));
        let req = |c: &str| get(c).ok_or_else(|| Error::Render(format!("row {r} has no value for column `{c}`")));
        rows.push(EstimateRow {
            label: req("label")?.to_string(),
            theta: parse_field(req("theta")?, "theta", r)?,
            se: parse_field(req("se")?, "se", r)?,
            stars: req("stars")?.to_string(),
            ci_low: parse_field(req("ci_low")?, "ci_low", r)?,
            ci_high: parse_field(req("ci_high")?, "ci_high", r)?,
            n: parse_field(req("n")?, "n", r)?,
            folds: parse_optional(Some(req("folds")?), "folds", r)?,
            variable: get("variable").filter(|s| !s.is_empty()).map(str::to_string),
            controls: parse_optional(get("controls"), "controls", r)?,
            fixed_effects: get("fixed_effects").filter(|s| !s.is_empty()).map(str::to_string),
        });
    }
    Ok(rows)
}

pub fn load_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_estimates(f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Main,
    Robustness,
    Heterogeneity,
    Temporal,
    Mediation,
}

impl Template {
    pub fn title(self) -> &'static str {
        match self {
            Template::Main => "Baseline estimates",
            Template::Robustness => "Robustness checks",
            Template::Heterogeneity => "Heterogeneity",
            Template::Temporal => "Temporal effects",
            Template::Mediation => "Mechanism tests",
        }
    }
}

impl std::str::FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown report template `{s}`")))
    }
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Markdown table with one column per estimate label and one coefficient
/// row per regressor, followed by control and fixed-effect indicator rows
/// and observation counts.
pub fn render_report(rows: &[EstimateRow], template: Template) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Render("no estimates to render".into()));
    }
    let labels = first_seen(rows.iter().map(|r| r.label.as_str()));
    let variables = first_seen(rows.iter().map(|r| r.variable.as_deref().unwrap_or("treatment")));
    let fe_keys = first_seen(
        rows.iter()
            .filter_map(|r| r.fixed_effects.as_deref())
            .flat_map(|s| s.split('+'))
            .filter(|s| !s.is_empty()),
    );
    let find = |label: &str| -> Vec<&EstimateRow> { rows.iter().filter(|r| r.label == label).collect() };

    let mut out = String::new();
    out.push_str(&format!("## {}\n\n", template.title()));
    out.push_str("| Variable |");
    for l in &labels {
        out.push_str(&format!(" {l} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(labels.len()));
    out.push('\n');

    let mut line = |name: &str, cell: &dyn Fn(&str) -> String| {
        out.push_str(&format!("| {name} |"));
        for l in &labels {
            out.push_str(&format!(" {} |", cell(l)));
        }
        out.push('\n');
    };
    for v in &variables {
        line(v, &|l| {
            find(l)
                .into_iter()
                .find(|r| r.variable.as_deref().unwrap_or("treatment") == *v)
                .map(|r| r.cell())
                .unwrap_or_default()
        });
    }
    let yes_no = |b: bool| if b { "YES" } else { "NO" }.to_string();
    line("Controls", &|l| yes_no(find(l).iter().any(|r| r.controls.unwrap_or(false))));
    for key in &fe_keys {
        line(&format!("{} FE", capitalize(key)), &|l| {
            yes_no(find(l).iter().any(|r| r.fixed_effects.as_deref().is_some_and(|s| s.split('+').any(|k| k == *key))))
        });
    }
    line("Observations", &|l| find(l).iter().map(|r| r.n).max().map(|n| n.to_string()).unwrap_or_default());
    out.push_str("\nNotes: *** p<0.01, ** p<0.05, * p<0.1; robust standard errors in parentheses.\n");
    Ok(out)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    /// Input path to SHA-256 digest.
    pub input_digests: BTreeMap<String, String>,
    pub seed: u64,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn begin(command: &str, config_bytes: &[u8], seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_digest: sha256_bytes(config_bytes),
            input_digests: BTreeMap::new(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: chrono::Utc::now().to_rfc3339(),
            finished: String::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.input_digests.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished = chrono::Utc::now().to_rfc3339();
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self)?;
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
