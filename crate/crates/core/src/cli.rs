//! Command-line front end. Every subcommand reads a JSON config, writes its
//! artifacts under an output directory and finishes with `manifest.json`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baseline::{self, BaselineConfig};
use crate::dml::grid::{self, GridSpec};
use crate::dml::mediation;
use crate::dml::subgroup;
use crate::dml::temporal::{self, GeneratedRowPolicy};
use crate::dml::{self, DmlConfig};
use crate::error::{Error, Result};
use crate::index;
use crate::panel::{self, FixedEffects, PanelTable, Role, Schema};
use crate::report::{self, EstimateRow, RunManifest, Template};
use crate::synth::{self, BinaryDgpSpec, DgpSpec, OracleSpec};
use crate::vae::{self, GenerateOptions, GenerationMode, Gates, VaeConfig, VaeModel};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CFDML_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "cfdml", version, about = "Counterfactual-augmented double machine learning on firm-year panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration file; relative paths inside it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $CFDML_OUT/<command>, or cfdml-out/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read a raw CSV with a role schema into a normalized panel.
    Ingest(Common),
    /// Build greenwashing, pollution, stability, pressure and media indices.
    Index(Common),
    /// Simulate a panel with planted effects.
    Synth(Common),
    /// Train the tabular VAE.
    VaeTrain(Common),
    /// Generate counterfactual rows from a trained VAE.
    VaeGenerate(Common),
    /// Check generated rows against the quality gates.
    VaeValidate(Common),
    /// Append generated rows to the real panel.
    Merge(Common),
    /// Double machine learning estimate of the treatment effect.
    Estimate(Common),
    /// Estimates over learners, split ratios, winsorization and treatments.
    Robustness(Common),
    /// Estimates within subgroups.
    Heterogeneity(Common),
    /// Current, lagged and cumulative effects.
    Temporal(Common),
    /// Fixed-effects regressions of mediators on the treatment.
    Mediate(Common),
    /// Propensity score matching and weighting on a binarized treatment.
    Baseline(Common),
    /// Render estimate CSVs as a Markdown table.
    Report(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Ingest(c) => ("ingest", c),
            Command::Index(c) => ("index", c),
            Command::Synth(c) => ("synth", c),
            Command::VaeTrain(c) => ("vae-train", c),
            Command::VaeGenerate(c) => ("vae-generate", c),
            Command::VaeValidate(c) => ("vae-validate", c),
            Command::Merge(c) => ("merge", c),
            Command::Estimate(c) => ("estimate", c),
            Command::Robustness(c) => ("robustness", c),
            Command::Heterogeneity(c) => ("heterogeneity", c),
            Command::Temporal(c) => ("temporal", c),
            Command::Mediate(c) => ("mediate", c),
            Command::Baseline(c) => ("baseline", c),
            Command::Report(c) => ("report", c),
        }
    }
}

/// What went wrong, mapped to an exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Validation(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, common) = cli.command.parts();
    let out = common.out.clone().unwrap_or_else(|| default_out(name));
    let ctx = match Context::new(name, common, out) {
        Ok(c) => c,
        Err(f) => return report_failure(name, f),
    };
    let result = match &cli.command {
        Command::Ingest(_) => cmd_ingest(ctx),
        Command::Index(_) => cmd_index(ctx),
        Command::Synth(_) => cmd_synth(ctx),
        Command::VaeTrain(_) => cmd_vae_train(ctx),
        Command::VaeGenerate(_) => cmd_vae_generate(ctx),
        Command::VaeValidate(_) => cmd_vae_validate(ctx),
        Command::Merge(_) => cmd_merge(ctx),
        Command::Estimate(_) => cmd_estimate(ctx),
        Command::Robustness(_) => cmd_robustness(ctx),
        Command::Heterogeneity(_) => cmd_heterogeneity(ctx),
        Command::Temporal(_) => cmd_temporal(ctx),
        Command::Mediate(_) => cmd_mediate(ctx),
        Command::Baseline(_) => cmd_baseline(ctx),
        Command::Report(_) => cmd_report(ctx),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => report_failure(name, f),
    }
}

fn report_failure(name: &str, f: Failure) -> i32 {
    match f {
        Failure::Usage(m) => {
            eprintln!("cfdml {name}: {m}");
            eprintln!("run `cfdml {name} --help` for usage");
            EXIT_USAGE
        }
        Failure::Validation(m) => {
            eprintln!("cfdml {name}: {m}");
            EXIT_FAILURE
        }
        Failure::Run(e) => {
            eprintln!("cfdml {name}: {e}");
            EXIT_FAILURE
        }
    }
}

fn default_out(command: &str) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
        _ => PathBuf::from("cfdml-out").join(command),
    }
}

struct Context {
    config_text: String,
    config_dir: PathBuf,
    seed: Option<u64>,
    out: PathBuf,
    manifest: RunManifest,
}

impl Context {
    fn new(name: &str, common: &Common, out: PathBuf) -> std::result::Result<Self, Failure> {
        let config_text = fs::read_to_string(&common.config)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", common.config.display())))?;
        fs::create_dir_all(&out).map_err(|e| Failure::Run(Error::io(&out, e)))?;
        let config_dir = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = RunManifest::begin(name, config_text.as_bytes(), common.seed.unwrap_or(0));
        Ok(Context { config_text, config_dir, seed: common.seed, out, manifest })
    }

    fn config<T: DeserializeOwned>(&self) -> std::result::Result<T, Failure> {
        serde_json::from_str(&self.config_text).map_err(|e| Failure::Usage(format!("invalid config: {e}")))
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.config_dir.join(p) }
    }

    fn seed_or(&mut self, configured: u64) -> u64 {
        let s = self.seed.unwrap_or(configured);
        self.manifest.seed = s;
        s
    }

    fn input(&mut self, p: &Path) -> Result<PathBuf> {
        let full = self.path(p);
        self.manifest.add_input(&full)?;
        Ok(full)
    }

    /// Loads a panel CSV; the schema defaults to the `.schema.json` sidecar.
    fn panel(&mut self, csv: &Path, schema: Option<&Path>) -> Result<PanelTable> {
        let csv = self.input(csv)?;
        let schema_path = match schema {
            Some(s) => self.input(s)?,
            None => {
                let side = sidecar(&csv);
                self.manifest.add_input(&side)?;
                side
            }
        };
        let ingested = panel::ingest_csv(&csv, &Schema::load(&schema_path)?)?;
        for w in &ingested.report.warnings {
            log::warn!("{w}");
        }
        Ok(ingested.table)
    }

    fn save_panel(&mut self, table: &PanelTable, stem: &str) -> Result<PathBuf> {
        let path = self.out.join(format!("{stem}.csv"));
        let mut buf = Vec::new();
        table.write_csv(&mut buf)?;
        report::write_atomic(&path, &buf)?;
        self.manifest.add_output(&path);
        let schema = serde_json::to_string_pretty(&table.schema())?;
        let side = sidecar(&path);
        report::write_atomic(&side, schema.as_bytes())?;
        self.manifest.add_output(&side);
        Ok(path)
    }

    fn save_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out.join(name);
        report::write_atomic(&path, serde_json::to_string_pretty(value)?.as_bytes())?;
        self.manifest.add_output(&path);
        Ok(path)
    }

    fn save_rows(&mut self, name: &str, rows: &[EstimateRow]) -> Result<PathBuf> {
        let path = self.out.join(name);
        report::save_estimates(&path, rows)?;
        self.manifest.add_output(&path);
        Ok(path)
    }

    fn save_csv<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<PathBuf> {
        let path = self.out.join(name);
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in records {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Render(e.to_string()))?;
        report::write_atomic(&path, &bytes)?;
        self.manifest.add_output(&path);
        Ok(path)
    }

    fn finish(self) -> CmdResult {
        let out = self.out.clone();
        let path = self.manifest.finish(&out)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

/// `panel.csv` -> `panel.schema.json`.
pub fn sidecar(csv: &Path) -> PathBuf {
    csv.with_extension("schema.json")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestConfig {
    input: PathBuf,
    schema: Schema,
}

fn cmd_ingest(mut ctx: Context) -> CmdResult {
    let cfg: IngestConfig = ctx.config()?;
    let input = ctx.input(&cfg.input)?;
    let ingested = panel::ingest_csv(&input, &cfg.schema)?;
    ctx.save_panel(&ingested.table, "panel")?;
    ctx.save_json("ingest_report.json", &ingested.report)?;
    ctx.finish()
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct IndexConfig {
    disclosures: Option<PathBuf>,
    city_matrix: Option<PathBuf>,
    roster: Option<PathBuf>,
    forecasts: Option<PathBuf>,
    media: Option<PathBuf>,
}

#[derive(Serialize)]
struct CityScore {
    city: String,
    closeness: f64,
}

#[derive(Serialize)]
struct MediaScore {
    firm_id: String,
    year: i32,
    value: f64,
}

fn open(p: &Path) -> Result<File> {
    File::open(p).map_err(|e| Error::io(p, e))
}

fn cmd_index(mut ctx: Context) -> CmdResult {
    let cfg: IndexConfig = ctx.config()?;
    let mut any = false;
    if let Some(p) = &cfg.disclosures {
        let records = index::read_disclosures(open(&ctx.input(p)?)?)?;
        ctx.save_csv("greenwash.csv", &index::greenwash_index(&records)?)?;
        any = true;
    }
    if let Some(p) = &cfg.city_matrix {
        let (cities, matrix) = index::read_city_matrix(open(&ctx.input(p)?)?)?;
        let res = index::entropy_topsis(&matrix)?;
        let rows: Vec<CityScore> =
            cities.into_iter().zip(&res.closeness).map(|(city, &closeness)| CityScore { city, closeness }).collect();
        ctx.save_csv("pollution.csv", &rows)?;
        ctx.save_json("pollution_weights.json", &res.weights)?;
        any = true;
    }
    if let Some(p) = &cfg.roster {
        let roster = index::read_roster(open(&ctx.input(p)?)?)?;
        ctx.save_csv("stability.csv", &index::roster_stability(&roster)?)?;
        any = true;
    }
    if let Some(p) = &cfg.forecasts {
        let rows = index::read_forecasts(open(&ctx.input(p)?)?)?;
        ctx.save_csv("pressure.csv", &index::pressure_from_forecasts(&rows)?)?;
        any = true;
    }
    if let Some(p) = &cfg.media {
        let rows = index::read_media(open(&ctx.input(p)?)?)?;
        let scores = rows
            .iter()
            .map(|r| {
                Ok(MediaScore {
                    firm_id: r.firm_id.clone(),
                    year: r.year,
                    value: index::jf_coefficient(r.positive, r.negative, r.total)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ctx.save_csv("media.csv", &scores)?;
        any = true;
    }
    if !any {
        return Err(Failure::Usage(
            "index config names no input (disclosures, city_matrix, roster, forecasts or media)".into(),
        ));
    }
    ctx.finish()
}

#[derive(Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum Design {
    #[default]
    Panel,
    Oracle,
    Binary,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SynthConfig {
    design: Design,
    panel: DgpSpec,
    oracle: OracleSpec,
    binary: BinaryDgpSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            design: Design::Panel,
            panel: DgpSpec::raw_sample(),
            oracle: OracleSpec::default(),
            binary: BinaryDgpSpec::default(),
        }
    }
}

fn cmd_synth(mut ctx: Context) -> CmdResult {
    let cfg: SynthConfig = ctx.config()?;
    match cfg.design {
        Design::Panel => {
            let seed = ctx.seed_or(cfg.panel.seed);
            let spec = cfg.panel.with_seed(seed);
            spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let generated = synth::generate_panel(&spec)?;
            ctx.save_panel(&generated.table, "panel")?;
            ctx.save_json("truth.json", &generated.truth)?;
        }
        Design::Oracle => {
            let seed = ctx.seed_or(cfg.oracle.seed);
            let spec = cfg.oracle.with_seed(seed);
            let table = synth::generate_oracle(&spec)?;
            ctx.save_panel(&table, "panel")?;
            ctx.save_json("truth.json", &spec)?;
        }
        Design::Binary => {
            let seed = ctx.seed_or(cfg.binary.seed);
            let spec = BinaryDgpSpec { seed, ..cfg.binary };
            let (table, truth) = synth::generate_binary(&spec)?;
            ctx.save_panel(&table, "panel")?;
            ctx.save_json("truth.json", &truth)?;
        }
    }
    ctx.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VaeTrainConfig {
    input: PathBuf,
    schema: Option<PathBuf>,
    #[serde(default)]
    vae: VaeConfig,
}

fn cmd_vae_train(mut ctx: Context) -> CmdResult {
    let cfg: VaeTrainConfig = ctx.config()?;
    let seed = ctx.seed_or(cfg.vae.seed);
    let vae_cfg = VaeConfig { seed, ..cfg.vae };
    vae_cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let table = ctx.panel(&cfg.input, cfg.schema.as_deref())?;
    let trained = vae::train(&table, &vae_cfg)?;
    let path = ctx.out.join("vae.json");
    trained.model.save(&path)?;
    ctx.manifest.add_output(&path);
    ctx.save_csv("loss_trace.csv", &trained.trace)?;
    ctx.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VaeGenerateConfig {
    model: PathBuf,
    input: PathBuf,
    schema: Option<PathBuf>,
    /// Defaults to the number of source rows.
    rows: Option<usize>,
    #[serde(default)]
    mode: GenerationMode,
    #[serde(default)]
    seed: u64,
    noise_scale: Option<f64>,
}

fn cmd_vae_generate(mut ctx: Context) -> CmdResult {
    let cfg: VaeGenerateConfig = ctx.config()?;
    let seed = ctx.seed_or(cfg.seed);
    let model_path = ctx.input(&cfg.model)?;
    let model = VaeModel::load(&model_path)?;
    let source = ctx.panel(&cfg.input, cfg.schema.as_deref())?;
    let mut options = GenerateOptions::new(cfg.mode, seed);
    if let Some(s) = cfg.noise_scale {
        options.noise_scale = s;
    }
    let generated = vae::generate_table(&model, &source, cfg.rows.unwrap_or(source.n_rows()), options)?;
    ctx.save_panel(&generated, "generated")?;
    ctx.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VaeValidateConfig {
    real: PathBuf,
    real_schema: Option<PathBuf>,
    generated: PathBuf,
    generated_schema: Option<PathBuf>,
    columns: Option<Vec<String>>,
    #[serde(default)]
    gates: Gates,
}

fn cmd_vae_validate(mut ctx: Context) -> CmdResult {
    let cfg: VaeValidateConfig = ctx.config()?;
    let real = ctx.panel(&cfg.real, cfg.real_schema.as_deref())?;
    let generated = ctx.panel(&cfg.generated, cfg.generated_schema.as_deref())?;
    let columns = cfg.columns.unwrap_or_else(|| vae::default_columns(&real));
    let quality = vae::validate(&real, &generated, &columns, cfg.gates)?;
    let path = ctx.save_json("quality.json", &quality)?;
    let pass = quality.pass;
    ctx.finish()?;
    if !pass {
        let failing: Vec<&str> = quality
            .columns
            .iter()
            .filter(|c| c.smd.abs() > cfg.gates.smd || c.mae > cfg.gates.mae || c.mse > cfg.gates.mse)
            .map(|c| c.name.as_str())
            .collect();
        return Err(Failure::Validation(format!(
            "quality gates failed for {}; see {}",
            failing.join(", "),
            path.display()
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MergeConfig {
    real: PathBuf,
    real_schema: Option<PathBuf>,
    generated: PathBuf,
    generated_schema: Option<PathBuf>,
}

fn cmd_merge(mut ctx: Context) -> CmdResult {
    let cfg: MergeConfig = ctx.config()?;
    let real = ctx.panel(&cfg.real, cfg.real_schema.as_deref())?;
    let generated = ctx.panel(&cfg.generated, cfg.generated_schema.as_deref())?;
    let merged = vae::merge(&real, &generated)?;
    ctx.save_panel(&merged, "merged")?;
    ctx.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateConfig {
    input: PathBuf,
    schema: Option<PathBuf>,
    #[serde(default)]
    dml: DmlConfig,
    label: Option<String>,
}

/// Row helper shared by the DML-based commands.
fn dml_row(label: &str, table: &PanelTable, cfg: &DmlConfig, est: &dml::DmlEstimate) -> EstimateRow {
    let variable = cfg.treatment.clone().or_else(|| table.treatment_name()).unwrap_or_default();
    let controls = cfg.controls.as_ref().map_or(!table.names_with_role(Role::Control).is_empty(), |c| !c.is_empty());
    EstimateRow::from_dml(label, &variable, est, controls, &cfg.fe_keys)
}

fn dml_config(ctx: &mut Context, cfg: DmlConfig) -> std::result::Result<DmlConfig, Failure> {
    let seed = ctx.seed_or(cfg.seed);
    let cfg = DmlConfig { seed, ..cfg };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_estimate(mut ctx: Context) -> CmdResult {
    let cfg: EstimateConfig = ctx.config()?;
    let dml_cfg = dml_config(&mut ctx, cfg.dml)?;
    let table = ctx.panel(&cfg.input, cfg.schema.as_deref())?;
    let est = dml::estimate(&table, &dml_cfg)?;
    let label = cfg.label.unwrap_or_else(|| "(1)".into());
    ctx.save_rows("estimates.csv", &[dml_row(&label, &table, &dml_cfg, &est)])?;
    ctx.save_json("estimate.json", &est)?;
    ctx.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RobustnessConfig {
    input: PathBuf,
    schema: Option<PathBuf>,
    #[serde(default)]
    dml: DmlConfig,
    #[serde(default)]
    grid: GridSpec,
}

fn cmd_robustness(mut ctx: Context) -> CmdResult {
    let cfg: RobustnessConfig = ctx.config()?;
    let dml_cfg = dml_config(&mut ctx, cfg.dml)?;
    let table = ctx.panel(&cfg.input, cfg.schema.as_deref())?;
    let cells = grid::robustness_grid(&table, &dml_cfg, &cfg.grid)?;
    let rows: Vec<EstimateRow> = cells
        .iter()
        .filter_map(|c| {
            c.estimate.as_ref().map(|e| {
                let mut row = dml_row(&c.label(), &table, &dml_cfg, e);
                row.variable = Some(c.treatment.clone());
                row
            })
        })
        .collect();
    ctx.save_rows("robustness.csv", &rows)?;
    ctx.save_json("grid.json", &cells)?;
    ctx.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeterogeneityConfig {
    input: PathBuf,
    schema: Option<PathBuf>,
    #[serde(default)]
    dml: DmlConfig,
    split_column: String,
    /// Label and the split-column values it covers; defaults follow the
    /// region and segment coding.
    groups: Option<Vec<(String, Vec<f64>)>>,
}

fn cmd_heterogeneity(mut ctx: Context) -> CmdResult {
    let cfg: HeterogeneityConfig = ctx.config()?;
    let dml_cfg = dml_config(&mut ctx, cfg.dml)?;
    let table = ctx.panel(&cfg.input, cfg.schema.as_deref())?;
    let groups = match cfg.groups {
        Some(g) => g,
        None if cfg.split_column == "segment" => subgroup::segment_groups(),
        None if cfg.split_column == "region" => subgroup::region_groups(),
        None => return Err(Failure::Usage(format!("no default groups for `{}`; list them", cfg.split_column))),
    };
    let res = subgroup::subgroup_estimates(&table, &dml_cfg, &cfg.split_column, &groups)?;
    let rows: Vec<EstimateRow> = res
        .iter()
        .filter_map(|g| g.estimate.as_ref().map(|e| dml_row(&g.label, &table, &dml_cfg, e)))
        .collect();
    ctx.save_rows("heterogeneity.csv", &rows)?;
    ctx.save_json("subgroups.json", &res)?;
    ctx.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemporalConfig {
    input: PathBuf,
    schema: Option<PathBuf>,
    #[serde(default)]
    dml: DmlConfig,
    max_lag: usize,
    #[serde(default)]
    policy: GeneratedRowPolicy,
}

fn cmd_temporal(mut ctx: Context) -> CmdResult {
    let cfg: TemporalConfig = ctx.config()?;
    let dml_cfg = dml_config(&mut ctx, cfg.dml)?;
    let table = ctx.panel(&cfg.input, cfg.schema.as_deref())?;
    let t = temporal::temporal_effects(&table, &dml_cfg, cfg.max_lag, cfg.policy)?;
    let mut rows = vec![dml_row("Current Effect", &table, &dml_cfg, &t.current)];
    for (k, e) in t.lags.iter().enumerate() {
        rows.push(dml_row(&format!("Lag {}", k + 1), &table, &dml_cfg, e));
    }
    rows.push(dml_row("Cumulative Effect", &table, &dml_cfg, &t.cumulative));
    ctx.save_rows("temporal.csv", &rows)?;
    ctx.save_json("temporal.json", &t)?;
    ctx.finish()
}

fn default_two_way() -> FixedEffects {
    FixedEffects::TWO_WAY
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MediateConfig {
    input: PathBuf,
    schema: Option<PathBuf>,
    treatment: Option<String>,
    /// Defaults to every mediator-role column.
    mediators: Option<Vec<String>>,
    #[serde(default)]
    controls: Vec<String>,
    #[serde(default = "default_two_way")]
    fixed_effects: FixedEffects,
}

fn cmd_mediate(mut ctx: Context) -> CmdResult {
    let cfg: MediateConfig = ctx.config()?;
    let table = ctx.panel(&cfg.input, cfg.schema.as_deref())?;
    let treatment = cfg
        .treatment
        .or_else(|| table.treatment_name())
        .ok_or_else(|| Error::Schema("table has no treatment column".into()))?;
    let mediators = cfg.mediators.unwrap_or_else(|| table.names_with_role(Role::Mediator));
    if mediators.is_empty() {
        return Err(Failure::Usage("no mediators given and the table has none".into()));
    }
    let mut fe = Vec::new();
    if cfg.fixed_effects.firm {
        fe.push("firm".to_string());
    }
    if cfg.fixed_effects.year {
        fe.push("year".to_string());
    }
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for m in &mediators {
        let r = mediation::mediation_regression(&table, &treatment, m, &cfg.controls, cfg.fixed_effects)?;
        rows.push(EstimateRow::from_mediation(m, &r, !cfg.controls.is_empty(), &fe));
        results.push(r);
    }
    ctx.save_rows("mediation.csv", &rows)?;
    ctx.save_json("mediation.json", &results)?;
    ctx.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineCmdConfig {
    input: PathBuf,
    schema: Option<PathBuf>,
    #[serde(default)]
    baseline: BaselineConfig,
}

fn cmd_baseline(mut ctx: Context) -> CmdResult {
    let cfg: BaselineCmdConfig = ctx.config()?;
    let table = ctx.panel(&cfg.input, cfg.schema.as_deref())?;
    let res = baseline::run_baselines(&table, &cfg.baseline)?;
    let variable = cfg.baseline.treatment.clone().or_else(|| table.treatment_name()).unwrap_or_default();
    let fe: Vec<String> = cfg
        .baseline
        .fe_keys
        .iter()
        .filter(|k| table.has_column(k) || k.as_str() == panel::YEAR_KEY)
        .cloned()
        .collect();
    let rows = vec![
        EstimateRow::from_baseline("PSM", &variable, &res.psm, &fe),
        EstimateRow::from_baseline("IPW", &variable, &res.ipw, &fe),
    ];
    ctx.save_rows("baseline.csv", &rows)?;
    ctx.save_json("baseline.json", &res)?;
    ctx.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportConfig {
    inputs: Vec<PathBuf>,
    template: Template,
}

fn cmd_report(mut ctx: Context) -> CmdResult {
    let cfg: ReportConfig = ctx.config()?;
    let mut rows = Vec::new();
    for p in &cfg.inputs {
        let path = ctx.input(p)?;
        rows.extend(report::load_estimates(&path).map_err(|e| match e {
            Error::Render(m) => Error::Render(format!("{}: {m}", path.display())),
            other => other,
        })?);
    }
    let md = report::render_report(&rows, cfg.template)?;
    let path = ctx.out.join("report.md");
    report::write_atomic(&path, md.as_bytes())?;
    ctx.manifest.add_output(&path);
    ctx.finish()
}
