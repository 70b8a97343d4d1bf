//! Command-line surface. Every command writes a run manifest next to its
//! primary output so the run can be replayed and checked.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::calibrate::{self, GroupSummary};
use crate::dgp::{self, DgpConfig, NoiseModel};
use crate::error::{Error, Result};
use crate::identcheck::{self, DiscreteScm, IdentReport};
use crate::inject::{self, InjectConfig};
use crate::io::{self, RunManifest};
use crate::pipeline::{self, MetricsReport, PipelineConfig, TwoStageModel};

/// Environment variable naming the default output directory.
pub const OUT_DIR_VAR: &str = "PROXYCAL_OUT";

#[derive(Debug, Parser)]
#[command(name = "proxycal", version, about = "Proxy-guided calibration of biased measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic dataset.
    Gen(GenArgs),
    /// Inject an environment-driven bias into a dataset.
    Inject(InjectArgs),
    /// Fit both stages on a dataset.
    Train(TrainArgs),
    /// Estimate the bias with a trained model.
    Calibrate(CalibrateArgs),
    /// k-fold evaluation over synthetic cells or a dataset file.
    Eval(EvalArgs),
    /// Structural diagnostics of a dataset with ground truth.
    Sanity(SanityArgs),
    /// Check the adjustment identity on discrete models.
    IdentCheck(IdentArgs),
    /// Pivot evaluation cell summaries into a table.
    Table(TableArgs),
    /// Rerun a command from its run manifest and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum NoiseArg {
    Gaussian,
    Poisson,
}

impl From<NoiseArg> for NoiseModel {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Gaussian => NoiseModel::Gaussian,
            NoiseArg::Poisson => NoiseModel::PoissonScaled,
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    de: usize,
    #[arg(long, default_value_t = 5)]
    dz: usize,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = NoiseArg::Gaussian)]
    noise: NoiseArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InjectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    prevalence: f64,
    #[arg(long)]
    logistic_noise: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    /// Pipeline configuration JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stage-1 latent width.
    #[arg(long)]
    dz: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Seed of the validation/evaluation split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SanityArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IdentArgs {
    /// Discrete model JSON.
    #[arg(long, conflicts_with_all = ["random", "violating"])]
    scm: Option<PathBuf>,
    /// Number of random models to check.
    #[arg(long)]
    random: Option<usize>,
    /// Check the built-in example with an `A → Z` edge.
    #[arg(long)]
    violating: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    max_support: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TableArgs {
    /// Cell summary CSVs written by `eval`.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
}

/// One synthetic grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellSpec {
    pub n: usize,
    pub d_e: usize,
    pub d_z: usize,
    pub m: usize,
    pub alpha: f64,
    pub noise: NoiseModel,
}

impl Default for CellSpec {
    fn default() -> Self {
        let d = DgpConfig::new(1000, 10, 5, 1.0, 0);
        Self {
            n: d.n,
            d_e: d.d_e,
            d_z: d.d_z,
            m: d.m,
            alpha: d.alpha,
            noise: d.noise_model,
        }
    }
}

impl CellSpec {
    pub fn dgp(&self, seed: u64) -> DgpConfig {
        let mut d = DgpConfig::new(self.n, self.d_e, self.d_z, self.alpha, seed);
        d.m = self.m;
        d.noise_model = self.noise;
        d
    }
}

/// Configuration of `eval`. With `input` set the dataset file is evaluated
/// and `cells` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub cells: Vec<CellSpec>,
    pub seeds: Vec<u64>,
    pub input: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cells: vec![CellSpec::default()],
            seeds: (0..5).collect(),
            input: None,
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Option<CellSpec>,
    pub input: Option<String>,
    pub seeds: Vec<u64>,
    pub report: MetricsReport,
}

/// Flat per-cell summary, the input format of `table`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub n: usize,
    pub d_e: usize,
    pub d_z: usize,
    pub alpha: f64,
    pub noise: String,
    pub runs: usize,
    pub folds: usize,
    pub alpha_hat_mean: f64,
    pub alpha_hat_std: f64,
    pub baseline_proxy_mean: f64,
    pub baseline_env_mean: f64,
    pub rmse_proxies: f64,
    pub rmse_yobs: f64,
}

/// A trained model together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub pipeline: PipelineConfig,
    pub model: TwoStageModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateReport {
    pub alpha_hat: f64,
    pub k_neighbors: usize,
    pub threshold: f64,
    pub orientation: i8,
    pub validation_contrast: f64,
    pub n_val: usize,
    pub n_eval: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub per_group: Option<BTreeMap<String, GroupSummary>>,
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
/// Failures print a single `error[class]: message` line on stderr.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return 2;
        }
    };
    match execute(cli.command, &argv[1..]) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn default_out(given: Option<PathBuf>, name: &str) -> PathBuf {
    given.unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(name)
    })
}

/// `results/x.json` → `results/x.run.json`.
pub fn run_manifest_path(primary: &Path) -> PathBuf {
    primary.with_extension("run.json")
}

fn finish(mut manifest: RunManifest, inputs: &[&Path], outputs: &[&Path], primary: &Path) -> Result<()> {
    for p in inputs {
        manifest.add_input(p)?;
    }
    for p in outputs {
        manifest.add_output(p)?;
    }
    io::write_json(&run_manifest_path(primary), &manifest)
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn execute(cmd: Command, args: &[String]) -> Result<()> {
    let argv = args.to_vec();
    match cmd {
        Command::Gen(a) => {
            let mut cfg = DgpConfig::new(a.n, a.de, a.dz, a.alpha, a.seed);
            cfg.m = a.m;
            cfg.noise_model = a.noise.into();
            let (ds, _) = dgp::sample_dataset(&cfg)?;
            let out = default_out(a.out, "dataset.csv");
            let side = io::write_dataset(&ds, &out)?;
            let m = RunManifest::new("gen", argv, to_value(&cfg)?, vec![cfg.seed]);
            finish(m, &[], &[&out, &side], &out)
        }
        Command::Inject(a) => {
            let ds = io::read_dataset(&a.input)?;
            let mut cfg = InjectConfig::new(a.alpha, a.seed);
            cfg.prevalence = a.prevalence;
            cfg.logistic_noise = a.logistic_noise;
            let biased = inject::inject_bias(&ds, &cfg)?;
            let out = default_out(a.out, "injected.csv");
            let side = io::write_dataset(&biased, &out)?;
            let m = RunManifest::new("inject", argv, to_value(&cfg)?, vec![cfg.seed]);
            finish(m, &[&a.input], &[&out, &side], &out)
        }
        Command::Train(a) => {
            let ds = io::read_dataset(&a.input)?;
            let mut cfg: PipelineConfig = match &a.config {
                Some(p) => io::read_json(p)?,
                None => PipelineConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(d) = a.dz {
                cfg.stage1.d_latent = d;
            }
            let model = pipeline::fit_two_stage(&ds, &cfg)?;
            let out = default_out(a.out, "model.json");
            io::write_json(&out, &TrainedPipeline { pipeline: cfg.clone(), model })?;
            let m = RunManifest::new("train", argv, to_value(&cfg)?, vec![cfg.seed]);
            let mut inputs: Vec<&Path> = vec![&a.input];
            if let Some(p) = &a.config {
                inputs.push(p);
            }
            finish(m, &inputs, &[&out], &out)
        }
        Command::Calibrate(a) => {
            let ds = io::read_dataset(&a.input)?;
            let trained: TrainedPipeline = io::read_json(&a.model)?;
            let k = a.k.unwrap_or(trained.pipeline.k_neighbors);
            let report = calibrate_dataset(&ds, &trained, k, a.seed)?;
            let out = default_out(a.out, "calibration.json");
            io::write_json(&out, &report)?;
            let config = json!({ "k_neighbors": k, "split_seed": a.seed, "pipeline": trained.pipeline });
            let m = RunManifest::new("calibrate", argv, config, vec![a.seed]);
            finish(m, &[&a.input, &a.model], &[&out], &out)
        }
        Command::Eval(a) => {
            let cfg: EvalConfig = match &a.config {
                Some(p) => io::read_json(p)?,
                None => EvalConfig::default(),
            };
            let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let out = default_out(a.out, "eval.json");
            let outputs = run_eval(&cfg, jobs, &out)?;
            let m = RunManifest::new("eval", argv, to_value(&cfg)?, cfg.seeds.clone());
            let mut inputs: Vec<&Path> = Vec::new();
            if let Some(p) = &a.config {
                inputs.push(p);
            }
            if let Some(p) = &cfg.input {
                inputs.push(p);
            }
            let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
            finish(m, &inputs, &outs, &out)
        }
        Command::Sanity(a) => {
            let ds = io::read_dataset(&a.input)?;
            let stats = dgp::sanity_report(&ds)?;
            let out = default_out(a.out, "sanity.json");
            io::write_json(&out, &stats)?;
            let m = RunManifest::new("sanity", argv, json!({}), vec![]);
            finish(m, &[&a.input], &[&out], &out)
        }
        Command::IdentCheck(a) => {
            let (report, config) = match (&a.scm, a.random, a.violating) {
                (Some(p), _, _) => {
                    let scm = DiscreteScm::from_json(&fs::read_to_string(p)?)?;
                    (identcheck::verify_adjustment(&scm), json!({ "scm": p }))
                }
                (None, Some(draws), _) => (
                    identcheck::verify_random(draws, a.seed, a.max_support),
                    json!({ "random": draws, "seed": a.seed, "max_support": a.max_support }),
                ),
                (None, None, true) => (
                    identcheck::verify_adjustment(&identcheck::graph_violating_example()),
                    json!({ "violating": true }),
                ),
                (None, None, false) => {
                    return Err(Error::Usage("ident-check needs --scm, --random or --violating".into()))
                }
            };
            let out = default_out(a.out, "ident.json");
            io::write_json(&out, &IdentOutput::from(report))?;
            let m = RunManifest::new("ident-check", argv, config, vec![a.seed]);
            let inputs: Vec<&Path> = a.scm.iter().map(PathBuf::as_path).collect();
            finish(m, &inputs, &[&out], &out)
        }
        Command::Table(a) => {
            let mut rows = Vec::new();
            for p in &a.input {
                rows.extend(read_cell_rows(p)?);
            }
            let out = default_out(a.out, "table.md");
            io::write_text(&out, &render_table(&rows))?;
            let m = RunManifest::new("table", argv, json!({}), vec![]);
            let inputs: Vec<&Path> = a.input.iter().map(PathBuf::as_path).collect();
            finish(m, &inputs, &[&out], &out)
        }
        Command::Replay(a) => replay(&a.manifest),
    }
}

#[derive(Debug, Serialize)]
struct IdentOutput {
    #[serde(flatten)]
    report: IdentReport,
    discrepancy: f64,
}

impl From<IdentReport> for IdentOutput {
    fn from(report: IdentReport) -> Self {
        Self {
            discrepancy: report.discrepancy(),
            report,
        }
    }
}

/// Splits the dataset in two with `seed`: thresholds are chosen on the first
/// half and α̂ is estimated on the second.
pub fn calibrate_dataset(ds: &crate::Dataset, trained: &TrainedPipeline, k: usize, seed: u64) -> Result<CalibrateReport> {
    let halves = pipeline::assign_folds(ds.n(), 2, seed)?;
    let (val, eval) = (ds.subset(&halves[0]), ds.subset(&halves[1]));
    let on_env = trained.pipeline.match_on_env;
    let (vl, el) = (trained.model.latents(&val, on_env)?, trained.model.latents(&eval, on_env)?);
    let result = pipeline::calibrate_split((&val, &vl), (&eval, &el), k)?;
    let per_group = match &eval.group {
        Some(keys) => Some(calibrate::cate_by_group(&result, keys)?),
        None => None,
    };
    Ok(CalibrateReport {
        alpha_hat: result.alpha_hat,
        k_neighbors: result.k_neighbors,
        threshold: result.groups.threshold,
        orientation: result.groups.orientation,
        validation_contrast: result.groups.validation_contrast,
        n_val: val.n(),
        n_eval: eval.n(),
        n_treated: result.groups.treated.len(),
        n_control: result.groups.control.len(),
        per_group,
    })
}

fn eval_cell(cfg: &EvalConfig, cell: Option<&CellSpec>, input: Option<&crate::Dataset>) -> Result<CellResult> {
    let mut rows = Vec::new();
    let mut alpha_true = None;
    for &seed in &cfg.seeds {
        let mut pc = cfg.pipeline.clone();
        pc.seed = seed;
        let ds = match (cell, input) {
            (Some(c), _) => {
                pc.stage1.d_latent = c.d_z;
                dgp::sample_dataset(&c.dgp(seed))?.0
            }
            (None, Some(ds)) => ds.clone(),
            (None, None) => return Err(Error::Parameter("evaluation cell without data".into())),
        };
        alpha_true = ds.meta.alpha;
        rows.extend(pipeline::kfold_rows(&ds, &pc)?);
    }
    Ok(CellResult {
        cell: cell.cloned(),
        input: cfg.input.as_ref().map(|p| p.display().to_string()),
        seeds: cfg.seeds.clone(),
        report: pipeline::aggregate(alpha_true, cfg.pipeline.folds, rows),
    })
}

/// Runs every cell on a pool of `jobs` threads, writes one JSON per cell,
/// then the merged report at `out` and a cell summary CSV beside it.
/// Returns all written paths.
pub fn run_eval(cfg: &EvalConfig, jobs: usize, out: &Path) -> Result<Vec<PathBuf>> {
    if cfg.seeds.is_empty() {
        return Err(Error::Parameter("eval needs at least one seed".into()));
    }
    cfg.pipeline.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?;
    let input = cfg.input.as_deref().map(io::read_dataset).transpose()?;
    let cells: Vec<Option<&CellSpec>> = match input {
        Some(_) => vec![None],
        None if cfg.cells.is_empty() => return Err(Error::Parameter("eval config has no cells".into())),
        None => cfg.cells.iter().map(Some).collect(),
    };

    let cell_dir = out.with_extension("cells");
    let results: Vec<(CellResult, PathBuf)> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, cell)| {
                let r = eval_cell(cfg, *cell, input.as_ref())?;
                let path = cell_dir.join(format!("cell_{i:03}.json"));
                io::write_json(&path, &r)?;
                Ok((r, path))
            })
            .collect::<Result<_>>()
    })?;

    let mut written: Vec<PathBuf> = results.iter().map(|(_, p)| p.clone()).collect();
    let merged: Vec<CellResult> = results.into_iter().map(|(r, _)| r).collect();
    io::write_json(out, &merged)?;
    written.push(out.to_path_buf());

    let csv_path = out.with_extension("cells.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in &merged {
        w.serialize(cell_row(r, input.as_ref()))?;
    }
    w.flush()?;
    written.push(csv_path);
    Ok(written)
}

fn cell_row(r: &CellResult, input: Option<&crate::Dataset>) -> CellRow {
    let (n, d_e, d_z, alpha, noise) = match (&r.cell, input) {
        (Some(c), _) => (c.n, c.d_e, c.d_z, c.alpha, c.noise),
        (None, Some(ds)) => (ds.n(), ds.d_e(), ds.d_z().unwrap_or(0), ds.meta.alpha.unwrap_or(f64::NAN), NoiseModel::Gaussian),
        (None, None) => (0, 0, 0, f64::NAN, NoiseModel::Gaussian),
    };
    let noise = match noise {
        NoiseModel::Gaussian => "gaussian",
        NoiseModel::PoissonScaled => "poisson_scaled",
    };
    CellRow {
        n,
        d_e,
        d_z,
        alpha,
        noise: noise.into(),
        runs: r.report.runs,
        folds: r.report.folds,
        alpha_hat_mean: r.report.alpha_hat_mean,
        alpha_hat_std: r.report.alpha_hat_std,
        baseline_proxy_mean: r.report.baseline_proxy_mean,
        baseline_env_mean: r.report.baseline_env_mean,
        rmse_proxies: r.report.rmse_proxies,
        rmse_yobs: r.report.rmse_yobs,
    }
}

pub fn read_cell_rows(path: &Path) -> Result<Vec<CellRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Data(format!("{} row {}: {e}", path.display(), i + 1))))
        .collect()
}

/// Markdown table: one row per `(n, d_z, d_e)`, one column per `(α, noise)`,
/// entries `mean±std` of α̂.
pub fn render_table(rows: &[CellRow]) -> String {
    let mut cols: Vec<(f64, String)> = rows.iter().map(|r| (r.alpha, r.noise.clone())).collect();
    cols.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cols.dedup();
    let mut keys: Vec<(usize, usize, usize)> = rows.iter().map(|r| (r.n, r.d_z, r.d_e)).collect();
    keys.sort_unstable();
    keys.dedup();

    let mut s = String::from("| n | d_z | d_e |");
    for (a, noise) in &cols {
        s.push_str(&format!(" α={a} {noise} |"));
    }
    s.push_str("\n|---|---|---|");
    s.push_str(&"---|".repeat(cols.len()));
    s.push('\n');
    for (n, dz, de) in keys {
        s.push_str(&format!("| {n} | {dz} | {de} |"));
        for (a, noise) in &cols {
            let cell = rows
                .iter()
                .find(|r| (r.n, r.d_z, r.d_e) == (n, dz, de) && r.alpha == *a && &r.noise == noise);
            match cell {
                Some(r) => s.push_str(&format!(" {:.2}±{:.2} |", r.alpha_hat_mean, r.alpha_hat_std)),
                None => s.push_str(" |"),
            }
        }
        s.push('\n');
    }
    s
}

fn replay(path: &Path) -> Result<()> {
    let manifest: RunManifest = io::read_json(path)?;
    if manifest.command == "replay" || manifest.argv.first().is_some_and(|c| c == "replay") {
        return Err(Error::Usage("cannot replay a replay".into()));
    }
    let changed = manifest.changed_inputs()?;
    if !changed.is_empty() {
        return Err(Error::Data(format!("inputs changed since the run: {}", changed.join(", "))));
    }
    let mut argv = vec!["proxycal".to_string()];
    argv.extend(manifest.argv.iter().cloned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Usage(e.to_string().lines().next().unwrap_or("").into()))?;
    execute(cli.command, &argv[1..])?;
    let changed = manifest.changed_outputs()?;
    if changed.is_empty() {
        println!("replay of `{}` reproduced {} outputs", manifest.command, manifest.outputs.len());
        Ok(())
    } else {
        Err(Error::Data(format!("replayed outputs differ: {}", changed.join(", "))))
    }
}
