//! Command-line front end: configuration loading and subcommand dispatch.
//!
//! Exit codes: 0 on success, 1 on invalid input or configuration, 2 when a
//! run fails at runtime (numeric failure, failed gradient check, write error).

use crate::metrics::{export_reconstruction, MetricsError};
use crate::model::{count_parameters, model_init, model_read, model_write, ModelConfig, ModelError, Variant};
use crate::signal::{dataset_read, dataset_write, minmax_normalize, synth_generate, EpochedDataset, SignalError, SynthConfig};
use crate::tensor::battery::layer_battery;
use crate::tensor::rng::split;
use crate::training::{end_to_end_grad_check, evaluate, train, EvalOptions, TrainConfig, TrainError};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Reference counts for the `params` table.
const V1_TOTAL: usize = 61476;
const V1_UNSUPERVISED: usize = 52960;
const V1_CLASSIFIER: usize = 8516;
const V2_TOTAL: usize = 121853;
const V2_CLASSIFIER: usize = 516;

const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(_) => Self::Runtime(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io(_) | MetricsError::DegenerateSignal(_) => Self::Runtime(e.to_string()),
            MetricsError::Model(m) => m.into(),
            MetricsError::Signal(s) => s.into(),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Optimizer { .. } | TrainError::Tensor(_) => Self::Runtime(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Metrics(m) => m.into(),
            TrainError::Signal(s) => s.into(),
            _ => Self::Validation(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Input dataset.
    pub path: Option<PathBuf>,
    /// Output of `generate`.
    pub out: Option<PathBuf>,
    /// Min-max normalize before training or evaluation.
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: Variant,
    /// Model file: written by `train`, read by `evaluate` and `reconstruct`.
    pub path: Option<PathBuf>,
    /// Per-epoch JSON-lines log; defaults to the model path with a `.jsonl` extension.
    pub log: Option<PathBuf>,
    /// Full architecture; replaces the variant's defaults when present.
    pub architecture: Option<ModelConfig>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Variant::V1,
            path: None,
            log: None,
            architecture: None,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self) -> ModelConfig {
        match &self.architecture {
            Some(a) => ModelConfig {
                variant: self.variant,
                ..a.clone()
            },
            None => ModelConfig::for_variant(self.variant),
        }
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.log.clone().or_else(|| self.path.as_ref().map(|p| p.with_extension("jsonl")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub report: Option<PathBuf>,
    /// CSV written by `reconstruct`.
    pub csv: Option<PathBuf>,
    pub trial: usize,
    pub channels: Vec<String>,
    /// Seed of the per-trial decoder noise.
    pub seed: u64,
    pub batch_size: usize,
    pub bands: Vec<(String, (f64, f64))>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            report: None,
            csv: None,
            trial: 0,
            channels: vec!["C3".into(), "Cz".into(), "C4".into()],
            seed: o.seed,
            batch_size: o.batch_size,
            bands: o.bands,
        }
    }
}

/// Everything a subcommand needs, as parsed from a JSON document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let v = |e: String| CliError::Validation(e);
        self.train.validate().map_err(|e| v(e.to_string()))?;
        self.synth.validate().map_err(|e| v(e.to_string()))?;
        self.model.model_config().validate().map_err(|e| v(e.to_string()))?;
        if self.eval.batch_size < 1 {
            return Err(v("eval.batch_size must be >= 1".into()));
        }
        for (name, (lo, hi)) in &self.eval.bands {
            if !(0.0 < *lo && lo < hi && *hi < crate::signal::EPOCH_FS / 2.0) {
                return Err(v(format!("eval band {name:?} ({lo}, {hi}) is not a valid band")));
            }
        }
        Ok(())
    }

    /// The effective configuration as JSON, for echoing into outputs.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            seed: self.eval.seed,
            batch_size: self.eval.batch_size,
            targets: self.synth.target_channels,
            bands: self.eval.bands.clone(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub normalize: bool,
    pub variant: Option<Variant>,
    pub model: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub synth_seed: Option<u64>,
    pub trials_per_class: Option<usize>,
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub trial: Option<usize>,
    pub channels: Option<Vec<String>>,
    pub eval_seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        fn set_opt<T: Clone>(dst: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                *dst = v.clone();
            }
        }
        set_opt(&mut c.data.path, &self.data);
        set_opt(&mut c.data.out, &self.out);
        c.data.normalize |= self.normalize;
        set(&mut c.model.variant, &self.variant);
        set_opt(&mut c.model.path, &self.model);
        set_opt(&mut c.model.log, &self.log);
        set(&mut c.train.epochs, &self.epochs);
        set(&mut c.train.lr, &self.lr);
        set(&mut c.train.weight_decay, &self.weight_decay);
        set(&mut c.train.batch_size, &self.batch_size);
        set(&mut c.train.seed, &self.seed);
        set(&mut c.synth.seed, &self.synth_seed);
        set(&mut c.synth.trials_per_class, &self.trials_per_class);
        set_opt(&mut c.eval.report, &self.report);
        set_opt(&mut c.eval.csv, &self.csv);
        set(&mut c.eval.trial, &self.trial);
        set(&mut c.eval.channels, &self.channels);
        set(&mut c.eval.seed, &self.eval_seed);
    }
}

/// Parses a config document; errors carry line and column or name the unknown key.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
}

/// Defaults, then the file (if any), then `overrides`, then validation.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Parser)]
#[command(name = "veegnet", version, about = "Variational EEGNet: synthetic data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic motor-imagery dataset.
    Generate(GenerateArgs),
    /// Train a model and write it with its per-epoch log.
    Train(TrainArgs),
    /// Write a metrics report for a model on a dataset.
    Evaluate(EvaluateArgs),
    /// Export one trial's reconstruction as CSV.
    Reconstruct(ReconstructArgs),
    /// Print parameter counts with deltas against the reference counts.
    Params(ParamsArgs),
    /// Run the finite-difference gradient battery.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials_per_class: Option<usize>,
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub trial: Option<usize>,
    /// Channel names (e.g. C3, Cz, FCavg); repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    pub channel: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}, expected v1 or v2"))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Generate(a) => {
            let ov = Overrides {
                out: a.out,
                synth_seed: a.seed,
                trials_per_class: a.trials_per_class,
                normalize: a.normalize,
                ..Default::default()
            };
            cmd_generate(&load_config(a.config.as_deref(), &ov)?, out)
        }
        Command::Train(a) => {
            let ov = Overrides {
                variant: a.variant,
                data: a.data,
                model: a.out,
                log: a.log,
                epochs: a.epochs,
                lr: a.lr,
                weight_decay: a.weight_decay,
                batch_size: a.batch_size,
                seed: a.seed,
                normalize: a.normalize,
                ..Default::default()
            };
            cmd_train(&load_config(a.config.as_deref(), &ov)?, out, err)
        }
        Command::Evaluate(a) => {
            let ov = Overrides {
                model: a.model,
                data: a.data,
                report: a.report,
                eval_seed: a.seed,
                normalize: a.normalize,
                ..Default::default()
            };
            cmd_evaluate(&load_config(a.config.as_deref(), &ov)?, out)
        }
        Command::Reconstruct(a) => {
            let ov = Overrides {
                model: a.model,
                data: a.data,
                trial: a.trial,
                channels: (!a.channel.is_empty()).then_some(a.channel),
                csv: a.out,
                eval_seed: a.seed,
                normalize: a.normalize,
                ..Default::default()
            };
            cmd_reconstruct(&load_config(a.config.as_deref(), &ov)?, out)
        }
        Command::Params(a) => cmd_params(a.variant, out),
        Command::Gradcheck(a) => cmd_gradcheck(a.seed, out),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Validation(format!("missing {what} path")))
}

fn load_data(cfg: &RunConfig) -> Result<EpochedDataset> {
    let d = dataset_read(required(&cfg.data.path, "data")?)?;
    Ok(if cfg.data.normalize { minmax_normalize(&d)? } else { d })
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(runtime)
}

pub fn cmd_generate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let path = required(&cfg.data.out, "output")?;
    let mut d = synth_generate(&cfg.synth)?;
    if cfg.data.normalize {
        d = minmax_normalize(&d)?;
    }
    dataset_write(&d, path).map_err(runtime)?;
    say(out, format_args!("wrote {} trials to {}", d.n_trials(), path.display()))
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let model_path = required(&cfg.model.path, "model output")?;
    let log_path = cfg.model.log_path().expect("model path set");
    let data = load_data(cfg)?;
    let mut model = model_init(&cfg.model.model_config(), split(cfg.train.seed, INIT_STREAM))?;
    let mut log = serde_json::to_string(&serde_json::json!({ "config": cfg.echo() })).expect("json") + "\n";
    let history = train(&mut model, &data, &cfg.train, |e| {
        let _ = writeln!(
            out,
            "epoch {:>4}  l_r {:.6}  l_kl {:.6}  l_clf {:.6}  l_total {:.6}",
            e.epoch, e.l_r, e.l_kl, e.l_clf, e.l_total
        );
    })?;
    for w in &history.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    log.push_str(&history.to_jsonl());
    if !model.all_finite() {
        return Err(CliError::Runtime("training produced non-finite parameters".into()));
    }
    model_write(&model, model_path).map_err(runtime)?;
    std::fs::write(&log_path, log).map_err(runtime)?;
    say(out, format_args!("wrote {} and {}", model_path.display(), log_path.display()))
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let report_path = required(&cfg.eval.report, "report")?;
    let mut model = model_read(required(&cfg.model.path, "model")?)?;
    let data = load_data(cfg)?;
    let mut report = evaluate(&mut model, &data, &cfg.eval_options())?;
    report.config = Some(cfg.echo());
    std::fs::write(report_path, report.to_json()).map_err(runtime)?;
    let kappa = report.kappa.map_or("undefined".to_string(), |k| format!("{k:.4}"));
    say(out, format_args!("accuracy {:.4}  kappa {kappa}  mse {:.6} ± {:.6}", report.accuracy, report.mse_avg, report.mse_std))?;
    for b in &report.band_fidelity {
        say(out, format_args!("band {}  r {:.4}  energy_ratio {:.4}  trials {}", b.band, b.pearson_r, b.energy_ratio, b.n_trials))?;
    }
    Ok(())
}

pub fn cmd_reconstruct(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let csv = required(&cfg.eval.csv, "CSV output")?;
    let mut model = model_read(required(&cfg.model.path, "model")?)?;
    let data = load_data(cfg)?;
    let names: Vec<&str> = cfg.eval.channels.iter().map(String::as_str).collect();
    export_reconstruction(&mut model, &data, cfg.eval.trial, &names, csv, cfg.eval.seed)?;
    say(out, format_args!("wrote trial {} to {}", cfg.eval.trial, csv.display()))
}

fn delta_line(out: &mut dyn Write, name: &str, n: usize, reference: usize) -> Result<()> {
    let d = n as i64 - reference as i64;
    say(out, format_args!("{name}={n} (reference {reference}, delta {d:+})"))
}

pub fn cmd_params(variant: Option<Variant>, out: &mut dyn Write) -> Result<()> {
    let variants = variant.map_or(vec![Variant::V1, Variant::V2], |v| vec![v]);
    for v in variants {
        let c = count_parameters(&ModelConfig::for_variant(v));
        say(out, format_args!("variant={v}"))?;
        say(out, format_args!("encoder={}", c.encoder))?;
        say(out, format_args!("decoder={}", c.decoder))?;
        match v {
            Variant::V1 => {
                delta_line(out, "unsupervised", c.encoder + c.decoder, V1_UNSUPERVISED)?;
                delta_line(out, "classifier", c.classifier, V1_CLASSIFIER)?;
                delta_line(out, "total", c.total, V1_TOTAL)?;
            }
            Variant::V2 => {
                say(out, format_args!("unsupervised={}", c.encoder + c.decoder))?;
                delta_line(out, "classifier", c.classifier, V2_CLASSIFIER)?;
                delta_line(out, "total", c.total, V2_TOTAL)?;
            }
        }
    }
    Ok(())
}

pub fn cmd_gradcheck(seed: u64, out: &mut dyn Write) -> Result<()> {
    let mut failed = 0;
    let entries = layer_battery(seed, 1e-3).map_err(runtime)?;
    for e in &entries {
        let ok = e.report.passed();
        failed += usize::from(!ok);
        say(out, format_args!("{} {:<40} worst_rel {:.2e}", if ok { "PASS" } else { "FAIL" }, e.name, e.report.worst_rel_error()))?;
    }
    for v in [Variant::V1, Variant::V2] {
        let model = model_init(&ModelConfig::tiny(v), split(seed, 0xe2e))?;
        let r = end_to_end_grad_check(&model, 4, 0.001, 32, 1e-2, seed)?;
        failed += usize::from(!r.passed());
        let name = format!("l_total[{v}, tiny]");
        say(out, format_args!("{} {:<40} worst_rel {:.2e}", if r.passed() { "PASS" } else { "FAIL" }, name, r.worst_rel_error()))?;
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} gradient checks failed")));
    }
    say(out, format_args!("all {} gradient checks passed", entries.len() + 2))
}
