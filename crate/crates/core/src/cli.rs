//! Command-line front end.
//!
//! Settings come from three layers, later ones winning: a named preset, a
//! flat `key = value` config file, and command-line flags. Every flag is an
//! alias for exactly one config key, so all three layers go through the same
//! parser.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelInstance;
use crate::detectors::{self, DescentMethod};
use crate::error::{Error, Result};
use crate::harness::complexity::{
    closed_form_mults_f64, crossover, Algorithm, ClosedFormParams,
};
use crate::harness::{self, ConvergenceRow, DetectorKind, DetectorSpec, SimConfig, SimReport};
use crate::modem::Constellation;
use crate::rng::StreamKey;
use crate::sampler::{self, InitMode, SamplerParams};
use crate::softout;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "NAGMCMC_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const CSV_HEADER: &str = "snr_db,detector,ber,ser,bits,errors,mean_sa,mults_runtime,mults_closed_form";

pub const PRESETS: [&str; 6] = [
    "table1",
    "fig2-gd-trace",
    "fig3-ablation",
    "fig5-ber",
    "fig6-convergence",
    "fig10-nmse",
];

/// Build identifier recorded in JSON output.
pub fn build_id() -> &'static str {
    option_env!("NAGMCMC_BUILD_ID").unwrap_or(concat!("nagmcmc-", env!("CARGO_PKG_VERSION")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Parser)]
#[command(name = "nagmcmc", version, about = "NAG-MCMC MIMO detection experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// BER/SER against SNR for every configured detector.
    BerSweep(RunArgs),
    /// BER after each sampling iteration.
    Convergence(RunArgs),
    /// Closed-form multiplication counts, crossovers and a runtime counter audit.
    Complexity(RunArgs),
    /// Residual norm along plain line-search descent and Nesterov descent.
    TraceGd(RunArgs),
    /// Per-bit max-log LLRs of the first sampler detector.
    LlrDump(RunArgs),
    /// Quick internal consistency checks.
    Selftest,
}

/// Flags shared by all experiment subcommands. Each one sets the config key
/// of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset applied before the config file.
    #[arg(long)]
    pub preset: Option<String>,
    /// SNR grid in dB: `a,b,c` or `start:stop:step`.
    #[arg(long)]
    pub snr: Option<String>,
    #[arg(long)]
    pub ntx: Option<String>,
    #[arg(long)]
    pub nrx: Option<String>,
    /// QAM order (4, 16 or 64).
    #[arg(long = "mod")]
    pub modulation: Option<String>,
    /// Detector list, e.g. `mmse,nag-sa-es,nag:ng=1:S=128`.
    #[arg(long)]
    pub detectors: Option<String>,
    /// Sampler count P.
    #[arg(long)]
    pub samplers: Option<String>,
    /// Sampling iterations S.
    #[arg(long)]
    pub iters: Option<String>,
    /// Descent steps per random walk.
    #[arg(long)]
    pub ng: Option<String>,
    /// Sample augmentation for plain `nag` entries (on/off).
    #[arg(long)]
    pub sa: Option<String>,
    /// Early stopping for plain `nag` entries (on/off).
    #[arg(long)]
    pub es: Option<String>,
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub rho: Option<String>,
    /// Channel-estimation NMSE; a list runs one sweep per value.
    #[arg(long)]
    pub nmse: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long = "max-bits")]
    pub max_bits: Option<String>,
    #[arg(long = "min-errors")]
    pub min_errors: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub format: Option<String>,
    /// Extra `key=value` settings (repeatable) for keys without a flag.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    fn pairs(&self) -> Vec<(String, String)> {
        let flags = [
            ("snr", &self.snr),
            ("ntx", &self.ntx),
            ("nrx", &self.nrx),
            ("mod", &self.modulation),
            ("detectors", &self.detectors),
            ("samplers", &self.samplers),
            ("iters", &self.iters),
            ("ng", &self.ng),
            ("sa", &self.sa),
            ("es", &self.es),
            ("eta", &self.eta),
            ("beta", &self.beta),
            ("rho", &self.rho),
            ("nmse", &self.nmse),
            ("seed", &self.seed),
            ("max-bits", &self.max_bits),
            ("min-errors", &self.min_errors),
            ("out", &self.out),
            ("format", &self.format),
        ];
        let mut out: Vec<(String, String)> = flags
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for s in &self.set {
            match s.split_once('=') {
                Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
                None => out.push((s.clone(), String::new())),
            }
        }
        out
    }
}

/// Fully merged settings. `None` means "use the default".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub nrx: Option<usize>,
    pub ntx: Option<usize>,
    pub order: Option<usize>,
    pub snr: Option<Vec<f64>>,
    pub detectors: Option<Vec<String>>,
    pub samplers: Option<usize>,
    pub iters: Option<usize>,
    pub ng: Option<usize>,
    pub sa: Option<bool>,
    pub es: Option<bool>,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub rho: Option<f64>,
    pub init: Option<InitMode>,
    pub carry_momentum: Option<bool>,
    pub acceptance_temperature: Option<bool>,
    pub nmse: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub max_bits: Option<u64>,
    pub min_errors: Option<u64>,
    pub min_bits: Option<u64>,
    pub batch: Option<usize>,
    pub workers: Option<usize>,
    pub smax: Option<usize>,
    pub trials: Option<usize>,
    pub steps: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Every key accepted in config files and by `--set`.
pub const KEYS: [&str; 29] = [
    "nrx",
    "ntx",
    "mod",
    "snr",
    "detectors",
    "samplers",
    "iters",
    "ng",
    "sa",
    "es",
    "eta",
    "beta",
    "rho",
    "init",
    "carry-momentum",
    "acceptance-temperature",
    "nmse",
    "seed",
    "max-bits",
    "min-errors",
    "min-bits",
    "batch",
    "workers",
    "smax",
    "trials",
    "steps",
    "sizes",
    "out",
    "format",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    let v = v.trim().replace('_', "");
    // Accept scientific notation for integer budgets such as 1e8.
    if let Ok(x) = v.parse::<T>() {
        return Ok(x);
    }
    if let Ok(f) = v.parse::<f64>() {
        if f.fract() == 0.0 && f >= 0.0 {
            if let Ok(x) = format!("{f:.0}").parse::<T>() {
                return Ok(x);
            }
        }
    }
    Err(format!("{key}: cannot parse {v:?} as a number"))
}

fn parse_f64(key: &str, v: &str) -> std::result::Result<f64, String> {
    match v.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        s => s.parse::<f64>().map_err(|_| format!("{key}: cannot parse {v:?} as a number")),
    }
}

fn parse_bool(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "on" | "true" | "yes" => Ok(true),
        "0" | "off" | "false" | "no" => Ok(false),
        _ => Err(format!("{key}: expected on/off, got {v:?}")),
    }
}

/// `a,b,c` or `start:stop:step` (inclusive).
fn parse_f64_list(key: &str, v: &str) -> std::result::Result<Vec<f64>, String> {
    let v = v.trim();
    if v.contains(':') {
        let parts: Vec<&str> = v.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("{key}: range must be start:stop:step, got {v:?}"));
        }
        let (a, b, s) = (
            parse_f64(key, parts[0])?,
            parse_f64(key, parts[1])?,
            parse_f64(key, parts[2])?,
        );
        if s.is_nan() || s <= 0.0 || !a.is_finite() || !b.is_finite() || b < a {
            return Err(format!("{key}: bad range {v:?}"));
        }
        let n = ((b - a) / s + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| a + i as f64 * s).collect());
    }
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_f64(key, s)).collect()
}

impl Settings {
    /// Sets one key; unknown keys and malformed values are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "nrx" => self.nrx = Some(parse_num(key, v)?),
            "ntx" => self.ntx = Some(parse_num(key, v)?),
            "mod" => self.order = Some(parse_num(key, v)?),
            "snr" => self.snr = Some(parse_f64_list(key, v)?),
            "detectors" => {
                self.detectors = Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            }
            "samplers" => self.samplers = Some(parse_num(key, v)?),
            "iters" => self.iters = Some(parse_num(key, v)?),
            "ng" => self.ng = Some(parse_num(key, v)?),
            "sa" => self.sa = Some(parse_bool(key, v)?),
            "es" => self.es = Some(parse_bool(key, v)?),
            "eta" => self.eta = Some(parse_f64(key, v)?),
            "beta" => self.beta = Some(parse_f64(key, v)?),
            "rho" => self.rho = Some(parse_f64(key, v)?),
            "init" => {
                self.init = Some(match v {
                    "random" => InitMode::RandomConstellation,
                    "mmse" => InitMode::Mmse,
                    _ => return Err(format!("init: expected random or mmse, got {v:?}")),
                })
            }
            "carry-momentum" => self.carry_momentum = Some(parse_bool(key, v)?),
            "acceptance-temperature" => self.acceptance_temperature = Some(parse_bool(key, v)?),
            "nmse" => self.nmse = Some(parse_f64_list(key, v)?),
            "seed" => self.seed = Some(parse_num(key, v)?),
            "max-bits" => self.max_bits = Some(parse_num(key, v)?),
            "min-errors" => self.min_errors = Some(parse_num(key, v)?),
            "min-bits" => self.min_bits = Some(parse_num(key, v)?),
            "batch" => self.batch = Some(parse_num(key, v)?),
            "workers" => self.workers = Some(parse_num(key, v)?),
            "smax" => self.smax = Some(parse_num(key, v)?),
            "trials" => self.trials = Some(parse_num(key, v)?),
            "steps" => self.steps = Some(parse_num(key, v)?),
            "sizes" => {
                self.sizes = Some(
                    v.split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse_num(key, s))
                        .collect::<std::result::Result<_, _>>()?,
                )
            }
            "out" => self.out = Some(PathBuf::from(v)),
            "format" => {
                self.format = Some(match v.to_ascii_lowercase().as_str() {
                    "csv" => Format::Csv,
                    "json" => Format::Json,
                    "both" => Format::Both,
                    _ => return Err(format!("format: expected csv, json or both, got {v:?}")),
                })
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut errors = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.apply(k.trim(), v) {
                        errors.push(format!("{origin}:{}: {e}", n + 1));
                    }
                }
                None => errors.push(format!("{origin}:{}: expected key = value, got {line:?}", n + 1)),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Preset, then config file, then flags.
    pub fn from_args(args: &RunArgs) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(p) = &args.preset {
            s.apply_text(preset_text(p)?, &format!("preset {p}"))?;
        }
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            s.apply_text(&text, &path.display().to_string())?;
        }
        let mut errors = Vec::new();
        for (k, v) in args.pairs() {
            if let Err(e) = s.apply(&k, &v) {
                errors.push(format!("--{k}: {e}"));
            }
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        if s.workers.is_none() {
            if let Ok(w) = std::env::var(WORKERS_ENV) {
                s.apply("workers", &w).map_err(|e| Error::Config(vec![format!("{WORKERS_ENV}: {e}")]))?;
            }
        }
        Ok(s)
    }

    fn base_sampler(&self) -> SamplerParams {
        let d = SamplerParams::default();
        SamplerParams {
            samplers: self.samplers.unwrap_or(d.samplers),
            iterations: self.iters.unwrap_or(d.iterations),
            gd_steps: self.ng.unwrap_or(d.gd_steps),
            momentum: self.rho.unwrap_or(d.momentum),
            step_coeff: self.beta.or(d.step_coeff),
            es_threshold: self.eta.unwrap_or(d.es_threshold),
            sample_augmentation: self.sa.unwrap_or(false),
            early_stopping: self.es.unwrap_or(false),
            init: self.init.unwrap_or(d.init),
            carry_momentum: self.carry_momentum.unwrap_or(d.carry_momentum),
            acceptance_temperature: self.acceptance_temperature.unwrap_or(d.acceptance_temperature),
        }
    }

    /// Parses one detector token `name[:key=value]*`.
    pub fn detector(&self, token: &str) -> std::result::Result<DetectorSpec, String> {
        let mut parts = token.split(':');
        let name = parts.next().unwrap_or("").trim();
        let mut p = self.base_sampler();
        let base = match name {
            "zf" => return plain(DetectorSpec::zf(), parts.next(), token),
            "mmse" => return plain(DetectorSpec::mmse(), parts.next(), token),
            "ml" => return plain(DetectorSpec::ml(), parts.next(), token),
            "nag" => None,
            "nag-sa" => Some((true, false)),
            "nag-es" => Some((false, true)),
            "nag-sa-es" => Some((true, true)),
            _ => return Err(format!("unknown detector {name:?} in {token:?}")),
        };
        if let Some((sa, es)) = base {
            p.sample_augmentation = sa;
            p.early_stopping = es;
        }
        let mut label = None;
        let mut suffix = String::new();
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("detector option {kv:?} in {token:?} is not key=value"))?;
            match k {
                "S" | "iters" => p.iterations = parse_num(k, v)?,
                "ng" => p.gd_steps = parse_num(k, v)?,
                "P" | "samplers" => p.samplers = parse_num(k, v)?,
                "rho" => p.momentum = parse_f64(k, v)?,
                "beta" => p.step_coeff = Some(parse_f64(k, v)?),
                "eta" => p.es_threshold = parse_f64(k, v)?,
                "label" => {
                    label = Some(v.to_string());
                    continue;
                }
                _ => return Err(format!("unknown detector option {k:?} in {token:?}")),
            }
            let _ = write!(suffix, "-{k}{v}");
        }
        let spec = DetectorSpec::nag(p);
        let auto = format!("{}{suffix}", spec.label);
        Ok(spec.with_label(label.unwrap_or(auto)))
    }

    /// The sweep configuration for NMSE level `nmse`.
    pub fn sim_config(&self, nmse: f64) -> Result<SimConfig> {
        let d = SimConfig::default();
        let mut errors = Vec::new();
        let tokens = self
            .detectors
            .clone()
            .unwrap_or_else(|| vec!["mmse".to_string(), "nag-sa-es".to_string()]);
        let mut detectors = Vec::new();
        for t in &tokens {
            match self.detector(t) {
                Ok(s) => detectors.push(s),
                Err(e) => errors.push(e),
            }
        }
        let cfg = SimConfig {
            nr: self.nrx.unwrap_or(d.nr),
            nt: self.ntx.unwrap_or(d.nt),
            order: self.order.unwrap_or(d.order),
            snr_grid_db: self.snr.clone().unwrap_or(d.snr_grid_db),
            detectors,
            max_bits: self.max_bits.unwrap_or(d.max_bits),
            min_errors: self.min_errors.unwrap_or(d.min_errors),
            min_bits: self.min_bits.unwrap_or(d.min_bits),
            nmse,
            seed: self.seed.unwrap_or(d.seed),
            batch_size: self.batch.unwrap_or(d.batch_size),
            workers: self.workers.unwrap_or(0),
            verbose: false,
        };
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// One config per NMSE level.
    pub fn sim_configs(&self) -> Result<Vec<SimConfig>> {
        let levels = self.nmse.clone().unwrap_or_else(|| vec![0.0]);
        if levels.is_empty() {
            return Err(Error::Config(vec!["nmse list is empty".into()]));
        }
        levels.iter().map(|&n| self.sim_config(n)).collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }
}

fn plain(spec: DetectorSpec, opt: Option<&str>, token: &str) -> std::result::Result<DetectorSpec, String> {
    match opt {
        None => Ok(spec),
        Some(kv) => match kv.split_once('=') {
            Some(("label", l)) => Ok(spec.with_label(l)),
            _ => Err(format!("detector {token:?}: only a label option is allowed")),
        },
    }
}

/// Config text of a named preset.
///
/// Trial budgets are reduced from the 10⁸-bit scale where noted.
pub fn preset_text(name: &str) -> Result<&'static str> {
    Ok(match name {
        // Full 10⁸-bit budget: ES effect on S_a and BER.
        "table1" => {
            "nrx = 8\nntx = 8\nmod = 16\nsnr = 25\nsamplers = 16\nng = 8\n\
             detectors = nag-sa:S=6, nag-sa-es:S=6, nag-sa:S=8, nag-sa-es:S=8, \
             nag-sa:S=10, nag-sa-es:S=10, nag-sa:S=12, nag-sa-es:S=12\n\
             max-bits = 1e8\nmin-errors = 100\n"
        }
        // Residual-norm traces over 1000 random channels.
        "fig2-gd-trace" => "nrx = 8\nntx = 8\nmod = 16\nsnr = 20\nsteps = 30\ntrials = 1000\n",
        // One descent step per walk against eight; budget capped at 1e7 bits per point.
        "fig3-ablation" => {
            "nrx = 8\nntx = 8\nmod = 16\nsnr = 10:30:2\nsamplers = 16\n\
             detectors = nag:ng=1:S=128, nag:ng=8:S=16\nmax-bits = 1e7\nmin-errors = 100\n"
        }
        // BER curves; budget capped at 1e7 bits per point.
        "fig5-ber" => {
            "nrx = 8\nntx = 8\nmod = 16\nsnr = 10:30:2\nsamplers = 16\nng = 8\niters = 8\n\
             detectors = mmse, nag, nag-sa, nag-sa-es\nmax-bits = 1e7\nmin-errors = 100\n"
        }
        // BER against iteration count up to 60; budget capped at 1e7 bits.
        "fig6-convergence" => {
            "nrx = 8\nntx = 8\nmod = 16\nsnr = 25\nsamplers = 16\nsmax = 60\n\
             detectors = nag:ng=8, nag-sa:ng=8\nmax-bits = 1e7\nmin-errors = 100\n"
        }
        // Imperfect CSI; budget capped at 1e7 bits per point.
        "fig10-nmse" => {
            "nrx = 8\nntx = 8\nmod = 16\nsnr = 20\nsamplers = 16\nng = 8\niters = 8\n\
             nmse = 0, 0.001, 0.01, 0.05\ndetectors = mmse, nag-sa-es\nmax-bits = 1e7\nmin-errors = 100\n"
        }
        _ => {
            return Err(Error::Config(vec![format!(
                "unknown preset {name:?}; available: {}",
                PRESETS.join(", ")
            )]))
        }
    })
}

/// `%g`-style formatting with 6 significant digits.
pub fn fmt_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let s = format!("{x:.5e}");
    let (mant, exp) = s.split_once('e').expect("exponent");
    let e: i32 = exp.parse().expect("exponent");
    let trim = |m: &str| -> String {
        if m.contains('.') {
            m.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            m.to_string()
        }
    };
    if (-4..6).contains(&e) {
        let decimals = (5 - e).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim(mant), if e < 0 { '-' } else { '+' }, e.abs())
    }
}

/// CSV body of a sweep with the fixed header.
pub fn report_csv(report: &SimReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_g6(r.snr_db),
            r.detector,
            fmt_g6(r.ber),
            fmt_g6(r.ser),
            r.bits,
            r.errors,
            fmt_g6(r.mean_sa),
            fmt_g6(r.mults_runtime),
            r.mults_closed_form.map(fmt_g6).unwrap_or_default(),
        );
    }
    out
}

/// JSON document: build id, seed, config echo and rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub build_id: String,
    pub seed: u64,
    #[serde(flatten)]
    pub report: SimReport,
}

pub fn report_json(report: &SimReport) -> String {
    let doc = JsonReport {
        build_id: build_id().to_string(),
        seed: report.config.seed,
        report: report.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
}

/// Parses a JSON report and re-validates its config.
pub fn parse_report_json(text: &str) -> Result<JsonReport> {
    let doc: JsonReport = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("json: {e}")]))?;
    doc.report.config.validate()?;
    Ok(doc)
}

fn write_file(path: &Path, body: &str) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        }
    }
    fs::write(path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

/// Writes `<stem>.csv` and/or `<stem>.json` under `dir`.
pub fn emit_report(report: &SimReport, format: Format, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if matches!(format, Format::Csv | Format::Both) {
        written.push(write_file(&dir.join(format!("{stem}.csv")), &report_csv(report))?);
    }
    if matches!(format, Format::Json | Format::Both) {
        written.push(write_file(&dir.join(format!("{stem}.json")), &report_json(report))?);
    }
    Ok(written)
}

fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("snr_db,detector,iteration,ber,bits,errors\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_g6(r.snr_db),
            r.detector,
            r.iteration,
            fmt_g6(r.ber),
            r.bits,
            r.errors
        );
    }
    out
}

fn nmse_stem(base: &str, nmse: f64, many: bool) -> String {
    if many {
        format!("{base}_nmse{}", fmt_g6(nmse))
    } else {
        base.to_string()
    }
}

fn cmd_ber_sweep(s: &Settings) -> Result<Vec<PathBuf>> {
    let configs = s.sim_configs()?;
    let many = configs.len() > 1;
    let mut written = Vec::new();
    for mut cfg in configs {
        cfg.verbose = true;
        let report = harness::run_ber_sweep(&cfg)?;
        written.extend(emit_report(&report, s.format(), &s.out_dir(), &nmse_stem("ber_sweep", cfg.nmse, many))?);
    }
    Ok(written)
}

fn cmd_convergence(s: &Settings) -> Result<Vec<PathBuf>> {
    let configs = s.sim_configs()?;
    let many = configs.len() > 1;
    let s_max = s.smax.unwrap_or(60);
    let mut written = Vec::new();
    for mut cfg in configs {
        cfg.verbose = true;
        let rows = harness::convergence_trace(&cfg, s_max)?;
        let stem = nmse_stem("convergence", cfg.nmse, many);
        let dir = s.out_dir();
        if matches!(s.format(), Format::Csv | Format::Both) {
            written.push(write_file(&dir.join(format!("{stem}.csv")), &convergence_csv(&rows))?);
        }
        if matches!(s.format(), Format::Json | Format::Both) {
            let doc = serde_json::json!({ "build_id": build_id(), "seed": cfg.seed, "config": cfg, "rows": rows });
            written.push(write_file(
                &dir.join(format!("{stem}.json")),
                &(serde_json::to_string_pretty(&doc).expect("serializes") + "\n"),
            )?);
        }
    }
    Ok(written)
}

fn cmd_complexity(s: &Settings) -> Result<Vec<PathBuf>> {
    let sizes = s.sizes.clone().unwrap_or_else(|| vec![8, 16, 32, 64, 128, 256]);
    let p = s.base_sampler();
    let order = s.order.unwrap_or(16);
    let sa_es_iterations = 5.0;
    let params = |n: usize, iterations: f64| ClosedFormParams {
        n,
        order,
        samplers: p.samplers,
        iterations,
        gd_steps: p.gd_steps,
        ep_iterations: 10,
    };
    let s_preset = p.iterations as f64;
    let count = |alg: Algorithm, n: usize| {
        let it = if alg == Algorithm::NagMcmcSaEs { sa_es_iterations } else { s_preset };
        closed_form_mults_f64(alg, &params(n, it))
    };
    let mut csv = String::from("n,algorithm,mults,analytic_only\n");
    let algs = [
        Algorithm::Mmse,
        Algorithm::Ep,
        Algorithm::Mhgd,
        Algorithm::NagMcmc,
        Algorithm::NagMcmcSaEs,
    ];
    for &n in &sizes {
        for alg in algs {
            let _ = writeln!(csv, "{n},{alg},{},{}", fmt_g6(count(alg, n).round()), alg.is_analytic_only());
        }
    }
    let cross = |b: Algorithm| {
        crossover(2..=512, |n| count(Algorithm::NagMcmcSaEs, n), |n| count(b, n))
            .map(|n| n.to_string())
            .unwrap_or_else(|| "none".into())
    };
    println!("crossover nag-mcmc-sa-es vs mhgd: N = {}", cross(Algorithm::Mhgd));
    println!("crossover nag-mcmc-sa-es vs ep:   N = {}", cross(Algorithm::Ep));
    println!(
        "nag-mcmc-sa-es / mmse at N = 256: {:.4}",
        count(Algorithm::NagMcmcSaEs, 256) / count(Algorithm::Mmse, 256)
    );

    let snr = s.snr.as_ref().and_then(|v| v.first().copied()).unwrap_or(25.0);
    let trials = s.trials.unwrap_or(50);
    let mut audit_csv = String::from("n,phase,runtime,closed_form,ratio\n");
    for &n in sizes.iter().filter(|&&n| n <= 64) {
        let audit = harness::runtime_counter_audit(n, order, &p, snr, trials, s.seed.unwrap_or(1))?;
        for ph in &audit.phases {
            let _ = writeln!(
                audit_csv,
                "{n},{},{},{},{}",
                ph.phase.name(),
                fmt_g6(ph.runtime),
                fmt_g6(ph.closed_form),
                fmt_g6(ph.ratio)
            );
        }
    }
    let dir = s.out_dir();
    Ok(vec![
        write_file(&dir.join("complexity.csv"), &csv)?,
        write_file(&dir.join("counter_audit.csv"), &audit_csv)?,
    ])
}

fn cmd_trace_gd(s: &Settings) -> Result<Vec<PathBuf>> {
    let nr = s.nrx.unwrap_or(8);
    let nt = s.ntx.unwrap_or(8);
    let con = Constellation::new(s.order.unwrap_or(16))?;
    let snr = s.snr.as_ref().and_then(|v| v.first().copied()).unwrap_or(20.0);
    let steps = s.steps.unwrap_or(30);
    let trials = s.trials.unwrap_or(1000);
    let seed = s.seed.unwrap_or(1);
    let methods = [
        DescentMethod::NaiveLinesearch,
        DescentMethod::Nesterov,
        DescentMethod::NesterovFixed,
    ];
    let mut sums = vec![vec![0.0; steps + 1]; methods.len()];
    let mut wins = [0usize; 2];
    for t in 0..trials as u64 {
        let key = StreamKey::new(seed, 0, t);
        let inst = ChannelInstance::generate(nr, nt, &con, snr, 0.0, &key)?;
        let z0 = vec![num_complex::Complex64::new(0.0, 0.0); nt];
        let mut last = [0.0; 3];
        for (i, m) in methods.iter().enumerate() {
            let tr = detectors::descent_trace(&inst.h, &inst.y, &z0, *m, steps)?;
            sums[i].iter_mut().zip(&tr.residual_norms).for_each(|(a, r)| *a += r);
            last[i] = tr.residual_norms[steps];
        }
        for (w, l) in wins.iter_mut().zip(&last[1..]) {
            *w += usize::from(*l <= last[0]);
        }
    }
    let mut csv = String::from("t,method,mean_residual_norm\n");
    for (m, acc) in methods.iter().zip(&sums) {
        for (t, a) in acc.iter().enumerate() {
            let _ = writeln!(csv, "{t},{},{}", m.name(), fmt_g6(a / trials as f64));
        }
    }
    println!("nesterov <= naive at t = {steps}: {}/{trials}", wins[0]);
    println!("nesterov-fixed <= naive at t = {steps}: {}/{trials}", wins[1]);
    Ok(vec![write_file(&s.out_dir().join("trace_gd.csv"), &csv)?])
}

fn cmd_llr_dump(s: &Settings) -> Result<Vec<PathBuf>> {
    let cfg = s.sim_config(s.nmse.as_ref().and_then(|v| v.first().copied()).unwrap_or(0.0))?;
    let spec = cfg
        .detectors
        .iter()
        .find(|d| matches!(d.kind, DetectorKind::NagMcmc(_)))
        .ok_or_else(|| Error::Config(vec!["llr-dump needs a nag detector".into()]))?;
    let params = spec.sampler_params().expect("sampler detector");
    let con = Constellation::new(cfg.order)?;
    let snr = cfg.snr_grid_db[0];
    let trials = s.trials.unwrap_or(100);
    let mut csv = format!("{}\n", softout::LLR_CSV_HEADER);
    for t in 0..trials as u64 {
        let key = StreamKey::new(cfg.seed, 0, t);
        let inst = ChannelInstance::generate(cfg.nr, cfg.nt, &con, snr, cfg.nmse, &key)?;
        let ctx = sampler::precompute_or_identity(&inst.h_est, &inst.y, inst.sigma2, &con)?;
        let res = sampler::run_detector(&ctx, params, &mut key.sampler_streams(params.samplers));
        let llr = softout::compute_llrs(&res.samples, inst.sigma2, None, &con)?;
        csv.push_str(&llr.csv_rows(t));
    }
    Ok(vec![write_file(&s.out_dir().join("llr_dump.csv"), &csv)?])
}

/// Runs quick consistency checks; returns the failures.
pub fn selftest() -> Vec<String> {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    let c16 = Constellation::new(16).expect("16-QAM");
    check(c16.label(0) == 0b0000 && c16.label(15) == 0b1010, "16-QAM gray labels");
    check((c16.scale() - 0.1f64.sqrt()).abs() < 1e-15, "16-QAM scale");
    let cf = |alg, n, s| closed_form_mults_f64(alg, &ClosedFormParams::scaling(n, s)).round();
    check(cf(Algorithm::Mmse, 8, 8.0) == 1680.0, "MMSE closed form");
    check(cf(Algorithm::NagMcmc, 8, 8.0) == 113_765.0, "NAG-MCMC closed form");
    let c4 = Constellation::new(4).expect("4-QAM");
    let mut agree = 0;
    for t in 0..200 {
        let key = StreamKey::new(7, 0, t);
        let Ok(inst) = ChannelInstance::generate(2, 2, &c4, 15.0, 0.0, &key) else {
            continue;
        };
        let ml = detectors::detect_ml_exhaustive(&inst.h, &inst.y, &c4);
        let ctx = sampler::precompute_or_identity(&inst.h, &inst.y, inst.sigma2, &c4);
        if let (Ok(ml), Ok(ctx)) = (ml, ctx) {
            let p = SamplerParams {
                samplers: 4,
                iterations: 16,
                ..SamplerParams::enhanced()
            };
            if sampler::run_detector(&ctx, &p, &mut key.sampler_streams(4)).symbols == ml.symbols {
                agree += 1;
            }
        }
    }
    check(agree >= 198, "2x2 4-QAM agreement with exhaustive ML");
    failures
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    type Handler = fn(&Settings) -> Result<Vec<PathBuf>>;
    let (args, f): (&RunArgs, Handler) = match &cli.command {
        Command::BerSweep(a) => (a, cmd_ber_sweep),
        Command::Convergence(a) => (a, cmd_convergence),
        Command::Complexity(a) => (a, cmd_complexity),
        Command::TraceGd(a) => (a, cmd_trace_gd),
        Command::LlrDump(a) => (a, cmd_llr_dump),
        Command::Selftest => {
            let failures = selftest();
            for f in &failures {
                eprintln!("selftest failed: {f}");
            }
            if failures.is_empty() {
                println!("selftest passed");
                return EXIT_OK;
            }
            return EXIT_RUNTIME;
        }
    };
    let settings = match Settings::from_args(args) {
        Ok(s) => s,
        Err(e) => return report_error(&e),
    };
    match f(&settings) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            EXIT_OK
        }
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> i32 {
    match e {
        Error::Config(list) => {
            eprintln!("invalid configuration:");
            for m in list {
                eprintln!("  - {m}");
            }
            EXIT_VALIDATION
        }
        Error::UnsupportedOrder(_) | Error::UnknownAlgorithm(_) => {
            eprintln!("invalid configuration: {e}");
            EXIT_VALIDATION
        }
        _ => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
