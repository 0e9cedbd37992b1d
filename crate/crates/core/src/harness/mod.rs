//! Monte-Carlo driver: BER/SER sweeps, convergence traces and counter audits.
//!
//! Trials are processed in fixed-size batches. Each trial draws everything
//! from streams keyed by `(seed, SNR index, trial index)`, so all detectors in
//! a configuration see the same channels, payloads and noise, and sampler
//! variants that differ only in their stopping rule share chain randomness.
//! Batch outcomes are reduced in trial order, which keeps reports identical
//! for any worker count.

pub mod complexity;
pub mod stats;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelInstance;
use crate::detectors::{self, ML_SEARCH_CAP};
use crate::error::{Error, Result};
use crate::modem::Constellation;
use crate::rng::StreamKey;
use crate::sampler::{self, DetectorOptions, SamplerParams};
use complexity::{closed_form_mults_f64, nag_closed_form_phases, Algorithm, ClosedFormParams, OpCounter, Phase};
pub use stats::wilson_interval;

/// Trials per batch; stopping rules are evaluated between batches.
pub const DEFAULT_BATCH: usize = 512;

/// Which detector a report row belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DetectorKind {
    Zf,
    Mmse,
    Ml,
    NagMcmc(SamplerParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub label: String,
    pub kind: DetectorKind,
}

impl DetectorSpec {
    pub fn zf() -> Self {
        Self {
            label: "zf".into(),
            kind: DetectorKind::Zf,
        }
    }

    pub fn mmse() -> Self {
        Self {
            label: "mmse".into(),
            kind: DetectorKind::Mmse,
        }
    }

    pub fn ml() -> Self {
        Self {
            label: "ml".into(),
            kind: DetectorKind::Ml,
        }
    }

    /// Sampler detector labelled `nag-mcmc[-sa][-es]`.
    pub fn nag(params: SamplerParams) -> Self {
        let mut label = String::from("nag-mcmc");
        if params.sample_augmentation {
            label.push_str("-sa");
        }
        if params.early_stopping {
            label.push_str("-es");
        }
        Self {
            label,
            kind: DetectorKind::NagMcmc(params),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn sampler_params(&self) -> Option<&SamplerParams> {
        match &self.kind {
            DetectorKind::NagMcmc(p) => Some(p),
            _ => None,
        }
    }

    /// Table-level closed-form count per detection, when one applies.
    pub fn closed_form(&self, nr: usize, nt: usize, order: usize, mean_iterations: f64) -> Option<f64> {
        if nr != nt {
            return None;
        }
        match &self.kind {
            DetectorKind::Zf | DetectorKind::Mmse => {
                Some(closed_form_mults_f64(Algorithm::Mmse, &ClosedFormParams::scaling(nt, 0.0)))
            }
            DetectorKind::Ml => None,
            DetectorKind::NagMcmc(p) => {
                let cf = ClosedFormParams {
                    n: nt,
                    order,
                    samplers: p.samplers,
                    iterations: mean_iterations,
                    gd_steps: p.gd_steps,
                    ep_iterations: 0,
                };
                let alg = if p.sample_augmentation {
                    Algorithm::NagMcmcSaEs
                } else {
                    Algorithm::NagMcmc
                };
                Some(closed_form_mults_f64(alg, &cf))
            }
        }
    }
}

impl fmt::Display for DetectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

mod snr_serde {
    //! SNR values as JSON numbers, with `+∞` written as the string `"inf"`.
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else {
            Repr::Text(if v > 0.0 { "inf" } else { "-inf" }.into())
        }
    }

    fn from_repr<E: de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(E::custom(format!("bad SNR value {s:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}

/// Everything a sweep needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub nr: usize,
    pub nt: usize,
    pub order: usize,
    #[serde(with = "snr_serde::list")]
    pub snr_grid_db: Vec<f64>,
    pub detectors: Vec<DetectorSpec>,
    /// Hard cap on transmitted bits per SNR point and detector.
    pub max_bits: u64,
    /// Stop once this many bit errors are reached ...
    pub min_errors: u64,
    /// ... and at least this many bits were sent.
    pub min_bits: u64,
    /// Channel-estimation NMSE (0 = perfect CSI).
    pub nmse: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub workers: usize,
    /// Per-point progress lines on stderr.
    #[serde(default)]
    pub verbose: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nr: 8,
            nt: 8,
            order: 16,
            snr_grid_db: vec![25.0],
            detectors: vec![DetectorSpec::nag(SamplerParams::enhanced())],
            max_bits: 100_000_000,
            min_errors: 100,
            min_bits: 100_000,
            nmse: 0.0,
            seed: 1,
            batch_size: DEFAULT_BATCH,
            workers: 0,
            verbose: false,
        }
    }
}

impl SimConfig {
    /// Every violated constraint, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.nr == 0 || self.nt == 0 {
            v.push(format!("antenna counts must be positive, got nr={} nt={}", self.nr, self.nt));
        }
        if let Err(e) = Constellation::new(self.order) {
            v.push(e.to_string());
        }
        if self.snr_grid_db.is_empty() {
            v.push("SNR grid is empty".into());
        }
        if self.snr_grid_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            v.push("SNR grid contains NaN or -inf".into());
        }
        if self.detectors.is_empty() {
            v.push("no detector selected".into());
        }
        if self.max_bits == 0 {
            v.push("max bits must be positive".into());
        }
        if self.batch_size == 0 {
            v.push("batch size must be positive".into());
        }
        if !(self.nmse >= 0.0 && self.nmse.is_finite()) {
            v.push(format!("nmse = {} must be a non-negative number", self.nmse));
        }
        let mut labels = std::collections::HashSet::new();
        for d in &self.detectors {
            if !labels.insert(d.label.as_str()) {
                v.push(format!("duplicate detector label {:?}", d.label));
            }
            match &d.kind {
                DetectorKind::Zf if self.nt > self.nr => v.push(format!(
                    "zf needs nt <= nr (full column rank), got nt={} nr={}",
                    self.nt, self.nr
                )),
                DetectorKind::Ml => {
                    let space = (self.order as u128).checked_pow(self.nt as u32).unwrap_or(u128::MAX);
                    if space > ML_SEARCH_CAP {
                        v.push(format!("ml search space {space} exceeds the cap of {ML_SEARCH_CAP}"));
                    }
                }
                DetectorKind::NagMcmc(p) => {
                    v.extend(p.violations().into_iter().map(|m| format!("{}: {m}", d.label)));
                }
                _ => {}
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn bits_per_trial(&self) -> u64 {
        (self.nt * self.order.trailing_zeros() as usize) as u64
    }

    fn done(&self, bits: u64, errors: u64) -> bool {
        bits >= self.max_bits || (errors >= self.min_errors && bits >= self.min_bits)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(vec![format!("thread pool: {e}")]))
    }
}

/// Outcome of one detector on one trial.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialOutcome {
    pub bit_errors: u64,
    pub symbol_errors: u64,
    /// Executed sampling iterations (0 for non-sampling detectors).
    pub iterations: usize,
    pub ops: OpCounter,
    /// Bit errors of the pooled decision after each sampling iteration.
    pub convergence: Option<Vec<u64>>,
}

fn count_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

/// Runs `spec` on one channel instance.
pub fn detect_trial(
    spec: &DetectorSpec,
    inst: &ChannelInstance,
    constellation: &Constellation,
    key: &StreamKey,
    record_convergence: bool,
) -> Result<TrialOutcome> {
    let score = |symbols: &[u8]| {
        let bits = constellation.bits_of(symbols);
        (
            count_errors(&bits, &inst.bits_true),
            count_errors(symbols, &inst.symbols_true),
        )
    };
    let (symbols, iterations, ops, convergence) = match &spec.kind {
        DetectorKind::Zf => {
            let d = detectors::detect_zf(&inst.h_est, &inst.y, constellation)?;
            (d.symbols, 0, d.ops, None)
        }
        DetectorKind::Mmse => {
            let d = detectors::detect_mmse(&inst.h_est, &inst.y, inst.sigma2, constellation)?;
            (d.symbols, 0, d.ops, None)
        }
        DetectorKind::Ml => {
            let d = detectors::detect_ml_exhaustive(&inst.h_est, &inst.y, constellation)?;
            (d.symbols, 0, OpCounter::new(), None)
        }
        DetectorKind::NagMcmc(p) => {
            let ctx = sampler::precompute_or_identity(&inst.h_est, &inst.y, inst.sigma2, constellation)?;
            let mut rngs = key.sampler_streams(p.samplers);
            let res = sampler::run_detector_with(
                &ctx,
                p,
                &mut rngs,
                DetectorOptions {
                    record_convergence,
                    record_trace: false,
                },
            );
            let conv = res.convergence.as_ref().map(|c| {
                let mut errs: Vec<u64> = c.iter().map(|b| score(&b.symbols).0).collect();
                // After an early stop the decision is frozen.
                let last = *errs.last().unwrap_or(&0);
                errs.resize(p.iterations, last);
                errs
            });
            (res.symbols, res.iterations, res.ops, conv)
        }
    };
    let (bit_errors, symbol_errors) = score(&symbols);
    Ok(TrialOutcome {
        bit_errors,
        symbol_errors,
        iterations,
        ops,
        convergence,
    })
}

/// One row of a [`SimReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub detector: String,
    pub ber: f64,
    pub ser: f64,
    pub bits: u64,
    pub errors: u64,
    pub symbols: u64,
    pub symbol_errors: u64,
    pub trials: u64,
    pub mean_sa: f64,
    /// Runtime-counted multiplications per detection.
    pub mults_runtime: f64,
    /// Closed-form multiplications per detection (at the measured `S_a`).
    pub mults_closed_form: Option<f64>,
    pub ber_ci_low: f64,
    pub ber_ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub rows: Vec<ReportRow>,
}

impl SimReport {
    pub fn row(&self, snr_db: f64, detector: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.snr_db == snr_db && r.detector == detector)
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    trials: u64,
    bit_errors: u64,
    symbol_errors: u64,
    iterations: u64,
    ops: OpCounter,
    convergence: Vec<u64>,
    active: bool,
}

impl Tally {
    fn absorb(&mut self, o: &TrialOutcome) {
        self.trials += 1;
        self.bit_errors += o.bit_errors;
        self.symbol_errors += o.symbol_errors;
        self.iterations += o.iterations as u64;
        self.ops.add(&o.ops);
        if let Some(c) = &o.convergence {
            if self.convergence.is_empty() {
                self.convergence = vec![0; c.len()];
            }
            self.convergence.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
    }
}

/// Runs every detector at one SNR point until its stopping rule fires.
fn run_point(
    config: &SimConfig,
    constellation: &Constellation,
    snr_index: usize,
    record_convergence: bool,
    pool: &rayon::ThreadPool,
) -> Result<Vec<Tally>> {
    let snr_db = config.snr_grid_db[snr_index];
    let bpt = config.bits_per_trial();
    let mut tallies: Vec<Tally> = config
        .detectors
        .iter()
        .map(|_| Tally {
            active: true,
            ..Tally::default()
        })
        .collect();
    let stop_errors = |t: &Tally| match (record_convergence, t.convergence.last()) {
        (true, Some(&e)) => e,
        _ => t.bit_errors,
    };
    let mut next_trial: u64 = 0;
    while tallies.iter().any(|t| t.active) {
        let sent = next_trial * bpt;
        let remaining = config.max_bits.saturating_sub(sent).div_ceil(bpt);
        let batch = (config.batch_size as u64).min(remaining.max(1));
        let active: Vec<usize> = (0..tallies.len()).filter(|&d| tallies[d].active).collect();
        let outcomes: Vec<Result<Vec<TrialOutcome>>> = pool.install(|| {
            (next_trial..next_trial + batch)
                .into_par_iter()
                .map(|trial| {
                    let key = StreamKey::new(config.seed, snr_index as u64, trial);
                    let inst = ChannelInstance::generate(config.nr, config.nt, constellation, snr_db, config.nmse, &key)?;
                    active
                        .iter()
                        .map(|&d| detect_trial(&config.detectors[d], &inst, constellation, &key, record_convergence))
                        .collect()
                })
                .collect()
        });
        for per_trial in outcomes {
            for (o, &d) in per_trial?.iter().zip(&active) {
                tallies[d].absorb(o);
            }
        }
        next_trial += batch;
        for &d in &active {
            let t = &mut tallies[d];
            if config.done(t.trials * bpt, stop_errors(t)) {
                t.active = false;
            }
        }
    }
    if config.verbose {
        for (d, t) in config.detectors.iter().zip(&tallies) {
            eprintln!(
                "snr {snr_db} dB  {:<16} trials {:>9}  bit errors {:>7}",
                d.label, t.trials, t.bit_errors
            );
        }
    }
    Ok(tallies)
}

/// BER/SER sweep over the configured SNR grid.
pub fn run_ber_sweep(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let constellation = Constellation::new(config.order)?;
    let pool = config.pool()?;
    let bpt = config.bits_per_trial();
    let mut rows = Vec::new();
    for (si, &snr_db) in config.snr_grid_db.iter().enumerate() {
        let tallies = run_point(config, &constellation, si, false, &pool)?;
        for (spec, t) in config.detectors.iter().zip(&tallies) {
            let bits = t.trials * bpt;
            let symbols = t.trials * config.nt as u64;
            let n = t.trials.max(1) as f64;
            let mean_sa = t.iterations as f64 / n;
            let (lo, hi) = wilson_interval(t.bit_errors, bits);
            rows.push(ReportRow {
                snr_db,
                detector: spec.label.clone(),
                ber: t.bit_errors as f64 / bits as f64,
                ser: t.symbol_errors as f64 / symbols as f64,
                bits,
                errors: t.bit_errors,
                symbols,
                symbol_errors: t.symbol_errors,
                trials: t.trials,
                mean_sa,
                mults_runtime: t.ops.total() / n,
                mults_closed_form: spec.closed_form(config.nr, config.nt, config.order, mean_sa),
                ber_ci_low: lo,
                ber_ci_high: hi,
            });
        }
    }
    Ok(SimReport {
        config: config.clone(),
        rows,
    })
}

/// BER of the pooled decision after `iteration` sampling iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub detector: String,
    pub iteration: usize,
    pub ber: f64,
    pub bits: u64,
    pub errors: u64,
}

/// Per-iteration BER for every sampler detector, run to `s_max` iterations.
///
/// The stopping rule uses the error count at `s_max`.
pub fn convergence_trace(config: &SimConfig, s_max: usize) -> Result<Vec<ConvergenceRow>> {
    let mut cfg = config.clone();
    for d in &mut cfg.detectors {
        match &mut d.kind {
            DetectorKind::NagMcmc(p) => p.iterations = s_max,
            _ => {
                return Err(Error::Config(vec![format!(
                    "convergence trace needs sampler detectors, got {:?}",
                    d.label
                )]))
            }
        }
    }
    cfg.validate()?;
    let constellation = Constellation::new(cfg.order)?;
    let pool = cfg.pool()?;
    let bpt = cfg.bits_per_trial();
    let mut rows = Vec::new();
    for (si, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        let tallies = run_point(&cfg, &constellation, si, true, &pool)?;
        for (spec, t) in cfg.detectors.iter().zip(&tallies) {
            let bits = t.trials * bpt;
            for (s, &errors) in t.convergence.iter().enumerate() {
                rows.push(ConvergenceRow {
                    snr_db,
                    detector: spec.label.clone(),
                    iteration: s + 1,
                    ber: errors as f64 / bits as f64,
                    bits,
                    errors,
                });
            }
        }
    }
    Ok(rows)
}

/// Runtime tally against the closed form, for one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAudit {
    pub phase: Phase,
    pub runtime: f64,
    pub closed_form: f64,
    /// `runtime / closed_form` (1 when both are zero).
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterAudit {
    pub n: usize,
    pub detections: usize,
    pub mean_iterations: f64,
    pub phases: Vec<PhaseAudit>,
    pub runtime_total: f64,
    pub closed_form_total: f64,
}

/// Averages the runtime counters of `detections` NAG-MCMC runs on square
/// `n × n` channels and sets them against the closed form evaluated at the
/// measured mean iteration count.
pub fn runtime_counter_audit(
    n: usize,
    order: usize,
    params: &SamplerParams,
    snr_db: f64,
    detections: usize,
    seed: u64,
) -> Result<CounterAudit> {
    params.validate()?;
    if detections == 0 {
        return Err(Error::Config(vec!["audit needs at least one detection".into()]));
    }
    let constellation = Constellation::new(order)?;
    let spec = DetectorSpec::nag(params.clone());
    let mut tally = Tally::default();
    for trial in 0..detections as u64 {
        let key = StreamKey::new(seed, 0, trial);
        let inst = ChannelInstance::generate(n, n, &constellation, snr_db, 0.0, &key)?;
        tally.absorb(&detect_trial(&spec, &inst, &constellation, &key, false)?);
    }
    let runtime = tally.ops.scaled(1.0 / detections as f64);
    let mean_iterations = tally.iterations as f64 / detections as f64;
    let closed = nag_closed_form_phases(
        &ClosedFormParams {
            n,
            order,
            samplers: params.samplers,
            iterations: mean_iterations,
            gd_steps: params.gd_steps,
            ep_iterations: 0,
        },
        params.sample_augmentation,
    );
    let phases = Phase::ALL
        .iter()
        .map(|&phase| {
            let (r, c) = (runtime.get(phase), closed.get(phase));
            PhaseAudit {
                phase,
                runtime: r,
                closed_form: c,
                ratio: if c == 0.0 && r == 0.0 { 1.0 } else { r / c },
            }
        })
        .collect();
    Ok(CounterAudit {
        n,
        detections,
        mean_iterations,
        phases,
        runtime_total: runtime.total(),
        closed_form_total: closed.total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(detectors: Vec<DetectorSpec>) -> SimConfig {
        SimConfig {
            nr: 4,
            nt: 4,
            order: 16,
            snr_grid_db: vec![10.0],
            detectors,
            max_bits: 40_000,
            min_errors: 100,
            min_bits: 10_000,
            batch_size: 64,
            ..SimConfig::default()
        }
    }

    #[test]
    fn validation_lists_every_problem() {
        let cfg = SimConfig {
            nr: 2,
            nt: 4,
            order: 32,
            snr_grid_db: vec![],
            detectors: vec![DetectorSpec::zf()],
            max_bits: 0,
            ..SimConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config(v)) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infinite_snr_gives_zero_ber() {
        let mut cfg = small(vec![DetectorSpec::zf(), DetectorSpec::nag(SamplerParams::enhanced())]);
        cfg.snr_grid_db = vec![f64::INFINITY];
        cfg.max_bits = 5_000;
        let rep = run_ber_sweep(&cfg).unwrap();
        for r in &rep.rows {
            assert_eq!(r.errors, 0, "{}", r.detector);
            assert_eq!(r.ber, 0.0);
        }
    }

    #[test]
    fn report_is_independent_of_worker_count() {
        let mut cfg = small(vec![DetectorSpec::mmse(), DetectorSpec::nag(SamplerParams::enhanced())]);
        cfg.workers = 1;
        let a = run_ber_sweep(&cfg).unwrap();
        cfg.workers = 3;
        let b = run_ber_sweep(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn stopping_rule_and_bookkeeping() {
        let cfg = small(vec![DetectorSpec::mmse()]);
        let rep = run_ber_sweep(&cfg).unwrap();
        let r = &rep.rows[0];
        assert_eq!(r.bits, r.trials * 16);
        assert_eq!(r.ber, r.errors as f64 / r.bits as f64);
        assert!(r.bits <= cfg.max_bits);
        assert!(r.errors >= cfg.min_errors || r.bits >= cfg.max_bits);
        assert!(r.ber_ci_low <= r.ber && r.ber <= r.ber_ci_high);
        assert_eq!(r.mults_closed_form, Some(r.mults_runtime));
    }

    #[test]
    fn iterations_equal_preset_without_es() {
        let p = SamplerParams {
            samplers: 4,
            iterations: 5,
            sample_augmentation: true,
            ..SamplerParams::default()
        };
        let rep = run_ber_sweep(&small(vec![DetectorSpec::nag(p)])).unwrap();
        assert_eq!(rep.rows[0].mean_sa, 5.0);
        let p = SamplerParams {
            samplers: 4,
            iterations: 5,
            ..SamplerParams::enhanced()
        };
        let rep = run_ber_sweep(&small(vec![DetectorSpec::nag(p)])).unwrap();
        assert!(rep.rows[0].mean_sa <= 5.0);
    }

    #[test]
    fn convergence_trace_ends_at_the_sweep_result() {
        let p = SamplerParams {
            samplers: 4,
            iterations: 10,
            ..SamplerParams::default()
        };
        let cfg = small(vec![DetectorSpec::nag(p)]);
        let rows = convergence_trace(&cfg, 10).unwrap();
        assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
        let sweep = run_ber_sweep(&cfg).unwrap();
        assert_eq!(rows[9].errors, sweep.rows[0].errors);
        assert_eq!(rows[9].bits, sweep.rows[0].bits);
        assert!(convergence_trace(&small(vec![DetectorSpec::mmse()]), 4).is_err());
    }

    #[test]
    fn audit_matches_closed_form() {
        let audit = runtime_counter_audit(8, 16, &SamplerParams::default(), 20.0, 5, 1).unwrap();
        for p in &audit.phases {
            assert!((p.ratio - 1.0).abs() < 1e-9, "{p:?}");
        }
        let audit = runtime_counter_audit(8, 16, &SamplerParams::enhanced(), 25.0, 20, 1).unwrap();
        for p in &audit.phases {
            assert!((p.ratio - 1.0).abs() < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn config_json_round_trip() {
        let mut cfg = SimConfig {
            snr_grid_db: vec![10.0, f64::INFINITY],
            ..SimConfig::default()
        };
        cfg.detectors.push(DetectorSpec::mmse());
        let s = serde_json::to_string(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }
}
