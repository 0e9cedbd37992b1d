//! Complex-multiplication accounting.
//!
//! [`OpCounter`] is charged by the detectors as each kernel executes. The
//! per-kernel charges follow the closed-form cost model, not
//! a literal count of floating-point products:
//!
//! | kernel                              | charge            |
//! |-------------------------------------|-------------------|
//! | Gram matrix `HᴴH`                   | `N_r N_t²`        |
//! | HPD inverse via Cholesky            | `2(N³ + N)`       |
//! | Cholesky factor                     | `2N³/3`           |
//! | matrix-vector product (any shape)   | `rows · cols`     |
//! | scaled-column cache                 | `M N_r N_t`       |
//! | Frobenius norm of an `N×N` matrix   | `N²`              |
//! | vector scaling / squared norm       | length            |
//! | QAM mapping of a length-`N` vector  | `M N`             |
//!
//! With those charges a detection's tally reproduces the closed forms below
//! term by term, which is what the audit checks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Where a multiplication was spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Preprocessing,
    Gd,
    Walk,
    Residual,
    Decision,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Preprocessing,
        Phase::Gd,
        Phase::Walk,
        Phase::Residual,
        Phase::Decision,
    ];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Preprocessing => "preprocessing",
            Phase::Gd => "gd",
            Phase::Walk => "walk",
            Phase::Residual => "residual",
            Phase::Decision => "decision",
        }
    }
}

/// Complex-multiplication tally per [`Phase`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OpCounter {
    tallies: [f64; 5],
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn charge(&mut self, phase: Phase, mults: f64) {
        debug_assert!(mults >= 0.0);
        self.tallies[phase.slot()] += mults;
    }

    pub fn get(&self, phase: Phase) -> f64 {
        self.tallies[phase.slot()]
    }

    pub fn total(&self) -> f64 {
        self.tallies.iter().sum()
    }

    pub fn add(&mut self, other: &OpCounter) {
        for (a, b) in self.tallies.iter_mut().zip(other.tallies) {
            *a += b;
        }
    }

    pub fn scaled(&self, factor: f64) -> OpCounter {
        let mut out = *self;
        out.tallies.iter_mut().for_each(|t| *t *= factor);
        out
    }
}

/// Per-kernel charges.
pub mod cost {
    pub fn gram(nr: usize, nt: usize) -> f64 {
        (nr * nt * nt) as f64
    }

    pub fn hpd_inverse(n: usize) -> f64 {
        let n = n as f64;
        2.0 * (n * n * n + n)
    }

    pub fn cholesky(n: usize) -> f64 {
        let n = n as f64;
        2.0 / 3.0 * n * n * n
    }

    pub fn matvec(rows: usize, cols: usize) -> f64 {
        (rows * cols) as f64
    }

    pub fn column_cache(order: usize, nr: usize, nt: usize) -> f64 {
        (order * nr * nt) as f64
    }

    pub fn frobenius(rows: usize, cols: usize) -> f64 {
        (rows * cols) as f64
    }

    pub fn elementwise(len: usize) -> f64 {
        len as f64
    }

    pub fn quantize(order: usize, len: usize) -> f64 {
        (order * len) as f64
    }
}

/// Detectors with a closed-form multiplication count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    Mmse,
    /// Closed form only; the detector itself is not implemented.
    Ep,
    /// Closed form only; the detector itself is not implemented.
    Mhgd,
    NagMcmc,
    NagMcmcSaEs,
}

impl Algorithm {
    pub fn is_analytic_only(self) -> bool {
        matches!(self, Algorithm::Ep | Algorithm::Mhgd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Mmse => "mmse",
            Algorithm::Ep => "ep",
            Algorithm::Mhgd => "mhgd",
            Algorithm::NagMcmc => "nag-mcmc",
            Algorithm::NagMcmcSaEs => "nag-mcmc-sa-es",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "mmse" => Ok(Algorithm::Mmse),
            "ep" => Ok(Algorithm::Ep),
            "mhgd" => Ok(Algorithm::Mhgd),
            "nag-mcmc" | "nag" => Ok(Algorithm::NagMcmc),
            "nag-mcmc-sa-es" | "nag-sa-es" => Ok(Algorithm::NagMcmcSaEs),
            _ => Err(Error::UnknownAlgorithm(s.to_string())),
        }
    }
}

/// Inputs of the closed forms. `n = N_t = N_r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormParams {
    pub n: usize,
    pub order: usize,
    pub samplers: usize,
    /// Preset `S`, or the average executed `S_a` for the SA+ES row.
    pub iterations: f64,
    pub gd_steps: usize,
    /// EP iteration count.
    pub ep_iterations: usize,
}

impl ClosedFormParams {
    /// Configuration of the complexity-scaling comparison: 16-QAM, `P = 16`,
    /// `N_g = 8`, `T = 10`; `iterations` is set per algorithm by the caller.
    pub fn scaling(n: usize, iterations: f64) -> Self {
        Self {
            n,
            order: 16,
            samplers: 16,
            iterations,
            gd_steps: 8,
            ep_iterations: 10,
        }
    }
}

/// Unrounded closed-form count.
pub fn closed_form_mults_f64(alg: Algorithm, p: &ClosedFormParams) -> f64 {
    let n = p.n as f64;
    let m = p.order as f64;
    let ps = p.samplers as f64 * p.iterations;
    let ng = p.gd_steps as f64;
    let pre = 11.0 / 3.0 * n.powi(3) + (m + 2.0) * n * n + 2.0 * n;
    match alg {
        Algorithm::Mmse => 3.0 * n.powi(3) + 2.0 * n * n + 2.0 * n,
        Algorithm::Ep => {
            (2.0 * n.powi(3) + n * n + (2.0 * m + 13.0) * n) * p.ep_iterations as f64
                + n.powi(3)
                + 2.0 * n * n
                + n
        }
        Algorithm::Mhgd => {
            (6.0 * n * n + (m + 5.0) * n) * ps + 23.0 / 3.0 * n.powi(3) + (m + 2.0) * n * n + 7.0 * n
        }
        Algorithm::NagMcmc => {
            ((ng + 1.0) * n * n + (m + 2.0 * ng + 2.0) * n) * ps + (m + 1.0) * n * p.samplers as f64 + pre
        }
        Algorithm::NagMcmcSaEs => {
            ((ng + 1.0) * n * n + ((m + 3.0) * ng + 1.0) * n) * ps + (m + 1.0) * n * p.samplers as f64 + pre
        }
    }
}

/// Closed-form count, rounded to the nearest integer at the end.
pub fn closed_form_mults(alg: Algorithm, p: &ClosedFormParams) -> u64 {
    closed_form_mults_f64(alg, p).round() as u64
}

/// The NAG-MCMC closed form split by phase. `augmented` selects the SA row.
pub fn nag_closed_form_phases(p: &ClosedFormParams, augmented: bool) -> OpCounter {
    let n = p.n as f64;
    let m = p.order as f64;
    let ng = p.gd_steps as f64;
    let ps = p.samplers as f64 * p.iterations;
    let mut c = OpCounter::new();
    c.charge(
        Phase::Preprocessing,
        11.0 / 3.0 * n.powi(3) + (m + 2.0) * n * n + 2.0 * n,
    );
    c.charge(Phase::Gd, (ng * n * n + 2.0 * ng * n) * ps);
    c.charge(Phase::Walk, (n * n + n) * ps);
    let mut residual = (m + 1.0) * n * ps + (m + 1.0) * n * p.samplers as f64;
    if augmented {
        residual += (m + 1.0) * (ng - 1.0) * n * ps;
    }
    c.charge(Phase::Residual, residual);
    c
}

/// Smallest `n` in `range` from which `a` stays strictly cheaper than `b`.
pub fn crossover(
    range: std::ops::RangeInclusive<usize>,
    a: impl Fn(usize) -> f64,
    b: impl Fn(usize) -> f64,
) -> Option<usize> {
    let mut candidate = None;
    for n in range {
        if a(n) < b(n) {
            candidate.get_or_insert(n);
        } else {
            candidate = None;
        }
    }
    candidate
}
