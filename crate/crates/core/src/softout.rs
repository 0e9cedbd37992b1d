//! Max-log LLRs from a pooled sample list.
//!
//! Bit `k` is 1 when the corresponding entry of `b ∈ {±1}` is `+1`. A
//! positive LLR therefore favours bit 1.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::modem::Constellation;
use crate::sampler::SampleList;

/// Magnitude of a saturated LLR, in units of `1/σ²`.
pub const SATURATION: f64 = 10.0;

pub const LLR_CSV_HEADER: &str = "trial,bit,llr,saturated";

#[derive(Debug, Clone, PartialEq)]
pub struct LlrVector {
    pub values: Vec<f64>,
    /// True where one of the bit's subsets was empty.
    pub saturated: Vec<bool>,
}

impl LlrVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `L_e = L − L_a`.
    pub fn extrinsic(&self, prior: Option<&[f64]>) -> Vec<f64> {
        match prior {
            Some(la) => self.values.iter().zip(la).map(|(l, a)| l - a).collect(),
            None => self.values.clone(),
        }
    }

    /// Hard bits (`L ≥ 0` ↦ 1).
    pub fn hard_bits(&self) -> Vec<u8> {
        self.values.iter().map(|&l| u8::from(l >= 0.0)).collect()
    }

    /// CSV rows `trial,bit,llr,saturated` without header.
    pub fn csv_rows(&self, trial: u64) -> String {
        let mut out = String::new();
        for (k, (v, s)) in self.values.iter().zip(&self.saturated).enumerate() {
            let _ = writeln!(out, "{trial},{k},{v:.6e},{}", u8::from(*s));
        }
        out
    }
}

/// Max-log LLRs over the deduplicated sample list.
pub fn compute_llrs(
    samples: &SampleList,
    sigma2: f64,
    prior: Option<&[f64]>,
    constellation: &Constellation,
) -> Result<LlrVector> {
    if samples.is_empty() {
        return Err(Error::EmptySampleList);
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Config(vec![format!("sigma2 = {sigma2} must be positive for LLRs")]));
    }
    let nb = samples.nt() * constellation.bits_per_symbol();
    if let Some(la) = prior {
        if la.len() != nb {
            return Err(Error::LengthMismatch { expected: nb, got: la.len() });
        }
    }

    let mut seen: HashSet<&[u8]> = HashSet::with_capacity(samples.len());
    let mut min_minus = vec![f64::INFINITY; nb];
    let mut min_plus = vec![f64::INFINITY; nb];
    for (symbols, sq) in samples.iter() {
        if !seen.insert(symbols) {
            continue;
        }
        let bits = constellation.bits_of(symbols);
        let mut cost = sq / sigma2;
        if let Some(la) = prior {
            let dot: f64 = bits.iter().zip(la).map(|(&b, &l)| if b == 1 { l } else { -l }).sum();
            cost -= 0.5 * dot;
        }
        for (k, &b) in bits.iter().enumerate() {
            let slot = if b == 1 { &mut min_plus[k] } else { &mut min_minus[k] };
            if cost < *slot {
                *slot = cost;
            }
        }
    }

    let sat = SATURATION / sigma2;
    let mut values = Vec::with_capacity(nb);
    let mut saturated = Vec::with_capacity(nb);
    for k in 0..nb {
        let (v, s) = match (min_minus[k].is_finite(), min_plus[k].is_finite()) {
            (true, true) => (min_minus[k] - min_plus[k], false),
            (false, _) => (sat, true),
            (true, false) => (-sat, true),
        };
        values.push(v);
        saturated.push(s);
    }
    Ok(LlrVector { values, saturated })
}
