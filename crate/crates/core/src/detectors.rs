//! Baseline detectors: ZF, MMSE, exhaustive ML, and plain descent traces.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::complexity::{cost, OpCounter, Phase};
use crate::modem::Constellation;
use crate::numerics::{self, build_column_cache, ComplexMatrix};

/// Largest candidate count the exhaustive ML search accepts.
pub const ML_SEARCH_CAP: u128 = 1 << 24;

/// Output of a linear detector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDetection {
    pub symbols: Vec<u8>,
    pub x_hat: Vec<Complex64>,
    /// Filter output before quantization.
    pub filtered: Vec<Complex64>,
    pub ops: OpCounter,
}

fn check_dims(h: &ComplexMatrix, y: &[Complex64]) -> Result<()> {
    if y.len() != h.rows() {
        return Err(Error::LengthMismatch {
            expected: h.rows(),
            got: y.len(),
        });
    }
    Ok(())
}

/// `(HᴴH)⁻¹Hᴴy`.
pub fn zf_filter(h: &ComplexMatrix, y: &[Complex64]) -> Result<Vec<Complex64>> {
    check_dims(h, y)?;
    if h.cols() > h.rows() {
        return Err(Error::DimensionMismatch(format!(
            "zero forcing needs N_t <= N_r, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    let inv = numerics::invert_hpd(&numerics::gram(h)?)?;
    inv.matvec(&h.matvec_h(y)?)
}

/// `(HᴴH + σ²I)⁻¹Hᴴy` for unit-energy symbols.
pub fn mmse_filter(h: &ComplexMatrix, y: &[Complex64], sigma2: f64) -> Result<Vec<Complex64>> {
    check_dims(h, y)?;
    let a = numerics::gram(h)?.add_diagonal(sigma2);
    let inv = numerics::invert_hpd(&a)?;
    inv.matvec(&h.matvec_h(y)?)
}

/// Multiplications charged for one MMSE detection.
pub fn mmse_cost(nr: usize, nt: usize) -> f64 {
    cost::gram(nr, nt) + cost::hpd_inverse(nt) + cost::matvec(nr, nt) + cost::matvec(nt, nt)
}

pub fn detect_zf(h: &ComplexMatrix, y: &[Complex64], constellation: &Constellation) -> Result<LinearDetection> {
    let filtered = zf_filter(h, y)?;
    let mut ops = OpCounter::new();
    ops.charge(Phase::Preprocessing, mmse_cost(h.rows(), h.cols()));
    Ok(linear_output(filtered, constellation, ops))
}

/// MMSE detection. Fails only for a singular channel at `σ² = 0`.
pub fn detect_mmse(
    h: &ComplexMatrix,
    y: &[Complex64],
    sigma2: f64,
    constellation: &Constellation,
) -> Result<LinearDetection> {
    if sigma2.is_nan() || sigma2 < 0.0 {
        return Err(Error::Config(vec![format!("sigma2 = {sigma2} must be non-negative")]));
    }
    let filtered = mmse_filter(h, y, sigma2)?;
    let mut ops = OpCounter::new();
    ops.charge(Phase::Preprocessing, mmse_cost(h.rows(), h.cols()));
    Ok(linear_output(filtered, constellation, ops))
}

fn linear_output(filtered: Vec<Complex64>, c: &Constellation, ops: OpCounter) -> LinearDetection {
    let symbols = c.quantize_indices(&filtered);
    LinearDetection {
        x_hat: c.symbols_to_points(&symbols),
        symbols,
        filtered,
        ops,
    }
}

/// Exact ML solution `argmin ‖y − Hx‖²` over `𝒜^{N_t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlDetection {
    pub symbols: Vec<u8>,
    pub x_hat: Vec<Complex64>,
    pub sqnorm: f64,
}

/// Exhaustive search; ties go to the lexicographically smallest index vector.
pub fn detect_ml_exhaustive(h: &ComplexMatrix, y: &[Complex64], constellation: &Constellation) -> Result<MlDetection> {
    check_dims(h, y)?;
    let (nr, nt) = (h.rows(), h.cols());
    let m = constellation.order();
    let space = (m as u128).checked_pow(nt as u32).unwrap_or(u128::MAX);
    if space > ML_SEARCH_CAP {
        return Err(Error::SearchSpaceTooLarge(space));
    }
    if nt == 0 {
        return Ok(MlDetection {
            symbols: vec![],
            x_hat: vec![],
            sqnorm: numerics::sqnorm(y),
        });
    }
    let cache = build_column_cache(h, constellation);

    // One block per value of the leading symbol; blocks are reduced in
    // order so the tie rule is independent of scheduling.
    let blocks: Vec<(Vec<u8>, f64)> = (0..m)
        .into_par_iter()
        .map(|first| {
            let mut sym = vec![0u8; nt];
            sym[0] = first as u8;
            let mut partial = vec![vec![Complex64::new(0.0, 0.0); nr]; nt + 1];
            let mut acc = vec![Complex64::new(0.0, 0.0); nr];
            cache.add_column_into(0, first as u8, &mut acc);
            partial[1] = acc;
            let mut best = (sym.clone(), f64::INFINITY);
            search(&cache, y, m, 1, &mut sym, &mut partial, &mut best);
            best
        })
        .collect();
    let mut best = &blocks[0];
    for b in &blocks[1..] {
        if b.1 < best.1 {
            best = b;
        }
    }
    Ok(MlDetection {
        x_hat: constellation.symbols_to_points(&best.0),
        symbols: best.0.clone(),
        sqnorm: best.1,
    })
}

fn search(
    cache: &numerics::ColumnCache,
    y: &[Complex64],
    m: usize,
    depth: usize,
    sym: &mut [u8],
    partial: &mut [Vec<Complex64>],
    best: &mut (Vec<u8>, f64),
) {
    let nt = sym.len();
    if depth == nt {
        let sq: f64 = y.iter().zip(&partial[nt]).map(|(a, b)| (a - b).norm_sqr()).sum();
        if sq < best.1 {
            best.0.copy_from_slice(sym);
            best.1 = sq;
        }
        return;
    }
    for s in 0..m {
        sym[depth] = s as u8;
        let (head, tail) = partial.split_at_mut(depth + 1);
        let next = &mut tail[0];
        next.copy_from_slice(&head[depth]);
        cache.add_column_into(depth, s as u8, next);
        search(cache, y, m, depth + 1, sym, partial, best);
    }
}

/// Descent method of a [`DescentTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescentMethod {
    /// Steepest descent with the exact quadratic line search.
    NaiveLinesearch,
    /// Nesterov's accelerated gradient with `τ = 1/‖HᴴH‖_F` and the classic
    /// momentum sequence `(t_k − 1)/t_{k+1}`, `t_{k+1} = (1 + √(1 + 4t_k²))/2`.
    Nesterov,
    /// The sampler's update: `τ = 1/‖HᴴH‖_F` with fixed momentum `ρ = 0.9`.
    NesterovFixed,
}

impl DescentMethod {
    pub fn name(self) -> &'static str {
        match self {
            DescentMethod::NaiveLinesearch => "naive-linesearch",
            DescentMethod::Nesterov => "nesterov",
            DescentMethod::NesterovFixed => "nesterov-fixed",
        }
    }
}

/// Residual norms `‖y − Hz_t‖` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub method: DescentMethod,
    pub residual_norms: Vec<f64>,
}

/// Momentum of the fixed-momentum Nesterov trace.
pub const TRACE_MOMENTUM: f64 = 0.9;

/// Exact minimiser of `f(z − τg)` for the quadratic `f = ‖y − Hz‖²`.
pub fn exact_line_search_step(gram: &ComplexMatrix, g: &[Complex64]) -> f64 {
    let ag = gram.matvec(g).expect("square gram");
    let num = numerics::sqnorm(g);
    let den: f64 = g.iter().zip(&ag).map(|(a, b)| (a.conj() * b).re).sum();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn descent_trace(
    h: &ComplexMatrix,
    y: &[Complex64],
    z0: &[Complex64],
    method: DescentMethod,
    steps: usize,
) -> Result<DescentTrace> {
    check_dims(h, y)?;
    if z0.len() != h.cols() {
        return Err(Error::LengthMismatch {
            expected: h.cols(),
            got: z0.len(),
        });
    }
    let gram = numerics::gram(h)?;
    let b = h.matvec_h(y)?;
    let nt = h.cols();
    let res = |z: &[Complex64]| -> f64 {
        let hz = h.matvec(z).expect("dims checked");
        numerics::residual(y, &hz).expect("dims checked").1.sqrt()
    };
    let mut z = z0.to_vec();
    let mut norms = Vec::with_capacity(steps + 1);
    norms.push(res(&z));
    let mut g = vec![Complex64::new(0.0, 0.0); nt];
    match method {
        DescentMethod::NaiveLinesearch => {
            for _ in 0..steps {
                gram.matvec_into(&z, &mut g);
                g.iter_mut().zip(&b).for_each(|(a, bb)| *a -= bb);
                let tau = exact_line_search_step(&gram, &g);
                z.iter_mut().zip(&g).for_each(|(zk, gk)| *zk -= gk * tau);
                norms.push(res(&z));
            }
        }
        DescentMethod::Nesterov | DescentMethod::NesterovFixed => {
            let tau = 1.0 / numerics::frobenius_norm(&gram);
            let mut dz = vec![Complex64::new(0.0, 0.0); nt];
            let mut p = vec![Complex64::new(0.0, 0.0); nt];
            let mut t_k = 1.0f64;
            for _ in 0..steps {
                let rho = if method == DescentMethod::NesterovFixed {
                    TRACE_MOMENTUM
                } else {
                    let t_next = (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt()) / 2.0;
                    let r = (t_k - 1.0) / t_next;
                    t_k = t_next;
                    r
                };
                for k in 0..nt {
                    p[k] = z[k] + dz[k] * rho;
                }
                gram.matvec_into(&p, &mut g);
                for k in 0..nt {
                    let znew = p[k] + (b[k] - g[k]) * tau;
                    dz[k] = znew - z[k];
                    z[k] = znew;
                }
                norms.push(res(&z));
            }
        }
    }
    Ok(DescentTrace {
        method,
        residual_norms: norms,
    })
}
