//! Nesterov-accelerated gradient MCMC sampler.
//!
//! Each of `P` chains repeats, `S` times: a burst of `N_g` Nesterov descent
//! steps started from the current discrete sample, a Gaussian random walk
//! shaped by the row-normalised Cholesky factor of `(HᴴH)⁻¹`, QAM mapping,
//! and a Metropolis-Hastings test on the squared residual norm. Optional
//! sample augmentation quantizes the intermediate descent iterates into
//! extra samples; optional early stopping halts all chains once more than
//! half of them share the best sample and its residual is at noise level.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detectors;
use crate::error::{Error, Result};
use crate::harness::complexity::{cost, OpCounter, Phase};
use crate::modem::Constellation;
use crate::numerics::{self, build_column_cache, ColumnCache, ComplexMatrix};

/// Exponent floor of the acceptance probability (`exp(-745)` is the
/// smallest positive double).
pub const LOG_ALPHA_FLOOR: f64 = -745.0;

/// How each chain picks its starting sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Independent uniform draw from the constellation per symbol.
    RandomConstellation,
    /// Quantized MMSE estimate, shared by all chains.
    Mmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    /// `P`
    pub samplers: usize,
    /// `S`
    pub iterations: usize,
    /// `N_g`
    pub gd_steps: usize,
    /// `ρ`
    pub momentum: f64,
    /// `β`; `None` selects `(N_t / 8)^(-1/3)`.
    pub step_coeff: Option<f64>,
    /// `η`
    pub es_threshold: f64,
    pub sample_augmentation: bool,
    pub early_stopping: bool,
    pub init: InitMode,
    /// Start each burst with the momentum left by the previous one. When
    /// false the momentum is zeroed at every sampling iteration.
    pub carry_momentum: bool,
    /// Scale the acceptance exponent by `1/σ²`.
    pub acceptance_temperature: bool,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            samplers: 16,
            iterations: 8,
            gd_steps: 8,
            momentum: 0.9,
            step_coeff: None,
            es_threshold: 1.5,
            sample_augmentation: false,
            early_stopping: false,
            init: InitMode::RandomConstellation,
            carry_momentum: true,
            acceptance_temperature: false,
        }
    }
}

impl SamplerParams {
    /// Defaults with SA and ES switched on.
    pub fn enhanced() -> Self {
        Self {
            sample_augmentation: true,
            early_stopping: true,
            ..Self::default()
        }
    }

    /// Every violated constraint, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.samplers == 0 {
            v.push("samplers (P) must be at least 1".to_string());
        }
        if self.iterations == 0 {
            v.push("iterations (S) must be at least 1".to_string());
        }
        if self.gd_steps == 0 {
            v.push("gd steps (Ng) must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            v.push(format!("momentum rho = {} must lie in [0, 1]", self.momentum));
        }
        if self.es_threshold.is_nan() || self.es_threshold <= 0.0 {
            v.push(format!("ES threshold eta = {} must be positive", self.es_threshold));
        }
        if let Some(b) = self.step_coeff {
            if !(b > 0.0 && b.is_finite()) {
                v.push(format!("step coefficient beta = {b} must be positive"));
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

    pub fn beta(&self, nt: usize) -> f64 {
        self.step_coeff.unwrap_or_else(|| default_beta(nt))
    }

    /// Length of one chain's sample list after a full run.
    pub fn samples_per_chain(&self) -> usize {
        if self.sample_augmentation {
            self.gd_steps * self.iterations + 1
        } else {
            self.iterations + 1
        }
    }
}

/// `β = (N_t / 8)^(-1/3)`.
pub fn default_beta(nt: usize) -> f64 {
    (nt as f64 / 8.0).powf(-1.0 / 3.0)
}

/// Per-channel quantities shared by all chains.
#[derive(Debug, Clone)]
pub struct SamplerContext<'c> {
    constellation: &'c Constellation,
    h: ComplexMatrix,
    y: Vec<Complex64>,
    gram: ComplexMatrix,
    hty: Vec<Complex64>,
    tau: f64,
    mc: ComplexMatrix,
    cache: ColumnCache,
    sigma2: f64,
    mc_fallback: bool,
    ops: OpCounter,
}

impl<'c> SamplerContext<'c> {
    pub fn constellation(&self) -> &'c Constellation {
        self.constellation
    }

    pub fn h(&self) -> &ComplexMatrix {
        &self.h
    }

    pub fn y(&self) -> &[Complex64] {
        &self.y
    }

    pub fn gram(&self) -> &ComplexMatrix {
        &self.gram
    }

    /// `Hᴴy`
    pub fn hty(&self) -> &[Complex64] {
        &self.hty
    }

    /// Learning rate `1/‖HᴴH‖_F`.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Row-normalised lower Cholesky factor of `(HᴴH)⁻¹`.
    pub fn mc(&self) -> &ComplexMatrix {
        &self.mc
    }

    pub fn cache(&self) -> &ColumnCache {
        &self.cache
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn d_qam(&self) -> f64 {
        self.constellation.d_qam()
    }

    pub fn nr(&self) -> usize {
        self.h.rows()
    }

    pub fn nt(&self) -> usize {
        self.h.cols()
    }

    /// True when the covariance factor fell back to the identity.
    pub fn mc_fallback(&self) -> bool {
        self.mc_fallback
    }

    /// Multiplications spent building the context.
    pub fn preprocessing_ops(&self) -> &OpCounter {
        &self.ops
    }

    /// `‖y − Hx‖²` for point indices.
    pub fn residual_sqnorm(&self, symbols: &[u8]) -> f64 {
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.nr()];
        self.cache.residual_sqnorm(&self.y, symbols, &mut scratch)
    }

    /// `∇f(z) = −Hᴴ(y − Hz) = HᴴH z − Hᴴy`.
    pub fn gradient(&self, z: &[Complex64]) -> Vec<Complex64> {
        let mut g = vec![Complex64::new(0.0, 0.0); self.nt()];
        self.gram.matvec_into(z, &mut g);
        g.iter_mut().zip(&self.hty).for_each(|(a, b)| *a -= b);
        g
    }
}

/// Precomputes learning rate, covariance factor and column cache.
///
/// Fails when `HᴴH` is not numerically positive definite.
pub fn precompute<'c>(
    h: &ComplexMatrix,
    y: &[Complex64],
    sigma2: f64,
    constellation: &'c Constellation,
) -> Result<SamplerContext<'c>> {
    build_context(h, y, sigma2, constellation, false)
}

/// Like [`precompute`], but a singular channel falls back to `M_c = I`.
pub fn precompute_or_identity<'c>(
    h: &ComplexMatrix,
    y: &[Complex64],
    sigma2: f64,
    constellation: &'c Constellation,
) -> Result<SamplerContext<'c>> {
    build_context(h, y, sigma2, constellation, true)
}

fn build_context<'c>(
    h: &ComplexMatrix,
    y: &[Complex64],
    sigma2: f64,
    constellation: &'c Constellation,
    allow_fallback: bool,
) -> Result<SamplerContext<'c>> {
    let (nr, nt) = (h.rows(), h.cols());
    if y.len() != nr {
        return Err(Error::LengthMismatch { expected: nr, got: y.len() });
    }
    let mut ops = OpCounter::new();
    let gram = numerics::gram(h)?;
    ops.charge(Phase::Preprocessing, cost::gram(nr, nt));
    let hty = h.matvec_h(y)?;
    ops.charge(Phase::Preprocessing, cost::matvec(nr, nt));
    let fro = numerics::frobenius_norm(&gram);
    ops.charge(Phase::Preprocessing, cost::frobenius(nt, nt));
    if fro.is_nan() || fro <= 0.0 {
        return Err(Error::NotPositiveDefinite { column: 0, pivot: 0.0 });
    }
    let tau = 1.0 / fro;

    let factor = numerics::invert_hpd(&gram).and_then(|inv| numerics::cholesky_lower(&inv));
    ops.charge(Phase::Preprocessing, cost::hpd_inverse(nt) + cost::cholesky(nt));
    let (mc, mc_fallback) = match factor {
        Ok(mut l) => {
            for r in 0..nt {
                let rn = numerics::norm(l.row(r));
                for c in 0..=r {
                    l[(r, c)] /= rn;
                }
            }
            (l, false)
        }
        Err(e) if allow_fallback => {
            eprintln!("warning: {e}; using identity random-walk covariance");
            (ComplexMatrix::identity(nt), true)
        }
        Err(e) => return Err(e),
    };

    let cache = build_column_cache(h, constellation);
    ops.charge(Phase::Preprocessing, cost::column_cache(constellation.order(), nr, nt));

    Ok(SamplerContext {
        constellation,
        h: h.clone(),
        y: y.to_vec(),
        gram,
        hty,
        tau,
        mc,
        cache,
        sigma2,
        mc_fallback,
        ops,
    })
}

/// Runs `ng` Nesterov steps from `x_start` with zero initial momentum and
/// returns `[z_1, …, z_ng]`.
pub fn nesterov_burst(ctx: &SamplerContext<'_>, x_start: &[Complex64], ng: usize, momentum: f64) -> Vec<Vec<Complex64>> {
    let nt = ctx.nt();
    let mut z = x_start.to_vec();
    let mut dz = vec![Complex64::new(0.0, 0.0); nt];
    let mut p = vec![Complex64::new(0.0, 0.0); nt];
    let mut g = vec![Complex64::new(0.0, 0.0); nt];
    let mut out = Vec::with_capacity(ng);
    for _ in 0..ng {
        nesterov_step(ctx, momentum, &mut z, &mut dz, &mut p, &mut g);
        out.push(z.clone());
    }
    out
}

/// One Nesterov update in place:
/// `p = z + ρΔz`, `z' = p + τ(Hᴴy − HᴴH p)`, `Δz = z' − z`.
#[inline]
fn nesterov_step(
    ctx: &SamplerContext<'_>,
    momentum: f64,
    z: &mut [Complex64],
    dz: &mut [Complex64],
    p: &mut [Complex64],
    g: &mut [Complex64],
) {
    for ((pi, zi), di) in p.iter_mut().zip(z.iter()).zip(dz.iter()) {
        *pi = zi + di * momentum;
    }
    ctx.gram.matvec_into(p, g);
    let tau = ctx.tau;
    for k in 0..z.len() {
        let znew = p[k] + (ctx.hty[k] - g[k]) * tau;
        dz[k] = znew - z[k];
        z[k] = znew;
    }
}

/// `γ = max(d_qam, ‖r‖/√N_r) · β`.
pub fn update_step_size(r_sqnorm: f64, nr: usize, d_qam: f64, beta: f64) -> f64 {
    d_qam.max((r_sqnorm / nr as f64).sqrt()) * beta
}

/// `z_prop = z_grad + γ M_c w` and its QAM mapping.
pub fn propose<R: Rng + ?Sized>(
    ctx: &SamplerContext<'_>,
    z_grad: &[Complex64],
    gamma: f64,
    rng: &mut R,
) -> (Vec<Complex64>, Vec<u8>) {
    let nt = ctx.nt();
    let mut w = vec![Complex64::new(0.0, 0.0); nt];
    let mut z = vec![Complex64::new(0.0, 0.0); nt];
    let mut x = vec![0u8; nt];
    draw_walk(ctx, rng, &mut w, &mut z);
    for (zk, gk) in z.iter_mut().zip(z_grad) {
        *zk = gk + *zk * gamma;
    }
    for (xk, zk) in x.iter_mut().zip(&z) {
        *xk = ctx.constellation.quantize_index(*zk);
    }
    (z, x)
}

/// Draws `w ~ CN(0, I)` and writes `M_c w` into `out`.
#[inline]
fn draw_walk<R: Rng + ?Sized>(ctx: &SamplerContext<'_>, rng: &mut R, w: &mut [Complex64], out: &mut [Complex64]) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for wk in w.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *wk = Complex64::new(s * re, s * im);
    }
    let mc = &ctx.mc;
    for (r, o) in out.iter_mut().enumerate() {
        // Lower triangular.
        let row = &mc.row(r)[..=r];
        *o = row.iter().zip(&w[..=r]).map(|(a, b)| a * b).sum();
    }
}

/// `α = min{1, exp(scale · (‖r_prev‖² − ‖r_prop‖²))}`, evaluated in the log domain.
#[inline]
pub fn acceptance_probability(r_prop_sqnorm: f64, r_prev_sqnorm: f64, scale: f64) -> f64 {
    let log_alpha = (scale * (r_prev_sqnorm - r_prop_sqnorm)).clamp(LOG_ALPHA_FLOOR, 0.0);
    if log_alpha.is_nan() {
        return 0.0;
    }
    log_alpha.exp()
}

/// Metropolis-Hastings test: accept iff `α ≥ u`, `u ~ U(0, 1)`.
pub fn accept_test<R: Rng + ?Sized>(r_prop_sqnorm: f64, r_prev_sqnorm: f64, rng: &mut R) -> (bool, f64) {
    let alpha = acceptance_probability(r_prop_sqnorm, r_prev_sqnorm, 1.0);
    let u: f64 = rng.gen();
    (alpha >= u, alpha)
}

/// Starting sample for one chain.
pub fn init_estimate<R: Rng + ?Sized>(ctx: &SamplerContext<'_>, mode: InitMode, rng: &mut R) -> Vec<u8> {
    match mode {
        InitMode::RandomConstellation => {
            let m = ctx.constellation.order();
            (0..ctx.nt()).map(|_| rng.gen_range(0..m) as u8).collect()
        }
        InitMode::Mmse => mmse_start(ctx),
    }
}

fn mmse_start(ctx: &SamplerContext<'_>) -> Vec<u8> {
    match detectors::mmse_filter(&ctx.h, &ctx.y, ctx.sigma2) {
        Ok(z) => ctx.constellation.quantize_indices(&z),
        // Only reachable for a singular channel at σ² = 0.
        Err(_) => ctx.constellation.quantize_indices(&vec![Complex64::new(0.0, 0.0); ctx.nt()]),
    }
}

/// Flat list of samples (point-index vectors) with their squared residual norms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleList {
    nt: usize,
    symbols: Vec<u8>,
    sqnorms: Vec<f64>,
}

impl SampleList {
    pub fn new(nt: usize) -> Self {
        Self {
            nt,
            symbols: Vec::new(),
            sqnorms: Vec::new(),
        }
    }

    pub fn with_capacity(nt: usize, samples: usize) -> Self {
        Self {
            nt,
            symbols: Vec::with_capacity(nt * samples),
            sqnorms: Vec::with_capacity(samples),
        }
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    #[inline]
    pub fn push(&mut self, symbols: &[u8], sqnorm: f64) {
        debug_assert_eq!(symbols.len(), self.nt);
        self.symbols.extend_from_slice(symbols);
        self.sqnorms.push(sqnorm);
    }

    pub fn extend(&mut self, other: &SampleList) {
        assert_eq!(self.nt, other.nt);
        self.symbols.extend_from_slice(&other.symbols);
        self.sqnorms.extend_from_slice(&other.sqnorms);
    }

    pub fn len(&self) -> usize {
        self.sqnorms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sqnorms.is_empty()
    }

    pub fn symbols(&self, i: usize) -> &[u8] {
        &self.symbols[i * self.nt..(i + 1) * self.nt]
    }

    pub fn sqnorm(&self, i: usize) -> f64 {
        self.sqnorms[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], f64)> + '_ {
        self.symbols.chunks_exact(self.nt.max(1)).zip(self.sqnorms.iter().copied())
    }

    /// Index of the first sample with the smallest residual.
    pub fn argmin(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &s) in self.sqnorms.iter().enumerate() {
            if best.map_or(true, |b| s < self.sqnorms[b]) {
                best = Some(i);
            }
        }
        best
    }
}

/// State of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x_curr: Vec<u8>,
    pub r_sqnorm_curr: f64,
    pub gamma: f64,
    pub momentum: Vec<Complex64>,
    /// Index of the chain's best sample (first minimiser).
    pub best: usize,
    pub samples: SampleList,
}

impl ChainState {
    pub fn best_symbols(&self) -> &[u8] {
        self.samples.symbols(self.best)
    }

    pub fn best_sqnorm(&self) -> f64 {
        self.samples.sqnorm(self.best)
    }
}

/// One line of the optional per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub sampler: usize,
    pub r_sqnorm: f64,
    pub accepted: bool,
    pub gamma: f64,
}

/// Best pooled sample after a sampling iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledBest {
    pub iteration: usize,
    pub symbols: Vec<u8>,
    pub sqnorm: f64,
}

/// Chain state plus scratch buffers.
struct Chain {
    state: ChainState,
    z: Vec<Complex64>,
    p: Vec<Complex64>,
    g: Vec<Complex64>,
    w: Vec<Complex64>,
    walk: Vec<Complex64>,
    x_tmp: Vec<u8>,
    hx: Vec<Complex64>,
    /// Previous augmented sample and its residual; consecutive descent
    /// iterates often quantize to the same vector.
    last: Vec<u8>,
    last_sq: f64,
}

impl Chain {
    fn new(ctx: &SamplerContext<'_>, params: &SamplerParams, start: Vec<u8>, beta: f64, ops: &mut OpCounter) -> Self {
        let (nr, nt) = (ctx.nr(), ctx.nt());
        let m = ctx.constellation.order();
        let mut hx = vec![Complex64::new(0.0, 0.0); nr];
        let sq = ctx.cache.residual_sqnorm(&ctx.y, &start, &mut hx);
        ops.charge(Phase::Residual, cost::quantize(m, nt) + cost::elementwise(nr));
        let mut samples = SampleList::with_capacity(nt, params.samples_per_chain());
        samples.push(&start, sq);
        Chain {
            state: ChainState {
                x_curr: start,
                r_sqnorm_curr: sq,
                gamma: update_step_size(sq, nr, ctx.d_qam(), beta),
                momentum: vec![Complex64::new(0.0, 0.0); nt],
                best: 0,
                samples,
            },
            z: vec![Complex64::new(0.0, 0.0); nt],
            p: vec![Complex64::new(0.0, 0.0); nt],
            g: vec![Complex64::new(0.0, 0.0); nt],
            w: vec![Complex64::new(0.0, 0.0); nt],
            walk: vec![Complex64::new(0.0, 0.0); nt],
            x_tmp: vec![0u8; nt],
            hx,
            last: vec![0u8; nt],
            last_sq: 0.0,
        }
    }

    #[inline]
    fn record(&mut self, sq: f64) {
        let s = &mut self.state;
        s.samples.push(&self.x_tmp, sq);
        if sq < s.samples.sqnorm(s.best) {
            s.best = s.samples.len() - 1;
        }
    }

    /// One sampling iteration. Returns `(accepted, γ used)`.
    fn step<R: Rng + ?Sized>(
        &mut self,
        ctx: &SamplerContext<'_>,
        params: &SamplerParams,
        beta: f64,
        accept_scale: f64,
        rng: &mut R,
        ops: &mut OpCounter,
    ) -> (bool, f64) {
        let (nr, nt) = (ctx.nr(), ctx.nt());
        let m = ctx.constellation.order();
        let con = ctx.constellation;

        // Step 1: N_g Nesterov iterations from the current sample.
        for (zk, &xk) in self.z.iter_mut().zip(&self.state.x_curr) {
            *zk = con.point(xk);
        }
        if !params.carry_momentum {
            self.state.momentum.iter_mut().for_each(|d| *d = Complex64::new(0.0, 0.0));
        }
        self.last.copy_from_slice(&self.state.x_curr);
        self.last_sq = self.state.r_sqnorm_curr;
        for t in 1..=params.gd_steps {
            nesterov_step(ctx, params.momentum, &mut self.z, &mut self.state.momentum, &mut self.p, &mut self.g);
            ops.charge(Phase::Gd, cost::matvec(nt, nt) + 2.0 * cost::elementwise(nt));
            if params.sample_augmentation && t < params.gd_steps {
                for (xk, zk) in self.x_tmp.iter_mut().zip(&self.z) {
                    *xk = con.quantize_index(*zk);
                }
                if self.x_tmp != self.last {
                    self.last_sq = ctx.cache.residual_sqnorm(&ctx.y, &self.x_tmp, &mut self.hx);
                    self.last.copy_from_slice(&self.x_tmp);
                }
                ops.charge(Phase::Residual, cost::quantize(m, nt) + cost::elementwise(nr));
                let sq = self.last_sq;
                self.record(sq);
            }
        }

        // Step 2: random walk and QAM mapping.
        let gamma = self.state.gamma;
        draw_walk(ctx, rng, &mut self.w, &mut self.walk);
        ops.charge(Phase::Walk, cost::matvec(nt, nt) + cost::elementwise(nt));
        for ((xk, zk), wk) in self.x_tmp.iter_mut().zip(&self.z).zip(&self.walk) {
            *xk = con.quantize_index(zk + wk * gamma);
        }
        let sq_prop = ctx.cache.residual_sqnorm(&ctx.y, &self.x_tmp, &mut self.hx);
        ops.charge(Phase::Residual, cost::quantize(m, nt) + cost::elementwise(nr));

        // Step 3: acceptance.
        let alpha = acceptance_probability(sq_prop, self.state.r_sqnorm_curr, accept_scale);
        let u: f64 = rng.gen();
        let accepted = alpha >= u;
        if accepted {
            self.state.x_curr.copy_from_slice(&self.x_tmp);
            self.state.r_sqnorm_curr = sq_prop;
        } else {
            self.x_tmp.copy_from_slice(&self.state.x_curr);
        }
        let sq = self.state.r_sqnorm_curr;
        self.record(sq);

        // Step 4: step size from the current residual.
        self.state.gamma = update_step_size(sq, nr, ctx.d_qam(), beta);
        (accepted, gamma)
    }
}

fn acceptance_scale(ctx: &SamplerContext<'_>, params: &SamplerParams) -> f64 {
    if params.acceptance_temperature && ctx.sigma2 > 0.0 {
        1.0 / ctx.sigma2
    } else {
        1.0
    }
}

/// Runs a single chain for `S` iterations (no early stopping).
pub fn run_chain<R: Rng + ?Sized>(ctx: &SamplerContext<'_>, params: &SamplerParams, rng: &mut R) -> ChainState {
    let mut ops = OpCounter::new();
    let beta = params.beta(ctx.nt());
    let start = init_estimate(ctx, params.init, rng);
    let mut chain = Chain::new(ctx, params, start, beta, &mut ops);
    let scale = acceptance_scale(ctx, params);
    for _ in 0..params.iterations {
        chain.step(ctx, params, beta, scale, rng, &mut ops);
    }
    chain.state
}

/// Early-stopping test over the per-sampler best samples.
///
/// Stops iff more than half of the samplers hold exactly the global best
/// sample and its residual norm is below `η √(N_r σ²)`.
pub fn es_check(per_sampler_best: &[(&[u8], f64)], nr: usize, sigma2: f64, eta: f64) -> bool {
    let Some((best_idx, _)) = per_sampler_best
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, &(_, s))| match acc {
            Some((_, b)) if s >= b => acc,
            _ => Some((i, s)),
        })
    else {
        return false;
    };
    let (x_min, l_sq) = per_sampler_best[best_idx];
    let count = per_sampler_best.iter().filter(|(x, _)| *x == x_min).count();
    2 * count > per_sampler_best.len() && l_sq.sqrt() < eta * (nr as f64 * sigma2).sqrt()
}

/// Optional recordings of [`run_detector_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct DetectorOptions {
    /// Record the pooled best sample after every iteration.
    pub record_convergence: bool,
    /// Record `(iteration, sampler, ‖r‖², accepted, γ)` per chain step.
    pub record_trace: bool,
}

/// Output of one detection.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub symbols: Vec<u8>,
    pub x_hat: Vec<Complex64>,
    pub bits: Vec<u8>,
    pub sqnorm: f64,
    /// Pooled sample list of all chains, sampler by sampler.
    pub samples: SampleList,
    /// Executed sampling iterations `S_a`.
    pub iterations: usize,
    pub stopped_early: bool,
    pub ops: OpCounter,
    pub convergence: Option<Vec<PooledBest>>,
    pub trace: Option<Vec<TraceRecord>>,
}

/// Runs `P` lockstep chains; `rngs` holds one private stream per chain.
pub fn run_detector<R: Rng>(ctx: &SamplerContext<'_>, params: &SamplerParams, rngs: &mut [R]) -> DetectionResult {
    run_detector_with(ctx, params, rngs, DetectorOptions::default())
}

pub fn run_detector_with<R: Rng>(
    ctx: &SamplerContext<'_>,
    params: &SamplerParams,
    rngs: &mut [R],
    options: DetectorOptions,
) -> DetectionResult {
    assert_eq!(rngs.len(), params.samplers, "one RNG stream per sampler");
    let mut ops = *ctx.preprocessing_ops();
    let beta = params.beta(ctx.nt());
    let scale = acceptance_scale(ctx, params);

    let shared_start = match params.init {
        InitMode::Mmse => {
            ops.charge(
                Phase::Preprocessing,
                detectors::mmse_cost(ctx.nr(), ctx.nt()),
            );
            Some(mmse_start(ctx))
        }
        InitMode::RandomConstellation => None,
    };
    let mut chains: Vec<Chain> = rngs
        .iter_mut()
        .map(|rng| {
            let start = shared_start
                .clone()
                .unwrap_or_else(|| init_estimate(ctx, InitMode::RandomConstellation, rng));
            Chain::new(ctx, params, start, beta, &mut ops)
        })
        .collect();

    let mut convergence = options.record_convergence.then(Vec::new);
    let mut trace = options.record_trace.then(Vec::new);
    let mut executed = 0;
    let mut stopped_early = false;
    for i in 1..=params.iterations {
        for (p, (chain, rng)) in chains.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let (accepted, gamma) = chain.step(ctx, params, beta, scale, rng, &mut ops);
            if let Some(t) = trace.as_mut() {
                t.push(TraceRecord {
                    iteration: i,
                    sampler: p,
                    r_sqnorm: chain.state.r_sqnorm_curr,
                    accepted,
                    gamma,
                });
            }
        }
        executed = i;
        if let Some(c) = convergence.as_mut() {
            let (sym, sq) = pooled_best(&chains);
            c.push(PooledBest {
                iteration: i,
                symbols: sym.to_vec(),
                sqnorm: sq,
            });
        }
        if params.early_stopping && i < params.iterations {
            let bests: Vec<(&[u8], f64)> = chains
                .iter()
                .map(|c| (c.state.best_symbols(), c.state.best_sqnorm()))
                .collect();
            if es_check(&bests, ctx.nr(), ctx.sigma2, params.es_threshold) {
                stopped_early = true;
                break;
            }
        }
    }

    let mut samples = SampleList::with_capacity(ctx.nt(), chains.len() * params.samples_per_chain());
    for c in &chains {
        samples.extend(&c.state.samples);
    }
    let (symbols, sqnorm) = {
        let (s, q) = pooled_best(&chains);
        (s.to_vec(), q)
    };
    let con = ctx.constellation;
    DetectionResult {
        x_hat: con.symbols_to_points(&symbols),
        bits: con.bits_of(&symbols),
        symbols,
        sqnorm,
        samples,
        iterations: executed,
        stopped_early,
        ops,
        convergence,
        trace,
    }
}

/// Lowest residual across chains; ties go to the lowest sampler index.
fn pooled_best(chains: &[Chain]) -> (&[u8], f64) {
    let mut best = 0;
    for (i, c) in chains.iter().enumerate().skip(1) {
        if c.state.best_sqnorm() < chains[best].state.best_sqnorm() {
            best = i;
        }
    }
    (chains[best].state.best_symbols(), chains[best].state.best_sqnorm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_rayleigh, transmit};
    use crate::rng::StreamKey;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_problem<'c>(
        con: &'c Constellation,
        n: usize,
        snr_db: f64,
        seed: u64,
    ) -> (SamplerContext<'c>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = sample_rayleigh(n, n, &mut rng);
        let sym: Vec<u8> = (0..n).map(|_| rng.gen_range(0..con.order()) as u8).collect();
        let x = con.symbols_to_points(&sym);
        let sigma2 = crate::channel::noise_variance_for_snr(snr_db, n, n);
        let y = transmit(&h, &x, sigma2, &mut rng).unwrap();
        (precompute(&h, &y, sigma2, con).unwrap(), sym)
    }

    #[test]
    fn identity_channel_context() {
        let con = Constellation::new(16).unwrap();
        let h = ComplexMatrix::identity(4);
        let y = vec![c(0.1, 0.2); 4];
        let ctx = precompute(&h, &y, 0.1, &con).unwrap();
        assert_eq!(ctx.gram(), &ComplexMatrix::identity(4));
        assert!((ctx.tau() - 0.5).abs() < 1e-15);
        assert_eq!(ctx.mc(), &ComplexMatrix::identity(4));
    }

    #[test]
    fn context_invariants_on_random_channels() {
        let con = Constellation::new(16).unwrap();
        for seed in 0..50 {
            let (ctx, _) = random_problem(&con, 8, 20.0, seed);
            for r in 0..8 {
                assert!((numerics::norm(ctx.mc().row(r)) - 1.0).abs() < 1e-12);
            }
            let lmax = numerics::lambda_max(ctx.gram()).unwrap();
            assert!(ctx.tau() * lmax <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn singular_channel_errors_or_falls_back() {
        let con = Constellation::new(4).unwrap();
        let h = ComplexMatrix::new(2, 2, vec![c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let y = vec![c(0.0, 0.0); 2];
        assert!(matches!(precompute(&h, &y, 0.1, &con), Err(Error::NotPositiveDefinite { .. })));
        let ctx = precompute_or_identity(&h, &y, 0.1, &con).unwrap();
        assert!(ctx.mc_fallback());
        assert_eq!(ctx.mc(), &ComplexMatrix::identity(2));
    }

    #[test]
    fn scalar_nesterov_recurrence() {
        // H = [1], y = 1 → τ = 1; z₁ = 1, p₂ = 1.9, z₂ = 1.0.
        let con = Constellation::new(4).unwrap();
        let h = ComplexMatrix::identity(1);
        let ctx = precompute(&h, &[c(1.0, 0.0)], 0.1, &con).unwrap();
        assert_eq!(ctx.tau(), 1.0);
        let traj = nesterov_burst(&ctx, &[c(0.0, 0.0)], 2, 0.9);
        assert!((traj[0][0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((traj[1][0] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn least_squares_is_a_fixed_point() {
        let con = Constellation::new(16).unwrap();
        let (ctx, _) = random_problem(&con, 4, 20.0, 3);
        let ls = detectors::zf_filter(ctx.h(), ctx.y()).unwrap();
        for z in nesterov_burst(&ctx, &ls, 8, 0.9) {
            let d: f64 = z.iter().zip(&ls).map(|(a, b)| (a - b).norm()).sum();
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn bursts_decrease_cost_from_constellation_starts() {
        let con = Constellation::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut decreased = 0;
        let total = 2_000;
        for seed in 0..total {
            let (ctx, _) = random_problem(&con, 8, 20.0, 1000 + seed);
            let start: Vec<u8> = (0..8).map(|_| rng.gen_range(0..16) as u8).collect();
            let x0 = con.symbols_to_points(&start);
            let f = |z: &[Complex64]| {
                let hz = ctx.h().matvec(z).unwrap();
                numerics::residual(ctx.y(), &hz).unwrap().1
            };
            let traj = nesterov_burst(&ctx, &x0, 8, 0.9);
            if f(traj.last().unwrap()) < f(&x0) {
                decreased += 1;
            }
        }
        assert!(decreased as f64 >= 0.99 * total as f64, "{decreased}/{total}");
    }

    #[test]
    fn step_size_examples() {
        assert!((update_step_size(0.0, 8, 0.3162, 1.0) - 0.3162).abs() < 1e-15);
        let g = update_step_size(16.0, 8, 0.3162, 1.0);
        assert!((g - 4.0 / 8f64.sqrt()).abs() < 1e-12);
        assert!((g - std::f64::consts::SQRT_2).abs() < 1e-4);
        assert!((default_beta(64) - 0.5).abs() < 1e-12);
        assert!((default_beta(8) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn acceptance_examples() {
        assert_eq!(acceptance_probability(1.0, 2.0, 1.0), 1.0);
        assert_eq!(acceptance_probability(2.0, 2.0, 1.0), 1.0);
        assert!((acceptance_probability(2.0, 1.0, 1.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((acceptance_probability(2.0, 1.0, 1.0) - 0.36788).abs() < 1e-5);
        // No overflow or underflow to NaN.
        assert!(acceptance_probability(1e300, 0.0, 1.0) > 0.0);
        assert_eq!(acceptance_probability(0.0, 1e300, 1.0), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            assert!(accept_test(0.5, 0.7, &mut rng).0);
        }
    }

    #[test]
    fn walk_covariance_matches_mc_mch() {
        let con = Constellation::new(16).unwrap();
        let (ctx, _) = random_problem(&con, 4, 20.0, 5);
        let target = ctx.mc().matmul(&ctx.mc().conj_transpose()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let mut acc = ComplexMatrix::zeros(4, 4);
        let zero = vec![c(0.0, 0.0); 4];
        for _ in 0..n {
            let (d, _) = propose(&ctx, &zero, 1.0, &mut rng);
            for i in 0..4 {
                for j in 0..4 {
                    acc[(i, j)] += d[i] * d[j].conj();
                }
            }
        }
        let emp = ComplexMatrix::from_fn(4, 4, |i, j| acc[(i, j)] / n as f64);
        let err = numerics::frobenius_norm(&emp.sub(&target).unwrap()) / numerics::frobenius_norm(&target);
        assert!(err < 0.05, "{err}");
        for i in 0..4 {
            assert!((emp[(i, i)].re - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn zero_step_proposal_is_quantized_gradient_point() {
        let con = Constellation::new(16).unwrap();
        let (ctx, _) = random_problem(&con, 4, 20.0, 8);
        let z = vec![c(0.2, 0.9), c(-0.5, 0.1), c(1.2, -1.3), c(0.0, 0.4)];
        let (_, x) = propose(&ctx, &z, 0.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(x, con.quantize_indices(&z));
        let a = propose(&ctx, &z, 0.5, &mut ChaCha8Rng::seed_from_u64(2));
        let b = propose(&ctx, &z, 0.5, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_list_lengths() {
        let con = Constellation::new(16).unwrap();
        let (ctx, _) = random_problem(&con, 4, 20.0, 9);
        let params = SamplerParams {
            samplers: 1,
            iterations: 1,
            gd_steps: 1,
            ..SamplerParams::default()
        };
        let st = run_chain(&ctx, &params, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(st.samples.len(), 2);

        let params = SamplerParams {
            samplers: 1,
            iterations: 8,
            gd_steps: 8,
            sample_augmentation: true,
            ..SamplerParams::default()
        };
        let st = run_chain(&ctx, &params, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(st.samples.len(), 65);
        assert_eq!(st.best_sqnorm(), st.samples.iter().map(|(_, s)| s).fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn chains_replay_identically() {
        let con = Constellation::new(16).unwrap();
        let (ctx, _) = random_problem(&con, 4, 15.0, 10);
        let params = SamplerParams {
            samplers: 4,
            sample_augmentation: true,
            ..SamplerParams::default()
        };
        let key = StreamKey::new(1, 0, 0);
        let a = run_detector(&ctx, &params, &mut key.sampler_streams(4));
        let b = run_detector(&ctx, &params, &mut key.sampler_streams(4));
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.symbols, b.symbols);
    }

    #[test]
    fn es_examples() {
        let a: &[u8] = &[1, 2];
        let b: &[u8] = &[3, 4];
        let (nr, sigma2, eta) = (8, 0.01, 1.5);
        let thr = eta * (nr as f64 * sigma2).sqrt();
        assert!(es_check(&[(a, (0.5 * thr).powi(2))], nr, sigma2, eta));

        let l = (0.9 * thr).powi(2);
        let mut list: Vec<(&[u8], f64)> = vec![(a, l); 9];
        list.extend(std::iter::repeat((b, l * 1.5)).take(7));
        assert!(es_check(&list, nr, sigma2, eta));

        // Exactly half is not a majority.
        let mut half: Vec<(&[u8], f64)> = vec![(a, l); 8];
        half.extend(std::iter::repeat((b, l * 1.5)).take(8));
        assert!(!es_check(&half, nr, sigma2, eta));

        let trapped: Vec<(&[u8], f64)> = vec![(a, (2.0 * thr).powi(2)); 16];
        assert!(!es_check(&trapped, nr, sigma2, eta));
    }

    #[test]
    fn noiseless_start_at_truth_stops_after_one_iteration() {
        let con = Constellation::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = sample_rayleigh(8, 8, &mut rng);
        let sym: Vec<u8> = (0..8).map(|_| rng.gen_range(0..16) as u8).collect();
        let y = h.matvec(&con.symbols_to_points(&sym)).unwrap();
        // A tiny σ² keeps the ES threshold positive.
        let ctx = precompute(&h, &y, 1e-6, &con).unwrap();
        let params = SamplerParams {
            init: InitMode::Mmse,
            ..SamplerParams::enhanced()
        };
        let res = run_detector(&ctx, &params, &mut StreamKey::from_seed(3).sampler_streams(16));
        assert_eq!(res.symbols, sym);
        assert_eq!(res.iterations, 1);
        assert!(res.stopped_early);
    }

    #[test]
    fn random_init_is_uniform() {
        let con = Constellation::new(4).unwrap();
        let h = ComplexMatrix::identity(2);
        let ctx = precompute(&h, &[c(0.0, 0.0); 2], 0.1, &con).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut counts = [0usize; 16];
        let n = 100_000;
        for _ in 0..n {
            let x = init_estimate(&ctx, InitMode::RandomConstellation, &mut rng);
            counts[(x[0] * 4 + x[1]) as usize] += 1;
        }
        let e = n as f64 / 16.0;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        // 15 degrees of freedom, 0.999 quantile ≈ 37.7.
        assert!(chi2 < 37.7, "{chi2}");
    }

    #[test]
    fn params_validation() {
        assert!(SamplerParams::default().validate().is_ok());
        let bad = SamplerParams {
            samplers: 0,
            momentum: 1.5,
            es_threshold: 0.0,
            ..SamplerParams::default()
        };
        match bad.validate() {
            Err(Error::Config(v)) => assert_eq!(v.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
