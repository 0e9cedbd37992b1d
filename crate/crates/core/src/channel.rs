//! Rayleigh channel draws, noisy observations and channel-estimation error.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::modem::Constellation;
use crate::numerics::ComplexMatrix;
use crate::rng::{Role, StreamKey};

/// Circularly-symmetric complex Gaussian with total variance `variance`.
#[inline]
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// `N_r × N_t` matrix of i.i.d. `CN(0, 1/N_r)` entries.
pub fn sample_rayleigh<R: Rng + ?Sized>(nr: usize, nt: usize, rng: &mut R) -> ComplexMatrix {
    let var = 1.0 / nr as f64;
    ComplexMatrix::from_fn(nr, nt, |_, _| complex_gaussian(rng, var))
}

/// Noise variance for an ensemble SNR, using `E‖Hx‖² = N_t` for the
/// variance-`1/N_r` Rayleigh model with unit-energy symbols.
pub fn noise_variance_for_snr(snr_db: f64, nr: usize, nt: usize) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    nt as f64 / (nr as f64 * 10f64.powf(snr_db / 10.0))
}

/// `y = Hx + n` with `n ~ CN(0, σ² I)`.
pub fn transmit<R: Rng + ?Sized>(h: &ComplexMatrix, x: &[Complex64], sigma2: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    let mut y = h.matvec(x)?;
    if sigma2 > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(rng, sigma2);
        }
    }
    Ok(y)
}

/// `Ĥ = H + ΔH` with `(ΔH)_ij ~ CN(0, nmse / N_r)`, which makes
/// `E‖ΔH‖²_F / E‖H‖²_F = nmse` under the Rayleigh model.
pub fn perturb_channel<R: Rng + ?Sized>(h: &ComplexMatrix, nmse: f64, rng: &mut R) -> ComplexMatrix {
    if nmse <= 0.0 {
        return h.clone();
    }
    let var = nmse / h.rows() as f64;
    ComplexMatrix::from_fn(h.rows(), h.cols(), |r, c| h[(r, c)] + complex_gaussian(rng, var))
}

/// One simulated transmission.
#[derive(Debug, Clone)]
pub struct ChannelInstance {
    /// True channel, used to produce `y`.
    pub h: ComplexMatrix,
    /// Channel handed to the detector (equals `h` under perfect CSI).
    pub h_est: ComplexMatrix,
    pub sigma2: f64,
    pub snr_db: f64,
    pub symbols_true: Vec<u8>,
    pub x_true: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub bits_true: Vec<u8>,
}

impl ChannelInstance {
    /// Draws channel, payload, noise and estimation error from the streams of `key`.
    pub fn generate(
        nr: usize,
        nt: usize,
        constellation: &Constellation,
        snr_db: f64,
        nmse: f64,
        key: &StreamKey,
    ) -> Result<Self> {
        let h = sample_rayleigh(nr, nt, &mut key.stream(Role::Channel));
        let mut payload = key.stream(Role::Payload);
        let bits_true: Vec<u8> = (0..nt * constellation.bits_per_symbol())
            .map(|_| payload.gen_range(0..2u8))
            .collect();
        let symbols_true = constellation.map_bits(&bits_true)?;
        let x_true = constellation.symbols_to_points(&symbols_true);
        let sigma2 = noise_variance_for_snr(snr_db, nr, nt);
        let y = transmit(&h, &x_true, sigma2, &mut key.stream(Role::Noise))?;
        let h_est = perturb_channel(&h, nmse, &mut key.stream(Role::EstimationError));
        Ok(Self {
            h,
            h_est,
            sigma2,
            snr_db,
            symbols_true,
            x_true,
            y,
            bits_true,
        })
    }

    /// CSV dump of `H`, `y` and `x_true` for cross-implementation checks.
    ///
    /// Rows are `kind,row,col,re,im` with `kind ∈ {H, y, x}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,row,col,re,im\n");
        for r in 0..self.h.rows() {
            for c in 0..self.h.cols() {
                let z = self.h[(r, c)];
                let _ = writeln!(out, "H,{r},{c},{:e},{:e}", z.re, z.im);
            }
        }
        for (r, z) in self.y.iter().enumerate() {
            let _ = writeln!(out, "y,{r},0,{:e},{:e}", z.re, z.im);
        }
        for (r, z) in self.x_true.iter().enumerate() {
            let _ = writeln!(out, "x,{r},0,{:e},{:e}", z.re, z.im);
        }
        out
    }
}
