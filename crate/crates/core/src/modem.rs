//! Square QAM constellations, Gray bit labelling and the nearest-point
//! quantizer.
//!
//! Points are addressed by a lattice index `re_level * side + im_level`,
//! where level 0 is the most negative amplitude on that axis. Bit labels are
//! Gray coded per axis, real-axis bits first, most significant bit first.
//! Logical bit 1 is the "+1" bit value of the LLR convention.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance for recognising a complex value as a constellation point.
pub const POINT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: usize,
    side: usize,
    bits_per_symbol: usize,
    scale: f64,
    axis_levels: Vec<f64>,
    points: Vec<Complex64>,
    labels: Vec<u8>,
    point_of_label: Vec<u8>,
}

#[inline]
fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

impl Constellation {
    /// Unit-energy square QAM of order 4, 16 or 64.
    pub fn new(order: usize) -> Result<Self> {
        let side = match order {
            4 => 2,
            16 => 4,
            64 => 8,
            _ => return Err(Error::UnsupportedOrder(order)),
        };
        let bits_per_symbol = order.trailing_zeros() as usize;
        let half = bits_per_symbol / 2;
        let scale = (3.0 / (2.0 * (order as f64 - 1.0))).sqrt();
        let axis_levels: Vec<f64> = (0..side)
            .map(|k| (2.0 * k as f64 - (side as f64 - 1.0)) * scale)
            .collect();
        let mut points = Vec::with_capacity(order);
        let mut labels = Vec::with_capacity(order);
        let mut point_of_label = vec![0u8; order];
        for re in 0..side {
            for im in 0..side {
                let idx = re * side + im;
                let label = (gray(re) << half) | gray(im);
                points.push(Complex64::new(axis_levels[re], axis_levels[im]));
                labels.push(label as u8);
                point_of_label[label] = idx as u8;
            }
        }
        Ok(Self {
            order,
            side,
            bits_per_symbol,
            scale,
            axis_levels,
            points,
            labels,
            point_of_label,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of amplitude levels per axis (`√M`).
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// Normalisation factor applied to the odd-integer lattice.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Half the minimum distance between two points.
    pub fn d_qam(&self) -> f64 {
        self.scale
    }

    /// Per-axis amplitudes in ascending order.
    pub fn axis_levels(&self) -> &[f64] {
        &self.axis_levels
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    #[inline]
    pub fn point(&self, index: u8) -> Complex64 {
        self.points[index as usize]
    }

    /// Gray label of a point, as an integer whose MSB is the first bit.
    #[inline]
    pub fn label(&self, index: u8) -> u8 {
        self.labels[index as usize]
    }

    #[inline]
    pub fn point_of_label(&self, label: u8) -> u8 {
        self.point_of_label[label as usize]
    }

    /// Bit `k` (0 = most significant) of the label of point `index`.
    #[inline]
    pub fn bit(&self, index: u8, k: usize) -> u8 {
        (self.labels[index as usize] >> (self.bits_per_symbol - 1 - k)) & 1
    }

    /// Nearest amplitude level on one axis.
    ///
    /// Exact midpoints snap to the smaller-magnitude level; the midpoint at
    /// zero snaps to the positive level.
    #[inline]
    pub fn quantize_axis(&self, v: f64) -> usize {
        let top = (self.side - 1) as f64;
        // NaN clamps to NaN and casts to level 0.
        let t = ((v / self.scale + top) * 0.5).clamp(0.0, top);
        // t >= 0, so truncation is floor.
        let l = t as usize;
        let frac = t - l as f64;
        let mut idx = l + usize::from(frac > 0.5);
        if frac == 0.5 && self.axis_levels[l].abs() >= self.axis_levels[l + 1].abs() {
            idx = l + 1;
        }
        idx
    }

    /// Index of the nearest point to `z`.
    #[inline]
    pub fn quantize_index(&self, z: Complex64) -> u8 {
        (self.quantize_axis(z.re) * self.side + self.quantize_axis(z.im)) as u8
    }

    /// Index of the point equal to `z` (within [`POINT_TOLERANCE`]).
    pub fn index_of(&self, z: Complex64) -> Option<u8> {
        let idx = self.quantize_index(z);
        ((self.point(idx) - z).norm() <= POINT_TOLERANCE).then_some(idx)
    }

    /// Point indices for a bit vector (`log₂M` bits per symbol).
    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<u8>> {
        if bits.len() % self.bits_per_symbol != 0 {
            return Err(Error::LengthMismatch {
                expected: bits.len().next_multiple_of(self.bits_per_symbol),
                got: bits.len(),
            });
        }
        Ok(bits
            .chunks(self.bits_per_symbol)
            .map(|chunk| {
                let label = chunk.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1));
                self.point_of_label(label)
            })
            .collect())
    }

    /// Bits of a sequence of point indices.
    pub fn bits_of(&self, symbols: &[u8]) -> Vec<u8> {
        let mut bits = Vec::with_capacity(symbols.len() * self.bits_per_symbol);
        for &s in symbols {
            for k in 0..self.bits_per_symbol {
                bits.push(self.bit(s, k));
            }
        }
        bits
    }

    /// Point values for a sequence of indices.
    pub fn symbols_to_points(&self, symbols: &[u8]) -> Vec<Complex64> {
        symbols.iter().map(|&s| self.point(s)).collect()
    }

    /// Point indices of the per-element nearest points.
    pub fn quantize_indices(&self, z: &[Complex64]) -> Vec<u8> {
        z.iter().map(|&v| self.quantize_index(v)).collect()
    }

    /// Golden label table: `index,real,imag,label`.
    pub fn label_table_csv(&self) -> String {
        let mut out = String::from("index,real,imag,label\n");
        for (i, p) in self.points.iter().enumerate() {
            let label = self.labels[i];
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:0width$b}",
                i,
                p.re,
                p.im,
                label,
                width = self.bits_per_symbol
            );
        }
        out
    }
}

/// Builds the unit-energy square QAM of order `order`.
pub fn build_constellation(order: usize) -> Result<Constellation> {
    Constellation::new(order)
}

/// Maps `N_t · log₂M` bits to `N_t` symbols.
pub fn modulate(bits: &[u8], c: &Constellation) -> Result<Vec<Complex64>> {
    Ok(c.symbols_to_points(&c.map_bits(bits)?))
}

/// Inverse of [`modulate`]; every entry must be a constellation point.
pub fn demodulate_hard(x: &[Complex64], c: &Constellation) -> Result<Vec<u8>> {
    let symbols = x
        .iter()
        .enumerate()
        .map(|(i, &z)| c.index_of(z).ok_or(Error::NotAConstellationPoint(i)))
        .collect::<Result<Vec<u8>>>()?;
    Ok(c.bits_of(&symbols))
}

/// Elementwise nearest-point quantizer `Q(·)`.
pub fn qam_quantize(z: &[Complex64], c: &Constellation) -> Vec<Complex64> {
    z.iter().map(|&v| c.point(c.quantize_index(v))).collect()
}
