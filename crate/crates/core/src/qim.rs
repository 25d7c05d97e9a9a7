//! Quantization index modulation and its exact form as a two-layer ReLU network.

use crate::error::{Error, Result};
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QimParams {
    /// Quantization step Δ.
    pub delta: f64,
    /// Decoding is defined on `[-range, range]`.
    pub range: f64,
}

impl QimParams {
    pub fn new(delta: f64, range: f64) -> Result<Self> {
        let p = Self { delta, range };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ratio = self.range / self.delta;
        if !(self.delta > 0.0 && self.range > 0.0 && self.range.is_finite())
            || (ratio - ratio.round()).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "qim needs delta > 0 and range a positive multiple of delta, got {self:?}"
            )));
        }
        Ok(())
    }

    fn check(&self, c: f64) -> Result<()> {
        if c.is_nan() || c.abs() > self.range {
            return Err(Error::Usage(format!("coefficient {c} outside ±{}", self.range)));
        }
        Ok(())
    }
}

/// Distance from `c` to the nearest `k * step + offset`.
fn lattice_distance(c: f64, step: f64, offset: f64) -> f64 {
    let k = ((c - offset) / step).round();
    (c - (k * step + offset)).abs()
}

/// `0` when `c` is closer to `{kΔ}`, `1` when closer to `{kΔ + Δ/2}`; ties read `0`.
pub fn qim_decode(c: f64, p: &QimParams) -> Result<u8> {
    p.check(c)?;
    let even = lattice_distance(c, p.delta, 0.0);
    let odd = lattice_distance(c, p.delta, p.delta / 2.0);
    Ok((odd < even) as u8)
}

/// Move `c` to the nearest point of the lattice that carries `bit`.
pub fn qim_embed(c: f64, bit: u8, p: &QimParams) -> f64 {
    let offset = if bit == 1 { p.delta / 2.0 } else { 0.0 };
    ((c - offset) / p.delta).round() * p.delta + offset
}

/// `y = w2 · relu(W1 x + b1) + b2`; the bit is `y > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct QimNetwork {
    /// `units x inputs`.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl QimNetwork {
    pub fn units(&self) -> usize {
        self.b1.len()
    }

    pub fn inputs(&self) -> usize {
        self.w1.first().map_or(0, Vec::len)
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        let hidden = self.w1.iter().zip(&self.b1).map(|(row, b)| {
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
            z.max(0.0)
        });
        hidden.zip(&self.w2).map(|(h, w)| h * w).sum::<f64>() + self.b2
    }

    pub fn decode(&self, x: &[f64]) -> u8 {
        (self.output(x) > 0.0) as u8
    }

    /// Fold a linear front end `c = a · x` into the first layer.
    pub fn with_front(&self, a: &[f64]) -> QimNetwork {
        assert_eq!(self.inputs(), 1, "front end composes with a scalar network");
        QimNetwork {
            w1: self.w1.iter().map(|row| a.iter().map(|v| v * row[0]).collect()).collect(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2,
        }
    }
}

/// The distance to the even lattice is a triangle wave of period Δ with knots
/// every Δ/2. One ReLU starts the wave at `-range`, one more per interior knot
/// flips the slope; the output bias subtracts the Δ/4 decision level.
pub fn qim_as_network(p: &QimParams) -> Result<QimNetwork> {
    p.validate()?;
    let half = p.delta / 2.0;
    let knots = (2.0 * p.range / half).round() as usize;
    let mut b1 = vec![p.range];
    let mut w2 = vec![1.0];
    for k in 1..knots {
        b1.push(-(-p.range + k as f64 * half));
        w2.push(if k % 2 == 1 { -2.0 } else { 2.0 });
    }
    Ok(QimNetwork {
        w1: vec![vec![1.0]; b1.len()],
        b1,
        w2,
        b2: -p.delta / 4.0,
    })
}

/// Orthonormal 2-D DCT-II basis function `(u, v)` on an `n x n` block, row-major.
pub fn dct_basis(n: usize, u: usize, v: usize) -> Vec<f64> {
    let scale = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let cx = ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / (2 * n) as f64).cos();
            let cy = ((2 * y + 1) as f64 * v as f64 * std::f64::consts::PI / (2 * n) as f64).cos();
            out.push(scale(u) * scale(v) * cx * cy);
        }
    }
    out
}

/// Embed `bit` in DCT coefficient `(u, v)` of an 8x8 block by QIM.
pub fn dct_qim_embed(block: &[f64], bit: u8, u: usize, v: usize, p: &QimParams) -> Vec<f64> {
    let basis = dct_basis(8, u, v);
    let c: f64 = basis.iter().zip(block).map(|(a, b)| a * b).sum();
    let shift = qim_embed(c, bit, p) - c;
    block.iter().zip(&basis).map(|(x, b)| x + shift * b).collect()
}

/// QIM decoder for coefficient `(u, v)` of an 8x8 block, as one network on pixels.
pub fn dct_qim_network(u: usize, v: usize, p: &QimParams) -> Result<QimNetwork> {
    Ok(qim_as_network(p)?.with_front(&dct_basis(8, u, v)))
}

/// Distance from `c` to the nearest decision boundary `Δ/4 + kΔ/2`.
pub fn boundary_distance(c: f64, p: &QimParams) -> f64 {
    lattice_distance(c, p.delta / 2.0, p.delta / 4.0)
}

/// `points` evenly spaced coefficients over `[-range, range]`.
pub fn grid(p: &QimParams, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| -p.range + 2.0 * p.range * i as f64 / (points.max(2) - 1) as f64)
        .collect()
}

/// Columns `c,lattice_bit,network_output,network_bit,near_boundary`.
pub fn comparison_csv(p: &QimParams, points: usize, margin: f64) -> Result<String> {
    let net = qim_as_network(p)?;
    let mut out = String::from("c,lattice_bit,network_output,network_bit,near_boundary\n");
    for c in grid(p, points) {
        let _ = writeln!(
            out,
            "{c},{},{},{},{}",
            qim_decode(c, p)?,
            net.output(&[c]),
            net.decode(&[c]),
            boundary_distance(c, p) <= margin
        );
    }
    Ok(out)
}
