//! The seeded spatially coupled measurement ensemble.
//!
//! The signal is split into `L` equal column blocks and the measurements into
//! `L` row blocks. Row block `q` holds `alpha_q * N / L` measurements, with the
//! first `w_s` blocks (the seed) sampled at `alpha_s` and the rest (the bulk) at
//! `alpha_b`. Entries of block `(q, r)` have variance `J_qr / N`, where `J_qr`
//! is a banded coupling matrix built from an interaction shape `g` on `[-1, 1]`.
//!
//! Block indices are 0-based throughout the crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("number of blocks L must be positive")]
    NoBlocks,
    #[error("interaction range w={w} must be smaller than L={l}")]
    RangeTooLarge { w: usize, l: usize },
    #[error("seed size w_s={ws} must be smaller than L={l}")]
    SeedTooLarge { ws: usize, l: usize },
    #[error("bulk ratio alpha_b={0} must lie in (0, 1]")]
    BulkRatio(f64),
    #[error("seed ratio alpha_s={0} must be positive")]
    SeedRatio(f64),
    #[error("coupling strength J={0} must be positive")]
    Strength(f64),
    #[error("tilt A={0} must lie in [-1/2, 1/2]")]
    Tilt(f64),
    #[error("shape weights need w >= 1")]
    ZeroRange,
    #[error("signal density rho={0} must lie in (0, 1]")]
    Density(f64),
    #[error("noise variance delta={0} must be non-negative")]
    Noise(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ShapeKind {
    #[default]
    #[serde(alias = "flat")]
    Flat,
    #[serde(alias = "tilted")]
    Tilted,
}

/// Interaction profile `g(x)` on `[-1, 1]`: `1/2` when flat, `1/2 + A x` when tilted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ShapeFunction {
    pub kind: ShapeKind,
    #[serde(rename = "A", default)]
    pub tilt: f64,
}

impl ShapeFunction {
    pub const fn flat() -> Self {
        Self { kind: ShapeKind::Flat, tilt: 0.0 }
    }

    pub const fn tilted(a: f64) -> Self {
        Self { kind: ShapeKind::Tilted, tilt: a }
    }

    /// Shape with tilt `a`, using the flat variant when `a == 0`.
    pub fn with_tilt(a: f64) -> Self {
        if a == 0.0 {
            Self::flat()
        } else {
            Self::tilted(a)
        }
    }

    /// Effective tilt; always zero for the flat shape.
    pub fn slope(&self) -> f64 {
        match self.kind {
            ShapeKind::Flat => 0.0,
            ShapeKind::Tilted => self.tilt,
        }
    }

    /// `g(x)`, zero outside `[-1, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        if !(-1.0..=1.0).contains(&x) {
            return 0.0;
        }
        0.5 + self.slope() * x
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let a = self.slope();
        if !(-0.5..=0.5).contains(&a) {
            return Err(ModelError::Tilt(a));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Boundary {
    /// Drop out-of-range neighbours; edge rows sum to less than `J`.
    #[default]
    #[serde(alias = "truncate")]
    Truncate,
    /// Rescale every row so that it sums to `J`.
    #[serde(alias = "row_renormalize", alias = "renormalize")]
    RowRenormalize,
}

fn default_strength() -> f64 {
    1.0
}

/// Full description of a seeded coupled ensemble. This is the JSON experiment
/// configuration unit read by the command-line driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    #[serde(rename = "L")]
    pub blocks: usize,
    pub w: usize,
    pub w_s: usize,
    pub alpha_b: f64,
    pub alpha_s: f64,
    #[serde(default)]
    pub shape: ShapeFunction,
    #[serde(rename = "J", default = "default_strength")]
    pub strength: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl CouplingSpec {
    /// Flat, truncated ensemble with `J = 1`.
    pub fn new(blocks: usize, w: usize, w_s: usize, alpha_b: f64, alpha_s: f64) -> Self {
        Self {
            blocks,
            w,
            w_s,
            alpha_b,
            alpha_s,
            shape: ShapeFunction::flat(),
            strength: 1.0,
            boundary: Boundary::Truncate,
        }
    }

    pub fn with_shape(mut self, shape: ShapeFunction) -> Self {
        self.shape = shape;
        self
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_strength(mut self, strength: f64) -> Self {
        self.strength = strength;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let l = self.blocks;
        if l == 0 {
            return Err(ModelError::NoBlocks);
        }
        if self.w > 0 && self.w >= l {
            return Err(ModelError::RangeTooLarge { w: self.w, l });
        }
        if self.w_s >= l && self.w_s > 0 {
            return Err(ModelError::SeedTooLarge { ws: self.w_s, l });
        }
        if !(self.alpha_b > 0.0 && self.alpha_b <= 1.0) {
            return Err(ModelError::BulkRatio(self.alpha_b));
        }
        if !(self.alpha_s > 0.0 && self.alpha_s.is_finite()) {
            return Err(ModelError::SeedRatio(self.alpha_s));
        }
        if !(self.strength > 0.0 && self.strength.is_finite()) {
            return Err(ModelError::Strength(self.strength));
        }
        self.shape.validate()?;
        if self.w_s > 0 && self.alpha_s < self.alpha_b {
            log::warn!(
                "seed ratio alpha_s={} is below the bulk ratio alpha_b={}",
                self.alpha_s,
                self.alpha_b
            );
        }
        Ok(())
    }
}

/// Signal density and measurement noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams<T = f64> {
    pub rho: T,
    pub delta: T,
}

impl<T: Scalar> ProblemParams<T> {
    pub fn new(rho: T, delta: T) -> Result<Self, ModelError> {
        let p = Self { rho, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.rho > T::zero() && self.rho <= T::one()) {
            return Err(ModelError::Density(self.rho.to_f64_lossy()));
        }
        if !(self.delta >= T::zero() && self.delta.is_finite()) {
            return Err(ModelError::Noise(self.delta.to_f64_lossy()));
        }
        Ok(())
    }
}

/// Discrete normalization constant `c_w = (1/w) sum_{z=-w}^{w} g(z/w)`.
///
/// The linear part of a tilted shape cancels over the symmetric range, so
/// `c_w = (2w + 1) / (2w)` for every admissible shape.
pub fn shape_normalization(shape: &ShapeFunction, w: usize) -> Result<f64, ModelError> {
    if w == 0 {
        return Err(ModelError::ZeroRange);
    }
    let wf = w as f64;
    let total: f64 = (-(w as i64)..=w as i64)
        .map(|z| shape.eval(z as f64 / wf))
        .sum();
    Ok(total / wf)
}

/// Normalized interaction weight `g(z/w) / c_w`, zero for `|z| > w`.
pub fn shape_weight(shape: &ShapeFunction, z: i64, w: usize) -> Result<f64, ModelError> {
    let c = shape_normalization(shape, w)?;
    if z.unsigned_abs() as usize > w {
        return Ok(0.0);
    }
    Ok(shape.eval(z as f64 / w as f64) / c)
}

/// Banded `L x L` coupling matrix. Row `q` is a measurement block, column `r`
/// a signal block. Only the band `|q - r| <= w` is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix<T> {
    blocks: usize,
    w: usize,
    // row-major, row q holds offsets r - q = -w..=w
    band: Vec<T>,
}

impl<T: Scalar> CouplingMatrix<T> {
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn range(&self) -> usize {
        self.w
    }

    fn width(&self) -> usize {
        2 * self.w + 1
    }

    /// Entry `J_qr`.
    pub fn get(&self, q: usize, r: usize) -> T {
        if q >= self.blocks || r >= self.blocks || q.abs_diff(r) > self.w {
            return T::zero();
        }
        self.band[q * self.width() + (r + self.w - q)]
    }

    /// Column span `[lo, hi)` of the band in row `q` (also the row span of column `q`).
    #[inline]
    pub fn span(&self, q: usize) -> (usize, usize) {
        (q.saturating_sub(self.w), (q + self.w + 1).min(self.blocks))
    }

    /// Nonzero-pattern entries of row `q` as `(r, J_qr)`.
    pub fn row(&self, q: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (lo, hi) = self.span(q);
        (lo..hi).map(move |r| (r, self.get(q, r)))
    }

    /// Entries of column `r` as `(q, J_qr)`.
    pub fn column(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (lo, hi) = self.span(r);
        (lo..hi).map(move |q| (q, self.get(q, r)))
    }

    pub fn row_sum(&self, q: usize) -> T {
        self.row(q).map(|(_, v)| v).sum()
    }

    pub fn column_sum(&self, r: usize) -> T {
        self.column(r).map(|(_, v)| v).sum()
    }

    /// `sum_r J_qr x_r` for every row.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.blocks);
        (0..self.blocks)
            .map(|q| self.row(q).map(|(r, v)| v * x[r]).sum())
            .collect()
    }

    /// `sum_q y_q J_qr` for every column.
    pub fn apply_transpose(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.blocks);
        (0..self.blocks)
            .map(|r| self.column(r).map(|(q, v)| y[q] * v).sum())
            .collect()
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        (0..self.blocks)
            .map(|q| (0..self.blocks).map(|r| self.get(q, r)).collect())
            .collect()
    }
}

/// Builds `J_qr = (J / w) g((r - q)/w) / c_w` with the requested boundary
/// treatment, or `J` times the identity when `w = 0`.
pub fn build_coupling_matrix<T: Scalar>(spec: &CouplingSpec) -> Result<CouplingMatrix<T>, ModelError> {
    spec.validate()?;
    let l = spec.blocks;
    let w = spec.w;
    let width = 2 * w + 1;
    let mut band = vec![T::zero(); l * width];
    if w == 0 {
        band.iter_mut().for_each(|v| *v = T::of(spec.strength));
        return Ok(CouplingMatrix { blocks: l, w, band });
    }
    let weights: Vec<f64> = (-(w as i64)..=w as i64)
        .map(|z| shape_weight(&spec.shape, z, w).map(|g| spec.strength * g / w as f64))
        .collect::<Result<_, _>>()?;
    for q in 0..l {
        let (lo, hi) = (q.saturating_sub(w), (q + w + 1).min(l));
        let row = &mut band[q * width..(q + 1) * width];
        let mut sum = 0.0;
        for r in lo..hi {
            let k = r + w - q;
            sum += weights[k];
        }
        let scale = match spec.boundary {
            Boundary::Truncate => 1.0,
            Boundary::RowRenormalize if sum > 0.0 => spec.strength / sum,
            // a fully tilted row can lose all of its mass at the edge
            Boundary::RowRenormalize => 1.0,
        };
        for r in lo..hi {
            let k = r + w - q;
            row[k] = T::of(weights[k] * scale);
        }
    }
    Ok(CouplingMatrix { blocks: l, w, band })
}

/// Per-row-block undersampling ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaProfile<T>(pub Vec<T>);

impl<T: Scalar> AlphaProfile<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn build_alpha_profile<T: Scalar>(spec: &CouplingSpec) -> Result<AlphaProfile<T>, ModelError> {
    spec.validate()?;
    Ok(AlphaProfile(
        (0..spec.blocks)
            .map(|q| T::of(if q < spec.w_s { spec.alpha_s } else { spec.alpha_b }))
            .collect(),
    ))
}

/// System-averaged undersampling ratio including the seed overhead.
pub fn effective_alpha(spec: &CouplingSpec) -> f64 {
    let l = spec.blocks as f64;
    let ws = spec.w_s as f64;
    (spec.alpha_b * (l - ws) + spec.alpha_s * ws) / l
}
