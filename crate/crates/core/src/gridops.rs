//! Grid containers, the forward-difference operator `D`, its adjoint, the
//! mixed `ℓ2,1` norm and the projection that serves as the proximal map of
//! its conjugate.
//!
//! Every reduction runs in a fixed row-major order so results are bitwise
//! reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `‖D‖` for the isotropic forward-difference operator on any grid.
pub const GRAD_NORM: f64 = 2.0 * std::f64::consts::SQRT_2;

/// Row-major `rows × cols` grid of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScalarField {
    /// Builds a field, checking shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::Config(format!(
                "scalar field must be at least 2x2, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "expected {} samples for a {rows}x{cols} grid, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for buffers produced by our own kernels.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    /// Field of i.i.d. uniform samples in `[-1, 1)`.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.data, &other.data)
    }

    /// Euclidean (Frobenius) norm.
    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn ensure_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }
}

/// `channels` stacked `rows × cols` grids, stored channel-major.
///
/// Channel order is `(horizontal, vertical)` for a gradient and
/// `(Dv horizontal, Dv vertical, αDh horizontal, αDh vertical)` for the
/// coupled stack.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl VectorField {
    pub fn new(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("vector field needs at least one channel".into()));
        }
        if data.len() != channels * rows * cols {
            return Err(Error::Config(format!(
                "expected {} samples for {channels} channels of {rows}x{cols}, got {}",
                channels * rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            channels,
            rows,
            cols,
            data,
        })
    }

    pub(crate) fn from_raw(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * rows * cols);
        Self {
            channels,
            rows,
            cols,
            data,
        }
    }

    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self::from_raw(channels, rows, cols, vec![0.0; channels * rows * cols])
    }

    pub fn random(channels: usize, rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels * rows * cols)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Self::from_raw(channels, rows, cols, data)
    }

    /// Stacks fields with identical grid shape along the channel axis.
    pub fn stack(parts: &[&VectorField]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("cannot stack zero fields".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if (p.rows, p.cols) != (first.rows, first.cols) {
                return Err(Error::DimensionMismatch {
                    expected: (first.rows, first.cols),
                    got: (p.rows, p.cols),
                });
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Self::from_raw(channels, first.rows, first.cols, data))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.rows * self.cols;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Per-pixel vector at `(r, c)`.
    pub fn pixel(&self, r: usize, c: usize) -> Vec<f64> {
        let idx = r * self.cols + c;
        (0..self.channels).map(|k| self.channel(k)[idx]).collect()
    }

    pub fn set_pixel(&mut self, r: usize, c: usize, value: &[f64]) {
        let idx = r * self.cols + c;
        for (k, v) in value.iter().enumerate().take(self.channels) {
            self.channel_mut(k)[idx] = *v;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// Largest per-pixel Euclidean norm.
    pub fn max_pixel_norm(&self) -> f64 {
        pixel_norms(&self.data, self.channels, self.rows * self.cols).fold(0.0, f64::max)
    }
}

/// Binary label grid (`0` background, `1` foreground).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "expected {} labels, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Config("mask labels must be 0 or 1".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(u8::from(f(r, c)));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of pixels labelled `1`.
    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / self.data.len() as f64
    }

    pub fn complement(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pixel_norms(data: &[f64], channels: usize, n: usize) -> impl Iterator<Item = f64> + '_ {
    (0..n).map(move |i| {
        (0..channels)
            .map(|k| {
                let v = data[k * n + i];
                v * v
            })
            .sum::<f64>()
            .sqrt()
    })
}

/// Writes `D x` (two channels) into `out`, scaled by `scale`.
pub(crate) fn grad_into(x: &[f64], rows: usize, cols: usize, scale: f64, out: &mut [f64]) {
    let n = rows * cols;
    let (horiz, vert) = out[..2 * n].split_at_mut(n);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let hrow = &mut horiz[r * cols..(r + 1) * cols];
        for c in 0..cols - 1 {
            hrow[c] = scale * (row[c + 1] - row[c]);
        }
        hrow[cols - 1] = 0.0;
        let vrow = &mut vert[r * cols..(r + 1) * cols];
        if r + 1 < rows {
            let next = &x[(r + 1) * cols..(r + 2) * cols];
            for c in 0..cols {
                vrow[c] = scale * (next[c] - row[c]);
            }
        } else {
            vrow.fill(0.0);
        }
    }
}

/// Writes `scale · D* y` into `out` (overwrites).
pub(crate) fn grad_adjoint_into(y: &[f64], rows: usize, cols: usize, scale: f64, out: &mut [f64]) {
    let n = rows * cols;
    let (horiz, vert) = y[..2 * n].split_at(n);
    for r in 0..rows {
        let h = &horiz[r * cols..(r + 1) * cols];
        let v = &vert[r * cols..(r + 1) * cols];
        let o = &mut out[r * cols..(r + 1) * cols];
        // horizontal part: y[c-1] - y[c], last column only receives y[c-1]
        o[0] = -h[0];
        for c in 1..cols - 1 {
            o[c] = h[c - 1] - h[c];
        }
        o[cols - 1] = h[cols - 2];
        if r == 0 {
            for c in 0..cols {
                o[c] -= v[c];
            }
        } else if r + 1 < rows {
            let up = &vert[(r - 1) * cols..r * cols];
            for c in 0..cols {
                o[c] += up[c] - v[c];
            }
        } else {
            let up = &vert[(r - 1) * cols..r * cols];
            for c in 0..cols {
                o[c] += up[c];
            }
        }
        if scale != 1.0 {
            for val in o.iter_mut() {
                *val *= scale;
            }
        }
    }
}

/// `Σ_pixels ‖y_pixel‖₂` for a channel-major buffer.
pub(crate) fn norm21_raw(data: &[f64], channels: usize, n: usize) -> f64 {
    pixel_norms(data, channels, n).sum()
}

/// Projects each per-pixel vector of a channel-major buffer onto the
/// Euclidean ball of radius `radius`.
///
/// Vectors within a relative `1e-14` of the radius are left alone so that a
/// second application is an exact no-op.
pub(crate) fn project_ball(data: &mut [f64], channels: usize, n: usize, radius: f64) {
    let limit = radius * (1.0 + 1e-14);
    let r2 = limit * limit;
    match channels {
        2 => {
            let (a, b) = data.split_at_mut(n);
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let s = *x * *x + *y * *y;
                if s > r2 {
                    let f = radius / s.sqrt();
                    *x *= f;
                    *y *= f;
                }
            }
        }
        _ => {
            for i in 0..n {
                let s: f64 = (0..channels).map(|k| data[k * n + i] * data[k * n + i]).sum();
                if s > r2 {
                    let f = radius / s.sqrt();
                    for k in 0..channels {
                        data[k * n + i] *= f;
                    }
                }
            }
        }
    }
}

/// Forward differences: channel 0 horizontal, channel 1 vertical, zero
/// increments past the last column/row.
pub fn grad(x: &ScalarField) -> VectorField {
    let (rows, cols) = x.dims();
    let mut out = vec![0.0; 2 * rows * cols];
    grad_into(x.as_slice(), rows, cols, 1.0, &mut out);
    VectorField::from_raw(2, rows, cols, out)
}

/// Exact adjoint of [`grad`] (negative divergence).
pub fn grad_adjoint(y: &VectorField) -> Result<ScalarField> {
    if y.channels != 2 {
        return Err(Error::Config(format!(
            "gradient adjoint expects 2 channels, got {}",
            y.channels
        )));
    }
    if y.rows < 2 || y.cols < 2 {
        return Err(Error::Config("gradient adjoint needs at least a 2x2 grid".into()));
    }
    let mut out = vec![0.0; y.rows * y.cols];
    grad_adjoint_into(&y.data, y.rows, y.cols, 1.0, &mut out);
    Ok(ScalarField::from_raw(y.rows, y.cols, out))
}

/// Mixed norm: sum over pixels of the Euclidean norm of each pixel vector.
pub fn norm21(y: &VectorField) -> f64 {
    norm21_raw(&y.data, y.channels, y.rows * y.cols)
}

/// Proximal operator of `(λ‖·‖₂,₁)*`, i.e. per-pixel projection onto the
/// ball of radius `λ`. Independent of the prox step because the conjugate
/// is an indicator.
pub fn prox_conj_norm21(y: &VectorField, lambda: f64) -> Result<VectorField> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!(
            "ball radius must be positive and finite, got {lambda}"
        )));
    }
    let mut out = y.clone();
    project_ball(&mut out.data, out.channels, out.rows * out.cols, lambda);
    Ok(out)
}

/// `‖D‖ = 2√2`.
pub fn op_norm_grad() -> f64 {
    GRAD_NORM
}

/// Power iteration on `D*D` for a `rows × cols` grid; returns the estimate
/// of `‖D‖` after `iterations` steps (a lower bound on the true norm).
pub fn power_iteration_grad_norm(rows: usize, cols: usize, iterations: usize, seed: u64) -> f64 {
    let n = rows * cols;
    let mut x = ScalarField::random(rows, cols, seed).into_vec();
    let mut g = vec![0.0; 2 * n];
    let mut y = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let nx = dot(&x, &x).sqrt();
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        grad_into(&x, rows, cols, 1.0, &mut g);
        estimate = dot(&g, &g).sqrt();
        grad_adjoint_into(&g, rows, cols, 1.0, &mut y);
        std::mem::swap(&mut x, &mut y);
    }
    estimate
}
