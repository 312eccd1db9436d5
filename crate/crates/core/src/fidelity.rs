//! The least-squares log-log fidelity term
//! `Φ(v, h) = ½ Σ_j ‖v + j h − log₂ ℒ_j‖²` and everything derived from it:
//! the regression system `J`, per-pixel statistics `(𝒮, 𝒯)`, the linear
//! regression estimate, `∇Φ`, `prox_{δΦ}`, the strong convexity constant and
//! the Fenchel conjugate `Φ*`.
//!
//! All quantities decouple per pixel into `2×2` problems with the same
//! matrix `J = [[R0, R1], [R1, R2]]`, `R_m = Σ_j j^m`.

use crate::error::{Error, Result};
use crate::gridops::ScalarField;
use crate::wavelet::LeaderPyramid;

/// Power sums of the octave range and the derived `2×2` matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSystem {
    pub j1: u32,
    pub j2: u32,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    /// `det J = R0·R2 − R1²`.
    pub det: f64,
    /// Smallest eigenvalue of `J`, the strong convexity constant of `Φ`.
    pub mu: f64,
    /// Largest eigenvalue of `J`.
    pub lmax: f64,
}

impl RegressionSystem {
    pub fn new(j1: u32, j2: u32) -> Result<Self> {
        if j1 >= j2 {
            return Err(Error::Config(format!(
                "octave range needs j1 < j2, got ({j1}, {j2})"
            )));
        }
        let (mut r0, mut r1, mut r2) = (0u64, 0u64, 0u64);
        for j in j1 as u64..=j2 as u64 {
            r0 += 1;
            r1 += j;
            r2 += j * j;
        }
        let (r0, r1, r2) = (r0 as f64, r1 as f64, r2 as f64);
        let det = r0 * r2 - r1 * r1;
        let tr = r0 + r2;
        let disc = ((r0 - r2) * (r0 - r2) + 4.0 * r1 * r1).sqrt();
        let lmax = 0.5 * (tr + disc);
        // det / lmax avoids the cancellation in (tr - disc) / 2
        let mu = det / lmax;
        Ok(Self {
            j1,
            j2,
            r0,
            r1,
            r2,
            det,
            mu,
            lmax,
        })
    }

    pub fn j(&self) -> [[f64; 2]; 2] {
        [[self.r0, self.r1], [self.r1, self.r2]]
    }

    pub fn j_inv(&self) -> [[f64; 2]; 2] {
        let d = self.det;
        [[self.r2 / d, -self.r1 / d], [-self.r1 / d, self.r0 / d]]
    }

    /// Spectral norm of `J⁻¹`, equal to `1 / mu`.
    pub fn j_inv_norm(&self) -> f64 {
        1.0 / self.mu
    }

    #[inline]
    pub(crate) fn solve(&self, a: f64, b: f64) -> (f64, f64) {
        (
            (self.r2 * a - self.r1 * b) / self.det,
            (self.r0 * b - self.r1 * a) / self.det,
        )
    }

    #[inline]
    pub(crate) fn apply(&self, v: f64, h: f64) -> (f64, f64) {
        (self.r0 * v + self.r1 * h, self.r1 * v + self.r2 * h)
    }

    pub fn octaves(&self) -> impl Iterator<Item = u32> {
        self.j1..=self.j2
    }
}

/// One row of the strong-convexity map over octave ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuEntry {
    pub j1: u32,
    pub j2: u32,
    pub mu: f64,
    pub j_inv_norm: f64,
}

/// `mu` for every `1 ≤ j1 < j2 ≤ jmax`.
pub fn mu_table(jmax: u32) -> Vec<MuEntry> {
    let mut out = Vec::new();
    for j1 in 1..jmax {
        for j2 in j1 + 1..=jmax {
            let s = RegressionSystem::new(j1, j2).expect("valid range");
            out.push(MuEntry {
                j1,
                j2,
                mu: s.mu,
                j_inv_norm: s.j_inv_norm(),
            });
        }
    }
    out
}

/// Per-pixel sums `𝒮 = Σ_j log₂ ℒ_j`, `𝒯 = Σ_j j log₂ ℒ_j` and the scalar
/// `Σ_j Σ_n (log₂ ℒ_{j,n})²`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub s: ScalarField,
    pub t: ScalarField,
    pub log_sq_sum: f64,
}

impl RegressionData {
    pub fn dims(&self) -> (usize, usize) {
        self.s.dims()
    }
}

/// Primal variable `(v, h)`: log-variance proxy and local regularity.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatePair {
    pub v: ScalarField,
    pub h: ScalarField,
}

impl EstimatePair {
    pub fn new(v: ScalarField, h: ScalarField) -> Result<Self> {
        v.ensure_same_dims(&h)?;
        Ok(Self { v, h })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            v: ScalarField::zeros(rows, cols),
            h: ScalarField::zeros(rows, cols),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.v.dims()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.v.dot(&other.v) + self.h.dot(&other.h)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let d = |a: &ScalarField, b: &ScalarField| {
            ScalarField::from_raw(
                a.rows(),
                a.cols(),
                a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect(),
            )
        };
        Self {
            v: d(&self.v, &other.v),
            h: d(&self.h, &other.h),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.v.max_abs_diff(&other.v).max(self.h.max_abs_diff(&other.h))
    }

    /// Flat `[v; h]` buffer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.v.as_slice().to_vec();
        out.extend_from_slice(self.h.as_slice());
        out
    }

    pub(crate) fn from_flat(rows: usize, cols: usize, flat: &[f64]) -> Self {
        let n = rows * cols;
        Self {
            v: ScalarField::from_raw(rows, cols, flat[..n].to_vec()),
            h: ScalarField::from_raw(rows, cols, flat[n..2 * n].to_vec()),
        }
    }
}

fn check_octaves(pyr: &LeaderPyramid, sys: &RegressionSystem) -> Result<()> {
    if pyr.j1() != sys.j1 || pyr.j2() != sys.j2 {
        return Err(Error::Config(format!(
            "pyramid octaves {}..={} do not match regression range {}..={}",
            pyr.j1(),
            pyr.j2(),
            sys.j1,
            sys.j2
        )));
    }
    if !pyr.is_log_domain() {
        return Err(Error::Config(
            "pyramid must be in the log domain (apply loglead first)".into(),
        ));
    }
    Ok(())
}

pub fn build_system(j1: u32, j2: u32) -> Result<RegressionSystem> {
    RegressionSystem::new(j1, j2)
}

pub fn regression_stats(pyr: &LeaderPyramid, sys: &RegressionSystem) -> Result<RegressionData> {
    check_octaves(pyr, sys)?;
    let (rows, cols) = pyr.dims();
    let n = rows * cols;
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut log_sq_sum = 0.0;
    for (j, field) in pyr.fields() {
        let jf = j as f64;
        for (i, &l) in field.as_slice().iter().enumerate() {
            s[i] += l;
            t[i] += jf * l;
            log_sq_sum += l * l;
        }
    }
    Ok(RegressionData {
        s: ScalarField::from_raw(rows, cols, s),
        t: ScalarField::from_raw(rows, cols, t),
        log_sq_sum,
    })
}

/// Per-pixel linear regression `(v̂, ĥ) = J⁻¹ (𝒮, 𝒯)`.
pub fn linreg(data: &RegressionData, sys: &RegressionSystem) -> EstimatePair {
    let (rows, cols) = data.dims();
    let (v, h): (Vec<f64>, Vec<f64>) = data
        .s
        .as_slice()
        .iter()
        .zip(data.t.as_slice())
        .map(|(&s, &t)| sys.solve(s, t))
        .unzip();
    EstimatePair {
        v: ScalarField::from_raw(rows, cols, v),
        h: ScalarField::from_raw(rows, cols, h),
    }
}

/// `Φ` evaluated directly from the log-leaders.
pub fn phi(x: &EstimatePair, pyr: &LeaderPyramid, sys: &RegressionSystem) -> Result<f64> {
    check_octaves(pyr, sys)?;
    if x.dims() != pyr.dims() {
        return Err(Error::DimensionMismatch {
            expected: pyr.dims(),
            got: x.dims(),
        });
    }
    let mut total = 0.0;
    for (j, field) in pyr.fields() {
        let jf = j as f64;
        for ((&v, &h), &l) in x.v.as_slice().iter().zip(x.h.as_slice()).zip(field.as_slice()) {
            let r = v + jf * h - l;
            total += r * r;
        }
    }
    Ok(0.5 * total)
}

fn check_stats(x: &EstimatePair, data: &RegressionData) -> Result<()> {
    if x.dims() != data.dims() {
        return Err(Error::DimensionMismatch {
            expected: data.dims(),
            got: x.dims(),
        });
    }
    Ok(())
}

/// `Φ` from the sufficient statistics (the form the solvers use).
pub fn phi_from_stats(x: &EstimatePair, data: &RegressionData, sys: &RegressionSystem) -> Result<f64> {
    check_stats(x, data)?;
    let n = x.v.len();
    let flat = x.to_flat();
    Ok(phi_raw(&flat[..n], &flat[n..], data, sys))
}

pub(crate) fn phi_raw(v: &[f64], h: &[f64], data: &RegressionData, sys: &RegressionSystem) -> f64 {
    let mut acc = 0.0;
    for (((&v, &h), &s), &t) in v.iter().zip(h).zip(data.s.as_slice()).zip(data.t.as_slice()) {
        acc += 0.5 * (sys.r0 * v * v + 2.0 * sys.r1 * v * h + sys.r2 * h * h) - (v * s + h * t);
    }
    acc + 0.5 * data.log_sq_sum
}

/// `∇Φ = J (v, h)ᵀ − (𝒮, 𝒯)ᵀ` per pixel.
pub fn grad_phi(x: &EstimatePair, data: &RegressionData, sys: &RegressionSystem) -> Result<EstimatePair> {
    check_stats(x, data)?;
    let (rows, cols) = x.dims();
    let (gv, gh): (Vec<f64>, Vec<f64>) = x
        .v
        .as_slice()
        .iter()
        .zip(x.h.as_slice())
        .zip(data.s.as_slice().iter().zip(data.t.as_slice()))
        .map(|((&v, &h), (&s, &t))| {
            let (a, b) = sys.apply(v, h);
            (a - s, b - t)
        })
        .unzip();
    Ok(EstimatePair {
        v: ScalarField::from_raw(rows, cols, gv),
        h: ScalarField::from_raw(rows, cols, gh),
    })
}

/// `prox_{δΦ}(v, h)`: per pixel solve `(I + δJ)(p, q)ᵀ = (v + δ𝒮, h + δ𝒯)ᵀ`.
pub fn prox_phi(
    x: &EstimatePair,
    delta: f64,
    data: &RegressionData,
    sys: &RegressionSystem,
) -> Result<EstimatePair> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Parameter(format!("prox step must be positive, got {delta}")));
    }
    check_stats(x, data)?;
    let (rows, cols) = x.dims();
    let n = rows * cols;
    let flat = x.to_flat();
    let mut out = vec![0.0; 2 * n];
    prox_phi_raw(&flat, delta, data, sys, &mut out);
    Ok(EstimatePair::from_flat(rows, cols, &out))
}

pub(crate) fn prox_phi_raw(
    x: &[f64],
    delta: f64,
    data: &RegressionData,
    sys: &RegressionSystem,
    out: &mut [f64],
) {
    let n = data.s.len();
    let a00 = 1.0 + delta * sys.r0;
    let a11 = 1.0 + delta * sys.r2;
    let a01 = delta * sys.r1;
    let det = a00 * a11 - a01 * a01;
    let (s, t) = (data.s.as_slice(), data.t.as_slice());
    let (out_v, out_h) = out.split_at_mut(n);
    for i in 0..n {
        let bv = x[i] + delta * s[i];
        let bh = x[n + i] + delta * t[i];
        out_v[i] = (a11 * bv - a01 * bh) / det;
        out_h[i] = (a00 * bh - a01 * bv) / det;
    }
}

/// `Φ*(y) = ½⟨y, J⁻¹y⟩ + ⟨(𝒮,𝒯), J⁻¹y⟩ + 𝒞`, summed over pixels.
pub fn phi_conj(y: &EstimatePair, data: &RegressionData, sys: &RegressionSystem) -> Result<f64> {
    check_stats(y, data)?;
    let n = y.v.len();
    let flat = y.to_flat();
    Ok(phi_conj_raw(&flat[..n], &flat[n..], data, sys))
}

pub(crate) fn phi_conj_raw(yv: &[f64], yh: &[f64], data: &RegressionData, sys: &RegressionSystem) -> f64 {
    // ½ (y + b)ᵀ J⁻¹ (y + b) − ½ Σ log²: algebraically identical to the
    // three-term form and better conditioned.
    let mut acc = 0.0;
    for (((&a, &b), &s), &t) in yv.iter().zip(yh).zip(data.s.as_slice()).zip(data.t.as_slice()) {
        let (pa, pb) = (a + s, b + t);
        let (wa, wb) = sys.solve(pa, pb);
        acc += 0.5 * (pa * wa + pb * wb);
    }
    acc - 0.5 * data.log_sq_sum
}

/// Constant `𝒞` of `Φ*` (its value at zero).
pub fn phi_conj_constant(data: &RegressionData, sys: &RegressionSystem) -> f64 {
    let mut acc = 0.0;
    for (&s, &t) in data.s.as_slice().iter().zip(data.t.as_slice()) {
        let (ws, wt) = sys.solve(s, t);
        acc += 0.5 * (s * ws + t * wt);
    }
    acc - 0.5 * data.log_sq_sum
}

/// Slope and intercept of the least-squares line `y_j ≈ intercept + slope·j`
/// over the system's octaves.
pub fn regress_line(values: &[f64], sys: &RegressionSystem) -> Result<(f64, f64)> {
    let expected = (sys.j2 - sys.j1 + 1) as usize;
    if values.len() != expected {
        return Err(Error::Config(format!(
            "expected {expected} per-octave values, got {}",
            values.len()
        )));
    }
    let (mut s, mut t) = (0.0, 0.0);
    for (j, &y) in sys.octaves().zip(values) {
        s += y;
        t += j as f64 * y;
    }
    let (intercept, slope) = sys.solve(s, t);
    Ok((slope, intercept))
}
