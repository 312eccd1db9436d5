//! Fractional Brownian field synthesis, the normalised increment field `Y`
//! and piecewise assembly under a region map.
//!
//! The field is sampled from its spectral representation on a `2N × 2N`
//! torus. The continuum spectral density is folded onto the lattice
//! (`Σ_m S(f + 2πm)` over a finite window plus an analytic tail), which
//! makes the sampled covariance close to the continuum one even at lag 1.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::gridops::{Mask, ScalarField};

/// Normalising constant of the harmonizable representation in dimension `d`.
pub fn c_of_h(h: f64, d: u32) -> Result<f64> {
    check_h(h)?;
    if d == 0 {
        return Err(Error::Parameter("dimension must be positive".into()));
    }
    let d = d as f64;
    Ok(PI.sqrt() * gamma(h + 0.5)
        / (2f64.powf(d / 2.0) * h * gamma(2.0 * h) * (PI * h).sin() * gamma(h + d / 2.0)))
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("H must lie in (0, 1), got {h}")))
    }
}

/// Whether `Y` is rescaled to the exact target moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Calibration {
    /// Centre and rescale each field so its population standard deviation is `Σ`.
    #[default]
    Exact,
    /// Keep the raw spectral synthesis output.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractalParams {
    pub h: f64,
    /// Target standard deviation, `E[Y²] = Σ²`.
    pub sigma: f64,
    pub seed: u64,
    /// Grid side.
    pub n: usize,
    /// Increment lag in pixels.
    pub delta: usize,
}

impl FractalParams {
    pub fn new(h: f64, sigma: f64, seed: u64, n: usize) -> Result<Self> {
        let p = Self {
            h,
            sigma,
            seed,
            n,
            delta: 1,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters from a variance rather than a standard deviation.
    pub fn from_variance(h: f64, variance: f64, seed: u64, n: usize) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::Parameter(format!("variance must be positive, got {variance}")));
        }
        Self::new(h, variance.sqrt(), seed, n)
    }

    pub fn validate(&self) -> Result<()> {
        check_h(self.h)?;
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Parameter(format!("Sigma must be positive, got {}", self.sigma)));
        }
        if self.n < 64 || !self.n.is_power_of_two() {
            return Err(Error::Parameter(format!(
                "grid side must be a power of two >= 64, got {}",
                self.n
            )));
        }
        if self.delta == 0 || self.delta > self.n {
            return Err(Error::Parameter(format!("lag must be in 1..=N, got {}", self.delta)));
        }
        Ok(())
    }

    /// `Σ / (2 δ^H √(1 − 2^{H−2}))`.
    pub fn y_prefactor(&self) -> f64 {
        self.sigma / (2.0 * (self.delta as f64).powf(self.h) * (1.0 - 2f64.powf(self.h - 2.0)).sqrt())
    }
}

/// Seed of region `index` under master seed `master`: the first word of the
/// ChaCha8 stream `index` keyed by `master`. Streams are independent, so
/// adding regions never changes the seeds of existing ones.
pub fn region_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Lattice cells folded explicitly on each side of the base cell.
const ALIAS_WINDOW: i64 = 3;
/// Cells within this index distance of DC are integrated on a subgrid.
const NEAR_DC: i64 = 4;
const SUBDIV: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum KernelKind {
    Fbf,
    Increment(usize),
}

type KernelKey = (usize, u64, KernelKind);

fn kernel_cache() -> &'static Mutex<HashMap<KernelKey, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<KernelKey, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `∫₀^{π/4} cos^e θ dθ` by the midpoint rule.
fn cos_power_integral(e: f64) -> f64 {
    let n = 512;
    let w = (PI / 4.0) / n as f64;
    (0..n).map(|i| ((i as f64 + 0.5) * w).cos().powf(e)).sum::<f64>() * w
}

/// Unit-scale fBf spectral density folded onto `[−π, π)²`.
struct FoldedDensity {
    h: f64,
    norm: f64,
    tail: f64,
}

impl FoldedDensity {
    fn new(h: f64) -> Result<Self> {
        let norm = 1.0 / (2.0 * PI * c_of_h(h, 2)?);
        // cells outside the window, as an integral over the complement of
        // the square of half-side (2K+1)π
        let a = (2 * ALIAS_WINDOW + 1) as f64 * PI;
        let tail = norm * 8.0 * a.powf(-2.0 * h) / (2.0 * h) * cos_power_integral(2.0 * h) / (4.0 * PI * PI);
        Ok(Self { h, norm, tail })
    }

    fn at(&self, fx: f64, fy: f64) -> f64 {
        let e = -(self.h + 1.0);
        let mut s = 0.0;
        for my in -ALIAS_WINDOW..=ALIAS_WINDOW {
            let gy = fy + 2.0 * PI * my as f64;
            for mx in -ALIAS_WINDOW..=ALIAS_WINDOW {
                let gx = fx + 2.0 * PI * mx as f64;
                s += (gx * gx + gy * gy).powf(e);
            }
        }
        self.norm * s + self.tail
    }
}

fn signed_freq(k: usize, m: usize) -> (i64, f64) {
    let k = k as i64;
    let k = if k >= (m as i64) / 2 { k - m as i64 } else { k };
    (k, 2.0 * PI * k as f64 / m as f64)
}

/// Mean of `f` over the cell of width `w` centred at `(fx, fy)`.
fn cell_mean(fx: f64, fy: f64, w: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let step = w / SUBDIV as f64;
    let mut s = 0.0;
    for i in 0..SUBDIV {
        let y = fy - w / 2.0 + (i as f64 + 0.5) * step;
        for j in 0..SUBDIV {
            s += f(fx - w / 2.0 + (j as f64 + 0.5) * step, y);
        }
    }
    s / (SUBDIV * SUBDIV) as f64
}

/// Spectral amplitudes `A_k` on an `m × m` torus, row-major over frequency
/// indices in FFT order, with `A_k² = 2 ∫_cell S`.
///
/// For [`KernelKind::Fbf`] `S` is the unit-scale fBf density (midpoint
/// rule, DC bin zero). For [`KernelKind::Increment`] `S` is the density of
/// the unit-variance increment field, `|e^{iδf₁} + e^{iδf₂} − 2|²` times the
/// fBf density times the squared prefactor; it is integrable at DC, so cells
/// near DC are integrated on a subgrid and the DC cell gets the analytic
/// integral of the leading `|f|^{−2H}` term plus the remainder on a subgrid.
fn spectral_kernel(m: usize, h: f64, kind: KernelKind) -> Result<Arc<Vec<f64>>> {
    let key = (m, h.to_bits(), kind);
    if let Some(k) = kernel_cache().lock().unwrap().get(&key) {
        return Ok(Arc::clone(k));
    }
    let dens = FoldedDensity::new(h)?;
    let w = 2.0 * PI / m as f64;
    let cell = w * w;
    let mut amp = vec![0.0; m * m];
    match kind {
        KernelKind::Fbf => {
            for r in 0..m {
                let (_, fy) = signed_freq(r, m);
                for c in 0..m {
                    if r == 0 && c == 0 {
                        continue;
                    }
                    let (_, fx) = signed_freq(c, m);
                    amp[r * m + c] = (2.0 * dens.at(fx, fy) * cell).sqrt();
                }
            }
        }
        KernelKind::Increment(delta) => {
            let d = delta as f64;
            let pref2 = 1.0 / (4.0 * d.powf(2.0 * h) * (1.0 - 2f64.powf(h - 2.0)));
            let sy = |fx: f64, fy: f64| {
                let re = (d * fx).cos() + (d * fy).cos() - 2.0;
                let im = (d * fx).sin() + (d * fy).sin();
                pref2 * (re * re + im * im) * dens.at(fx, fy)
            };
            // leading term near DC: pref² δ² (f₁+f₂)² |f|^{−2H−2} / (2πC)
            let lead = |fx: f64, fy: f64| {
                let s = fx + fy;
                pref2 * d * d * s * s * dens.norm * (fx * fx + fy * fy).powf(-h - 1.0)
            };
            let eps = w / 2.0;
            let lead_dc = pref2 * d * d * dens.norm * eps.powf(2.0 - 2.0 * h) / (2.0 - 2.0 * h)
                * 8.0
                * cos_power_integral(2.0 * h - 2.0);
            for r in 0..m {
                let (kr, fy) = signed_freq(r, m);
                for c in 0..m {
                    let (kc, fx) = signed_freq(c, m);
                    let integral = if kr == 0 && kc == 0 {
                        lead_dc + cell * cell_mean(0.0, 0.0, w, |x, y| sy(x, y) - lead(x, y))
                    } else if kr.abs() <= NEAR_DC && kc.abs() <= NEAR_DC {
                        cell * cell_mean(fx, fy, w, sy)
                    } else {
                        cell * sy(fx, fy)
                    };
                    amp[r * m + c] = (2.0 * integral.max(0.0)).sqrt();
                }
            }
        }
    }
    let amp = Arc::new(amp);
    let mut cache = kernel_cache().lock().unwrap();
    if cache.len() >= 8 {
        cache.clear();
    }
    cache.insert(key, Arc::clone(&amp));
    Ok(amp)
}

fn fft2_inplace(buf: &mut [Complex<f64>], m: usize) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(buf);
    let mut t = vec![Complex::new(0.0, 0.0); m * m];
    for r in 0..m {
        for c in 0..m {
            t[c * m + r] = buf[r * m + c];
        }
    }
    fft.process(&mut t);
    for r in 0..m {
        for c in 0..m {
            buf[r * m + c] = t[c * m + r];
        }
    }
}

/// Real part of the FFT of `A_k W_k` with `W_k` standard complex normal.
fn spectral_field(amp: &[f64], m: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5f64.sqrt();
    let mut buf: Vec<Complex<f64>> = amp
        .iter()
        .map(|&a| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex::new(a * half * re, a * half * im)
        })
        .collect();
    fft2_inplace(&mut buf, m);
    buf.iter().map(|z| z.re).collect()
}

/// fBf cropped to `N × N`, scaled so that `E[(B_{n+Δ} − B_n)²] = Σ²‖Δ‖^{2H}`.
pub fn synth_fbf(params: &FractalParams) -> Result<ScalarField> {
    params.validate()?;
    let n = params.n;
    let m = 2 * n;
    let amp = spectral_kernel(m, params.h, KernelKind::Fbf)?;
    let full = spectral_field(&amp, m, params.seed);
    let (s, origin) = (params.sigma, full[0]);
    Ok(ScalarField::from_fn(n, n, |r, c| s * (full[r * m + c] - origin)))
}

/// Normalised sum of horizontal and vertical increments at lag `δ`,
/// `Σ/(2δ^H√(1−2^{H−2})) (B_{n+δe₁} − B_n + B_{n+δe₂} − B_n)`.
///
/// The increment filter is applied in the frequency domain, so `Y` is drawn
/// from its own (integrable) spectral density rather than by differencing
/// a synthesized `B`.
pub fn synth_y(params: &FractalParams, calibration: Calibration) -> Result<ScalarField> {
    params.validate()?;
    let n = params.n;
    let m = 2 * n;
    let amp = spectral_kernel(m, params.h, KernelKind::Increment(params.delta))?;
    let full = spectral_field(&amp, m, params.seed);
    let s = params.sigma;
    let mut y = ScalarField::from_fn(n, n, |r, c| s * full[r * m + c]);
    if calibration == Calibration::Exact {
        let mean = y.mean();
        let var = y.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
        let scale = s / var.sqrt();
        y = y.map(|v| (v - mean) * scale);
    }
    Ok(y)
}

/// Closed-form `E[Y_{n+Δ} Y_n]`.
pub fn y_covariance(h: f64, sigma: f64, delta: f64, lag: (f64, f64)) -> f64 {
    let p = |x: f64, y: f64| (x * x + y * y).powf(h);
    let (dx, dy) = lag;
    let bracket = p(dx + delta, dy) + p(dx - delta, dy) + p(dx, dy + delta) + p(dx, dy - delta)
        - 3.0 * p(dx, dy)
        - 0.5 * p(dx + delta, dy - delta)
        - 0.5 * p(dx - delta, dy + delta);
    sigma * sigma * delta.powf(-2.0 * h) / (4.0 - 2f64.powf(h)) * bracket
}

/// Region map plus per-region parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSpec {
    pub n: usize,
    /// Region index per pixel, row-major `n × n`.
    pub labels: Vec<usize>,
    pub regions: Vec<FractalParams>,
}

impl PiecewiseSpec {
    pub fn new(n: usize, labels: Vec<usize>, regions: Vec<FractalParams>) -> Result<Self> {
        let spec = Self { n, labels, regions };
        spec.validate()?;
        Ok(spec)
    }

    /// Two regions from a binary mask, seeds derived from `master`.
    pub fn two_region(mask: &Mask, background: (f64, f64), foreground: (f64, f64), master: u64) -> Result<Self> {
        if mask.rows() != mask.cols() {
            return Err(Error::Config("region mask must be square".into()));
        }
        let n = mask.rows();
        let regions = vec![
            FractalParams::new(background.0, background.1, region_seed(master, 0), n)?,
            FractalParams::new(foreground.0, foreground.1, region_seed(master, 1), n)?,
        ];
        Self::new(n, mask.as_slice().iter().map(|&l| l as usize).collect(), regions)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.n * self.n {
            return Err(Error::Config(format!(
                "region map has {} entries, expected {}",
                self.labels.len(),
                self.n * self.n
            )));
        }
        if self.regions.is_empty() {
            return Err(Error::Config("no regions given".into()));
        }
        for p in &self.regions {
            p.validate()?;
            if p.n != self.n {
                return Err(Error::Config(format!(
                    "region grid side {} differs from map side {}",
                    p.n, self.n
                )));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.regions.len()) {
            return Err(Error::Config(format!(
                "region index {bad} has no parameters ({} regions)",
                self.regions.len()
            )));
        }
        Ok(())
    }
}

/// One independent `Y` per region, copied through the region map.
pub fn synth_piecewise(spec: &PiecewiseSpec, calibration: Calibration) -> Result<ScalarField> {
    spec.validate()?;
    let fields = spec
        .regions
        .iter()
        .map(|p| synth_y(p, calibration))
        .collect::<Result<Vec<_>>>()?;
    let n = spec.n;
    let mut out = vec![0.0; n * n];
    for (i, (o, &l)) in out.iter_mut().zip(&spec.labels).enumerate() {
        *o = fields[l].as_slice()[i];
    }
    Ok(ScalarField::from_raw(n, n, out))
}

/// Default semi-axes as fractions of `N` (horizontal, vertical).
pub const ELLIPSE_SEMI_AXES: (f64, f64) = (0.30, 0.22);

/// Pixel `(r, c)` (centre at `(c + ½, r + ½)`) is 1 inside the ellipse.
/// `center` and `semi_axes` are `(horizontal, vertical)` in pixels.
pub fn ellipse_mask(n: usize, center: (f64, f64), semi_axes: (f64, f64)) -> Result<Mask> {
    let (cx, cy) = center;
    let (a, b) = semi_axes;
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::Parameter("semi-axes must be non-negative".into()));
    }
    let nf = n as f64;
    if cx - a < 0.0 || cx + a > nf || cy - b < 0.0 || cy + b > nf {
        return Err(Error::Config(format!(
            "ellipse centred at ({cx}, {cy}) with semi-axes ({a}, {b}) exceeds the {n}x{n} grid"
        )));
    }
    if a == 0.0 || b == 0.0 {
        return Ok(Mask::zeros(n, n));
    }
    Ok(Mask::from_fn(n, n, |r, c| {
        let x = (c as f64 + 0.5 - cx) / a;
        let y = (r as f64 + 0.5 - cy) / b;
        x * x + y * y <= 1.0
    }))
}

/// Centred ellipse with the default semi-axes.
pub fn default_ellipse(n: usize) -> Result<Mask> {
    let nf = n as f64;
    ellipse_mask(
        n,
        (nf / 2.0, nf / 2.0),
        (ELLIPSE_SEMI_AXES.0 * nf, ELLIPSE_SEMI_AXES.1 * nf),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_of_h_values() {
        assert!((c_of_h(0.5, 2).unwrap() - 2.0).abs() < 1e-12);
        for k in 1..10 {
            let c = c_of_h(k as f64 / 10.0, 2).unwrap();
            assert!(c.is_finite() && c > 0.0);
        }
        assert!((c_of_h(0.5 + 1e-6, 2).unwrap() - 2.0).abs() < 1e-4);
        assert!(c_of_h(0.0, 2).is_err() && c_of_h(1.0, 2).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(FractalParams::new(0.5, 1.0, 0, 64).is_ok());
        assert!(FractalParams::new(1.2, 1.0, 0, 64).is_err());
        assert!(FractalParams::new(0.5, 0.0, 0, 64).is_err());
        assert!(FractalParams::new(0.5, 1.0, 0, 96).is_err());
        assert!(FractalParams::new(0.5, 1.0, 0, 32).is_err());
        let p = FractalParams::new(0.5, 1.0, 0, 64).unwrap();
        let pref = p.y_prefactor();
        assert!(pref.is_finite() && pref > 0.0);
    }

    #[test]
    fn determinism() {
        let p = FractalParams::new(0.6, 0.8, 42, 64).unwrap();
        assert_eq!(synth_fbf(&p).unwrap(), synth_fbf(&p).unwrap());
        assert_eq!(synth_y(&p, Calibration::Raw).unwrap(), synth_y(&p, Calibration::Raw).unwrap());
        let q = FractalParams { seed: 43, ..p };
        assert_ne!(synth_y(&p, Calibration::Raw).unwrap(), synth_y(&q, Calibration::Raw).unwrap());
    }

    #[test]
    fn fbf_starts_at_zero() {
        let p = FractalParams::new(0.7, 1.0, 1, 64).unwrap();
        assert_eq!(synth_fbf(&p).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn exact_calibration_hits_sigma() {
        let p = FractalParams::from_variance(0.5, 0.6, 3, 64).unwrap();
        let y = synth_y(&p, Calibration::Exact).unwrap();
        let var = y.as_slice().iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!((var - 0.6).abs() < 1e-12);
        assert!(y.mean().abs() < 1e-12);
    }

    #[test]
    fn covariance_formula_at_zero_lag_is_variance() {
        for h in [0.2, 0.5, 0.8] {
            assert!((y_covariance(h, 0.7, 1.0, (0.0, 0.0)) - 0.49).abs() < 1e-12);
        }
        // H = 1/2: lag (1,0)
        let c = y_covariance(0.5, 1.0, 1.0, (1.0, 0.0));
        assert!((c - 0.0814).abs() < 1e-3, "{c}");
    }

    #[test]
    fn region_seeds_are_stable() {
        let a = region_seed(7, 0);
        let b = region_seed(7, 1);
        assert_ne!(a, b);
        assert_eq!(region_seed(7, 0), a);
        assert_ne!(region_seed(8, 0), a);
    }

    #[test]
    fn piecewise_identical_regions_match_homogeneous() {
        let mask = default_ellipse(64).unwrap();
        let p = FractalParams::new(0.5, 0.8, 11, 64).unwrap();
        let spec = PiecewiseSpec::new(64, mask.as_slice().iter().map(|&l| l as usize).collect(), vec![p, p]).unwrap();
        assert_eq!(
            synth_piecewise(&spec, Calibration::Exact).unwrap(),
            synth_y(&p, Calibration::Exact).unwrap()
        );
    }

    #[test]
    fn piecewise_writes_each_pixel_from_its_region() {
        let mask = default_ellipse(64).unwrap();
        let spec = PiecewiseSpec::two_region(&mask, (0.5, 0.7), (0.8, 0.9), 5).unwrap();
        let x = synth_piecewise(&spec, Calibration::Raw).unwrap();
        let y0 = synth_y(&spec.regions[0], Calibration::Raw).unwrap();
        let y1 = synth_y(&spec.regions[1], Calibration::Raw).unwrap();
        for i in 0..64 * 64 {
            let want = if mask.as_slice()[i] == 1 { y1.as_slice()[i] } else { y0.as_slice()[i] };
            assert_eq!(x.as_slice()[i], want);
        }
        let bad = PiecewiseSpec::new(64, vec![2; 64 * 64], spec.regions.clone());
        assert!(bad.is_err());
    }

    #[test]
    fn ellipse_examples() {
        assert_eq!(ellipse_mask(64, (32.0, 32.0), (0.0, 0.0)).unwrap().count_ones(), 0);
        let n = 512;
        let r = n as f64 / 2.0 - 1.0;
        let m = ellipse_mask(n, (256.0, 256.0), (r, r)).unwrap();
        let expected = PI * r * r / (n * n) as f64;
        assert!((m.fraction() - expected).abs() < 0.01);
        assert!((m.fraction() - PI / 4.0).abs() < 0.01);
        let e = default_ellipse(128).unwrap();
        for row in 0..128 {
            for c in 0..128 {
                assert_eq!(e.get(row, c), e.get(row, 127 - c));
            }
        }
        assert!(ellipse_mask(64, (10.0, 32.0), (20.0, 5.0)).is_err());
    }
}

#[cfg(test)]
mod kernel_checks {
    use super::*;

    /// Covariance of the raw increment field at `lag` implied by the kernel.
    pub(super) fn kernel_covariance(m: usize, h: f64, lag: (i64, i64)) -> f64 {
        let amp = spectral_kernel(m, h, KernelKind::Increment(1)).unwrap();
        let mut s = 0.0;
        for r in 0..m {
            let (_, fy) = signed_freq(r, m);
            for c in 0..m {
                let (_, fx) = signed_freq(c, m);
                let a = amp[r * m + c];
                s += 0.5 * a * a * (fx * lag.0 as f64 + fy * lag.1 as f64).cos();
            }
        }
        s
    }

    #[test]
    fn kernel_reproduces_closed_form_covariance() {
        for h in [0.3, 0.5, 0.8] {
            for lag in [(0, 0), (1, 0), (0, 1), (2, 2), (5, 0), (3, -2)] {
                let k = kernel_covariance(256, h, lag);
                let f = y_covariance(h, 1.0, 1.0, (lag.0 as f64, lag.1 as f64));
                assert!((k - f).abs() < 2e-3, "H={h} lag {lag:?}: {k} vs {f}");
            }
        }
    }
}
