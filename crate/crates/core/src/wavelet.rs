//! Separable orthonormal 2D DWT with periodic extension, and wavelet
//! leaders resampled to the pixel grid.
//!
//! Leaders are built from the moduli of the orthonormal coefficients. For a
//! 2D transform the orthonormal coefficient equals `2^{j}` times the
//! `L¹`-normalised one, so `ℒ_{j,k} = sup 2^{j'} |d¹_{j',k'}|` over the
//! `3×3` block neighbourhood and all finer octaves `j' ≤ j`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gridops::ScalarField;

/// Leaders below this floor are clamped before taking `log₂`.
pub const LEADER_FLOOR: f64 = 1e-300;

/// Wavelet family order and the octave range used for estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaveletConfig {
    /// Number of vanishing moments of the Daubechies filter (1, 2 or 3).
    pub vanishing_moments: usize,
    pub j1: u32,
    pub j2: u32,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self {
            vanishing_moments: 3,
            j1: 2,
            j2: 5,
        }
    }
}

impl WaveletConfig {
    pub fn new(vanishing_moments: usize, j1: u32, j2: u32) -> Result<Self> {
        let cfg = Self {
            vanishing_moments,
            j1,
            j2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.j1 < 1 || self.j1 >= self.j2 {
            return Err(Error::Config(format!(
                "octave range must satisfy 1 <= j1 < j2, got ({}, {})",
                self.j1, self.j2
            )));
        }
        if self.j2 > 30 {
            return Err(Error::Config(format!("j2 = {} is unreasonably large", self.j2)));
        }
        lowpass_filter(self.vanishing_moments)?;
        Ok(())
    }

    pub fn octaves(&self) -> Vec<u32> {
        (self.j1..=self.j2).collect()
    }

    /// Checks that a `rows × cols` image supports `j2` decomposition levels.
    pub fn check_dims(&self, rows: usize, cols: usize) -> Result<()> {
        let block = 1usize << self.j2;
        if !rows.is_multiple_of(block) || !cols.is_multiple_of(block) {
            return Err(Error::Config(format!(
                "image {rows}x{cols} is not divisible by 2^{} = {block}",
                self.j2
            )));
        }
        Ok(())
    }
}

/// Least-asymmetric Daubechies lowpass analysis filter (these coincide with
/// the classical Daubechies filters for up to three vanishing moments).
pub fn lowpass_filter(vanishing_moments: usize) -> Result<Vec<f64>> {
    let s2 = std::f64::consts::SQRT_2;
    match vanishing_moments {
        1 => Ok(vec![1.0 / s2, 1.0 / s2]),
        2 => {
            let s3 = 3f64.sqrt();
            let d = 4.0 * s2;
            Ok(vec![(1.0 - s3) / d, (3.0 - s3) / d, (3.0 + s3) / d, (1.0 + s3) / d])
        }
        3 => {
            let a = 10f64.sqrt();
            let b = (5.0 + 2.0 * a).sqrt();
            let d = 16.0 * s2;
            Ok(vec![
                (1.0 + a - b) / d,
                (5.0 + a - 3.0 * b) / d,
                (10.0 - 2.0 * a - 2.0 * b) / d,
                (10.0 - 2.0 * a + 2.0 * b) / d,
                (5.0 + a + 3.0 * b) / d,
                (1.0 + a + b) / d,
            ])
        }
        n => Err(Error::Config(format!(
            "unsupported number of vanishing moments {n} (supported: 1, 2, 3)"
        ))),
    }
}

fn highpass_from(lowpass: &[f64]) -> Vec<f64> {
    let l = lowpass.len();
    (0..l)
        .map(|i| if i % 2 == 0 { lowpass[l - 1 - i] } else { -lowpass[l - 1 - i] })
        .collect()
}

/// Detail coefficients at one octave: three orientations on an
/// `(rows / 2^j) × (cols / 2^j)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailLevel {
    pub octave: u32,
    pub rows: usize,
    pub cols: usize,
    /// `[low-high, high-low, high-high]` (row filter, column filter).
    pub bands: [Vec<f64>; 3],
}

/// Output of [`dwt2`]: detail subbands for octaves `1..=j2` plus the
/// remaining approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub levels: Vec<DetailLevel>,
    pub approx: Vec<f64>,
    pub approx_rows: usize,
    pub approx_cols: usize,
}

impl Decomposition {
    /// Sum of squared coefficients over every subband and the approximation.
    pub fn energy(&self) -> f64 {
        let detail: f64 = self
            .levels
            .iter()
            .flat_map(|l| l.bands.iter())
            .map(|b| b.iter().map(|v| v * v).sum::<f64>())
            .sum();
        detail + self.approx.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn level(&self, octave: u32) -> Option<&DetailLevel> {
        self.levels.iter().find(|l| l.octave == octave)
    }
}

/// Energy centroid `Σ n f[n]² / Σ f[n]²`.
fn centroid(f: &[f64]) -> f64 {
    f.iter().enumerate().map(|(i, v)| i as f64 * v * v).sum::<f64>() / f.iter().map(|v| v * v).sum::<f64>()
}

/// Circular offsets aligning the energy centroids of both filters with the
/// sample pair `(2k, 2k+1)`. The two offsets differ by an even amount, so the
/// detail shift is a cyclic relabelling and the transform stays orthonormal.
fn filter_offsets(lo: &[f64], hi: &[f64]) -> (usize, usize) {
    let lo_off = (centroid(lo) - 0.5).round().max(0.0) as usize;
    let hi_target = centroid(hi) - 0.5;
    let steps = ((lo_off as f64 - hi_target) / 2.0).round() as isize;
    let hi_off = (lo_off as isize - 2 * steps).max(lo_off as isize % 2) as usize;
    (lo_off, hi_off)
}

/// One periodic analysis step; coefficient `k` at octave `j` sits on the
/// dyadic cell `[k 2^j, (k+1) 2^j)`.
fn analyze_line(input: &[f64], lo: &[f64], hi: &[f64], approx: &mut [f64], detail: &mut [f64]) {
    let m = input.len();
    let half = m / 2;
    let (lo_off, hi_off) = filter_offsets(lo, hi);
    let wrap = m * lo.len();
    for k in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for (i, (&hl, &hh)) in lo.iter().zip(hi).enumerate() {
            a += hl * input[(2 * k + i + wrap - lo_off) % m];
            d += hh * input[(2 * k + i + wrap - hi_off) % m];
        }
        approx[k] = a;
        detail[k] = d;
    }
}

/// One separable analysis step. Returns `(LL, [LH, HL, HH])`.
fn analyze_level(
    data: &[f64],
    rows: usize,
    cols: usize,
    lo: &[f64],
    hi: &[f64],
) -> (Vec<f64>, [Vec<f64>; 3]) {
    let hc = cols / 2;
    let hr = rows / 2;
    // filter along rows
    let mut row_lo = vec![0.0; rows * hc];
    let mut row_hi = vec![0.0; rows * hc];
    for r in 0..rows {
        analyze_line(
            &data[r * cols..(r + 1) * cols],
            lo,
            hi,
            &mut row_lo[r * hc..(r + 1) * hc],
            &mut row_hi[r * hc..(r + 1) * hc],
        );
    }
    // then along columns
    let mut column = vec![0.0; rows];
    let mut a = vec![0.0; hr];
    let mut d = vec![0.0; hr];
    let mut ll = vec![0.0; hr * hc];
    let mut lh = vec![0.0; hr * hc];
    let mut hl = vec![0.0; hr * hc];
    let mut hh = vec![0.0; hr * hc];
    for (src, low_out, high_out) in [(&row_lo, &mut ll, &mut lh), (&row_hi, &mut hl, &mut hh)] {
        for c in 0..hc {
            for r in 0..rows {
                column[r] = src[r * hc + c];
            }
            analyze_line(&column, lo, hi, &mut a, &mut d);
            for r in 0..hr {
                low_out[r * hc + c] = a[r];
                high_out[r * hc + c] = d[r];
            }
        }
    }
    (ll, [lh, hl, hh])
}

/// Orthonormal separable 2D DWT down to octave `cfg.j2`, periodic borders.
pub fn dwt2(x: &ScalarField, cfg: &WaveletConfig) -> Result<Decomposition> {
    cfg.validate()?;
    let (rows, cols) = x.dims();
    cfg.check_dims(rows, cols)?;
    let lo = lowpass_filter(cfg.vanishing_moments)?;
    let hi = highpass_from(&lo);

    let mut levels = Vec::with_capacity(cfg.j2 as usize);
    let mut current = x.as_slice().to_vec();
    let (mut r, mut c) = (rows, cols);
    for octave in 1..=cfg.j2 {
        let (ll, bands) = analyze_level(&current, r, c, &lo, &hi);
        r /= 2;
        c /= 2;
        levels.push(DetailLevel {
            octave,
            rows: r,
            cols: c,
            bands,
        });
        current = ll;
    }
    Ok(Decomposition {
        levels,
        approx: current,
        approx_rows: r,
        approx_cols: c,
    })
}

/// Per-octave leaders on the pixel grid, stored either as leader values or
/// as their base-2 logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderPyramid {
    octaves: Vec<u32>,
    fields: Vec<ScalarField>,
    log_domain: bool,
    clamped: usize,
}

impl LeaderPyramid {
    /// Pyramid already in the log domain (values are `log₂ ℒ`).
    pub fn from_log_leaders(octaves: Vec<u32>, fields: Vec<ScalarField>) -> Result<Self> {
        Self::check_layout(&octaves, &fields)?;
        for f in &fields {
            if let Some(i) = f.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(Self {
            octaves,
            fields,
            log_domain: true,
            clamped: 0,
        })
    }

    /// Pyramid of linear leader values (non-negative); call [`loglead`]
    /// before estimation.
    pub fn from_leaders(octaves: Vec<u32>, fields: Vec<ScalarField>) -> Result<Self> {
        Self::check_layout(&octaves, &fields)?;
        for f in &fields {
            if let Some(i) = f.as_slice().iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "leaders must be finite and non-negative (index {i})"
                )));
            }
        }
        Ok(Self {
            octaves,
            fields,
            log_domain: false,
            clamped: 0,
        })
    }

    fn check_layout(octaves: &[u32], fields: &[ScalarField]) -> Result<()> {
        if octaves.is_empty() || octaves.len() != fields.len() {
            return Err(Error::Config(format!(
                "{} octaves but {} fields",
                octaves.len(),
                fields.len()
            )));
        }
        if octaves.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Config("octaves must be consecutive and increasing".into()));
        }
        for f in &fields[1..] {
            fields[0].ensure_same_dims(f)?;
        }
        Ok(())
    }

    pub fn octaves(&self) -> &[u32] {
        &self.octaves
    }

    pub fn j1(&self) -> u32 {
        self.octaves[0]
    }

    pub fn j2(&self) -> u32 {
        *self.octaves.last().unwrap()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.fields[0].dims()
    }

    pub fn is_log_domain(&self) -> bool {
        self.log_domain
    }

    /// Pixels whose leader hit [`LEADER_FLOOR`] (summed over octaves).
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    /// Field for octave `j`, in whichever domain the pyramid is stored.
    pub fn field(&self, octave: u32) -> Option<&ScalarField> {
        self.octaves
            .iter()
            .position(|&j| j == octave)
            .map(|i| &self.fields[i])
    }

    pub fn fields(&self) -> impl Iterator<Item = (u32, &ScalarField)> {
        self.octaves.iter().copied().zip(self.fields.iter())
    }

    /// Linear-domain leader values at octave `j` (exponentiates if needed).
    pub fn linear(&self, octave: u32) -> Option<ScalarField> {
        let f = self.field(octave)?;
        Some(if self.log_domain { f.map(f64::exp2) } else { f.clone() })
    }

    /// Same pyramid restricted to the octave range `[j1, j2]`.
    pub fn restrict(&self, j1: u32, j2: u32) -> Result<Self> {
        if j1 < self.j1() || j2 > self.j2() || j1 >= j2 {
            return Err(Error::Config(format!(
                "cannot restrict octaves {}..={} to {j1}..={j2}",
                self.j1(),
                self.j2()
            )));
        }
        let lo = (j1 - self.j1()) as usize;
        let hi = (j2 - self.j1()) as usize;
        Ok(Self {
            octaves: self.octaves[lo..=hi].to_vec(),
            fields: self.fields[lo..=hi].to_vec(),
            log_domain: self.log_domain,
            clamped: self.clamped,
        })
    }

    /// Writes one raw little-endian `f64` array per octave plus a text
    /// sidecar (`rows`, `cols`, `octave`, `clamped`, `domain`).
    pub fn dump(&self, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (j, field) in self.fields() {
            let data_path = dir.join(format!("{prefix}_j{j}.f64"));
            crate::io::write_raw_f64(&data_path, field.as_slice())?;
            let hdr_path = dir.join(format!("{prefix}_j{j}.hdr"));
            let mut hdr = fs::File::create(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
            writeln!(
                hdr,
                "rows = {}\ncols = {}\noctave = {j}\nclamped = {}\ndomain = \"{}\"",
                field.rows(),
                field.cols(),
                self.clamped,
                if self.log_domain { "log2" } else { "linear" }
            )
            .map_err(|e| Error::io(&hdr_path, e))?;
            written.push(data_path);
        }
        Ok(written)
    }
}

/// Leaders with the standard `3×3` neighbourhood, see [`leaders_with_radius`].
pub fn leaders(dec: &Decomposition, cfg: &WaveletConfig) -> Result<LeaderPyramid> {
    leaders_with_radius(dec, cfg, 1)
}

/// Wavelet leaders over the `(2·radius+1)²` block neighbourhood (periodic
/// wrap at borders), for octaves `j1..=j2`, upsampled to the pixel grid by
/// block replication and returned in the log domain.
pub fn leaders_with_radius(
    dec: &Decomposition,
    cfg: &WaveletConfig,
    radius: usize,
) -> Result<LeaderPyramid> {
    cfg.validate()?;
    if dec.levels.len() < cfg.j2 as usize {
        return Err(Error::Config(format!(
            "decomposition has {} levels, need {}",
            dec.levels.len(),
            cfg.j2
        )));
    }
    let pix_rows = dec.levels[0].rows * 2;
    let pix_cols = dec.levels[0].cols * 2;

    // running supremum over the dyadic cube and all finer octaves
    let mut cube_sup: Vec<f64> = Vec::new();
    let mut prev_cols = 0;
    let mut octaves = Vec::new();
    let mut fields = Vec::new();
    let mut clamped = 0usize;
    for level in dec.levels.iter().take(cfg.j2 as usize) {
        let (r, c) = (level.rows, level.cols);
        let mut sup = vec![0.0f64; r * c];
        for (i, s) in sup.iter_mut().enumerate() {
            *s = level.bands.iter().map(|b| b[i].abs()).fold(0.0, f64::max);
        }
        if !cube_sup.is_empty() {
            for y in 0..r {
                for x in 0..c {
                    let mut m = sup[y * c + x];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(cube_sup[(2 * y + dy) * prev_cols + 2 * x + dx]);
                        }
                    }
                    sup[y * c + x] = m;
                }
            }
        }

        if level.octave >= cfg.j1 {
            let mut lead = vec![0.0f64; r * c];
            let rad = radius as isize;
            for y in 0..r {
                for x in 0..c {
                    let mut m = 0.0f64;
                    for dy in -rad..=rad {
                        let yy = (y as isize + dy).rem_euclid(r as isize) as usize;
                        for dx in -rad..=rad {
                            let xx = (x as isize + dx).rem_euclid(c as isize) as usize;
                            m = m.max(sup[yy * c + xx]);
                        }
                    }
                    lead[y * c + x] = m;
                }
            }
            let shift = level.octave;
            let block = 1usize << (2 * shift);
            let mut out = vec![0.0; pix_rows * pix_cols];
            for (idx, v) in out.iter_mut().enumerate() {
                let pr = idx / pix_cols;
                let pc = idx % pix_cols;
                *v = lead[(pr >> shift) * c + (pc >> shift)];
            }
            let mut logged = out;
            for v in logged.iter_mut() {
                *v = if *v < LEADER_FLOOR { LEADER_FLOOR } else { *v }.log2();
            }
            clamped += lead.iter().filter(|&&v| v < LEADER_FLOOR).count() * block;
            octaves.push(level.octave);
            fields.push(ScalarField::from_raw(pix_rows, pix_cols, logged));
        }
        cube_sup = sup;
        prev_cols = c;
    }
    if clamped > 0 {
        log::warn!("{clamped} leader samples clamped to {LEADER_FLOOR:e}");
    }
    Ok(LeaderPyramid {
        octaves,
        fields,
        log_domain: true,
        clamped,
    })
}

/// Converts a pyramid to the log domain (identity when already there).
/// Leaders below [`LEADER_FLOOR`] are clamped and counted.
pub fn loglead(pyramid: &LeaderPyramid) -> LeaderPyramid {
    if pyramid.log_domain {
        return pyramid.clone();
    }
    let mut clamped = pyramid.clamped;
    let fields = pyramid
        .fields
        .iter()
        .map(|f| {
            f.map(|v| {
                if v < LEADER_FLOOR {
                    LEADER_FLOOR.log2()
                } else {
                    v.log2()
                }
            })
        })
        .collect();
    for f in &pyramid.fields {
        clamped += f.as_slice().iter().filter(|&&v| v < LEADER_FLOOR).count();
    }
    LeaderPyramid {
        octaves: pyramid.octaves.clone(),
        fields,
        log_domain: true,
        clamped,
    }
}

/// DWT followed by leaders: texture to log-leader pyramid.
pub fn analyze(x: &ScalarField, cfg: &WaveletConfig) -> Result<LeaderPyramid> {
    let dec = dwt2(x, cfg)?;
    leaders(&dec, cfg)
}
