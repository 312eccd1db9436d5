//! Two-region segmentation of a regularity map, a-posteriori global
//! regularity per region and scoring against ground truth.

use crate::error::{Error, Result};
use crate::fidelity::{regress_line, RegressionSystem};
use crate::gridops::{Mask, ScalarField};
use crate::wavelet::LeaderPyramid;

/// Iteration cap of the thresholding loop.
pub const TROF_MAX_ITER: usize = 1000;

/// Output of [`trof_threshold`], optionally enriched by [`SegmentationMask::with_global_h`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    /// 0 for `{h ≤ T}`, 1 otherwise.
    pub labels: Mask,
    /// Terminal threshold `T*`.
    pub threshold: f64,
    pub threshold_history: Vec<f64>,
    /// Set when an iteration emptied a region and the previous partition was kept.
    pub degenerate_step: bool,
    /// `(Ĥ₀, Ĥ₁)` once computed.
    pub h_global: Option<(f64, f64)>,
}

impl SegmentationMask {
    pub fn delta_h(&self) -> Option<f64> {
        self.h_global.map(|(h0, h1)| h1 - h0)
    }

    pub fn with_global_h(
        mut self,
        pyr: &LeaderPyramid,
        sys: &RegressionSystem,
        averaging: Averaging,
    ) -> Result<Self> {
        self.h_global = Some(global_h(pyr, &self.labels, sys, averaging)?);
        Ok(self)
    }
}

fn region_means(h: &[f64], labels: &[u8]) -> (Option<f64>, Option<f64>) {
    let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &l) in h.iter().zip(labels) {
        if l == 0 {
            s0 += v;
            n0 += 1;
        } else {
            s1 += v;
            n1 += 1;
        }
    }
    (
        (n0 > 0).then(|| s0 / n0 as f64),
        (n1 > 0).then(|| s1 / n1 as f64),
    )
}

fn split(h: &[f64], t: f64) -> Vec<u8> {
    h.iter().map(|&v| u8::from(v > t)).collect()
}

/// Iterative midpoint thresholding: start from `T = (min + max)/2`, then
/// `T = (m₀ + m₁)/2` with `m_i` the region means, until the labels stop
/// changing.
pub fn trof_threshold(h: &ScalarField) -> Result<SegmentationMask> {
    let (lo, hi) = (h.min(), h.max());
    if !(hi > lo) {
        return Err(Error::Degenerate(format!(
            "constant map ({lo}) admits no two-region split"
        )));
    }
    let data = h.as_slice();
    let mut t = 0.5 * (lo + hi);
    let mut history = vec![t];
    let mut labels = split(data, t);
    let mut degenerate_step = false;
    for _ in 0..TROF_MAX_ITER {
        let (m0, m1) = match region_means(data, &labels) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                degenerate_step = true;
                break;
            }
        };
        let t_new = 0.5 * (m0 + m1);
        let next = split(data, t_new);
        if next.iter().all(|&l| l == 0) || next.iter().all(|&l| l == 1) {
            log::warn!("thresholding step emptied a region; keeping the previous partition");
            degenerate_step = true;
            break;
        }
        history.push(t_new);
        let done = next == labels;
        labels = next;
        t = t_new;
        if done {
            break;
        }
    }
    Ok(SegmentationMask {
        labels: Mask::new(h.rows(), h.cols(), labels)?,
        threshold: t,
        threshold_history: history,
        degenerate_step,
        h_global: None,
    })
}

/// How leaders are pooled over a region before the log-log regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// `log₂(mean ℒ_j)`.
    #[default]
    Linear,
    /// `mean log₂ ℒ_j`.
    Log,
}

/// Global regularity of each region: slope of the per-octave pooled leaders
/// against `j`.
pub fn global_h(
    pyr: &LeaderPyramid,
    labels: &Mask,
    sys: &RegressionSystem,
    averaging: Averaging,
) -> Result<(f64, f64)> {
    if pyr.j1() != sys.j1 || pyr.j2() != sys.j2 {
        return Err(Error::Config(format!(
            "pyramid octaves {}..={} do not match regression range {}..={}",
            pyr.j1(),
            pyr.j2(),
            sys.j1,
            sys.j2
        )));
    }
    if labels.dims() != pyr.dims() {
        return Err(Error::DimensionMismatch {
            expected: pyr.dims(),
            got: labels.dims(),
        });
    }
    let ones = labels.count_ones();
    if ones == 0 || ones == labels.as_slice().len() {
        return Err(Error::Degenerate("global estimate needs two non-empty regions".into()));
    }
    let mut curves = [Vec::new(), Vec::new()];
    for j in sys.octaves() {
        let field = pyr
            .field(j)
            .ok_or_else(|| Error::Config(format!("pyramid lacks octave {j}")))?;
        let mut sum = [0.0f64; 2];
        let mut count = [0usize; 2];
        // pyramid fields are log₂ leaders when in the log domain
        let to_linear = pyr.is_log_domain();
        for (&l, &m) in field.as_slice().iter().zip(labels.as_slice()) {
            let k = m as usize;
            let value = match (averaging, to_linear) {
                (Averaging::Linear, true) => l.exp2(),
                (Averaging::Linear, false) => l,
                (Averaging::Log, true) => l,
                (Averaging::Log, false) => l.log2(),
            };
            sum[k] += value;
            count[k] += 1;
        }
        for k in 0..2 {
            let mean = sum[k] / count[k] as f64;
            curves[k].push(match averaging {
                Averaging::Linear => mean.log2(),
                Averaging::Log => mean,
            });
        }
    }
    let h0 = regress_line(&curves[0], sys)?.0;
    let h1 = regress_line(&curves[1], sys)?.0;
    Ok((h0, h1))
}

/// Global regularity over the whole image.
pub fn global_h_homogeneous(pyr: &LeaderPyramid, sys: &RegressionSystem, averaging: Averaging) -> Result<f64> {
    let mut curve = Vec::new();
    for j in sys.octaves() {
        let field = pyr
            .field(j)
            .ok_or_else(|| Error::Config(format!("pyramid lacks octave {j}")))?;
        let vals = field.as_slice();
        let sum: f64 = match (averaging, pyr.is_log_domain()) {
            (Averaging::Linear, true) => vals.iter().map(|l| l.exp2()).sum(),
            (Averaging::Log, false) => vals.iter().map(|l| l.log2()).sum(),
            _ => vals.iter().sum(),
        };
        let mean = sum / vals.len() as f64;
        curve.push(match averaging {
            Averaging::Linear => mean.log2(),
            Averaging::Log => mean,
        });
    }
    Ok(regress_line(&curve, sys)?.0)
}

/// Fraction of correctly labelled pixels, maximised over the label swap.
pub fn classification_score(mask: &Mask, truth: &Mask) -> Result<f64> {
    if mask.dims() != truth.dims() {
        return Err(Error::DimensionMismatch {
            expected: truth.dims(),
            got: mask.dims(),
        });
    }
    let n = mask.as_slice().len();
    let agree = mask
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .filter(|(a, b)| a == b)
        .count();
    let f = agree as f64 / n as f64;
    Ok(f.max(1.0 - f))
}
