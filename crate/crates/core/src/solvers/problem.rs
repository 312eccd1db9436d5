//! The three saddle-point problems `min_x Θ(x) + Ξ(Lx)` on flat buffers.
//!
//! Primal layout: `[h]` for ROF, `[v; h]` otherwise. Dual layout: two
//! channels for ROF, `[u (2ch); ℓ (2ch)]` for joint and coupled.

use crate::fidelity::{self, RegressionData, RegressionSystem};
use crate::gridops::{self, GRAD_NORM};

/// Which regularised problem is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProblemKind {
    Rof,
    Joint,
    Coupled,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Rof => "rof",
            ProblemKind::Joint => "joint",
            ProblemKind::Coupled => "coupled",
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Data<'a> {
    Rof(&'a [f64]),
    Fidelity(&'a RegressionData, &'a RegressionSystem),
}

#[derive(Clone, Copy)]
pub(crate) struct Instance<'a> {
    pub kind: ProblemKind,
    pub data: Data<'a>,
    pub rows: usize,
    pub cols: usize,
    pub lambda: f64,
    pub alpha: f64,
}

impl<'a> Instance<'a> {
    pub fn rof(h_lr: &'a [f64], rows: usize, cols: usize, lambda: f64) -> Self {
        Self {
            kind: ProblemKind::Rof,
            data: Data::Rof(h_lr),
            rows,
            cols,
            lambda,
            alpha: 1.0,
        }
    }

    pub fn fidelity(
        kind: ProblemKind,
        data: &'a RegressionData,
        sys: &'a RegressionSystem,
        lambda: f64,
        alpha: f64,
    ) -> Self {
        let (rows, cols) = data.dims();
        Self {
            kind,
            data: Data::Fidelity(data, sys),
            rows,
            cols,
            lambda,
            alpha,
        }
    }

    pub fn npix(&self) -> usize {
        self.rows * self.cols
    }

    pub fn primal_len(&self) -> usize {
        match self.kind {
            ProblemKind::Rof => self.npix(),
            _ => 2 * self.npix(),
        }
    }

    pub fn dual_channels(&self) -> usize {
        match self.kind {
            ProblemKind::Rof => 2,
            _ => 4,
        }
    }

    pub fn dual_len(&self) -> usize {
        self.dual_channels() * self.npix()
    }

    /// Scale applied to `D h` inside `L`.
    fn h_scale(&self) -> f64 {
        match self.kind {
            ProblemKind::Coupled => self.alpha,
            _ => 1.0,
        }
    }

    /// Strong convexity constant of `Θ`.
    pub fn mu(&self) -> f64 {
        match self.data {
            Data::Rof(_) => 1.0,
            Data::Fidelity(_, sys) => sys.mu,
        }
    }

    /// Lipschitz constant of `∇Θ*`, i.e. `1/μ` for these quadratics.
    pub fn conj_lipschitz(&self) -> f64 {
        1.0 / self.mu()
    }

    /// `‖L‖²`.
    pub fn l_norm_sq(&self) -> f64 {
        let s = self.h_scale().max(1.0);
        s * s * GRAD_NORM * GRAD_NORM
    }

    /// Primal starting point: the unregularised minimiser of `Θ`.
    pub fn start(&self) -> Vec<f64> {
        match self.data {
            Data::Rof(h) => h.to_vec(),
            Data::Fidelity(data, sys) => fidelity::linreg(data, sys).to_flat(),
        }
    }

    pub fn apply_l(&self, x: &[f64], out: &mut [f64]) {
        let n = self.npix();
        match self.kind {
            ProblemKind::Rof => gridops::grad_into(x, self.rows, self.cols, 1.0, out),
            _ => {
                let (a, b) = out.split_at_mut(2 * n);
                gridops::grad_into(&x[..n], self.rows, self.cols, 1.0, a);
                gridops::grad_into(&x[n..], self.rows, self.cols, self.h_scale(), b);
            }
        }
    }

    pub fn apply_lt(&self, y: &[f64], out: &mut [f64]) {
        let n = self.npix();
        match self.kind {
            ProblemKind::Rof => gridops::grad_adjoint_into(y, self.rows, self.cols, 1.0, out),
            _ => {
                let (a, b) = out.split_at_mut(n);
                gridops::grad_adjoint_into(&y[..2 * n], self.rows, self.cols, 1.0, a);
                gridops::grad_adjoint_into(&y[2 * n..], self.rows, self.cols, self.h_scale(), b);
            }
        }
    }

    /// Projection onto the domain of `Ξ*` (prox of `Ξ*` for any step).
    pub fn project_dual(&self, y: &mut [f64]) {
        let n = self.npix();
        match self.kind {
            ProblemKind::Rof => gridops::project_ball(y, 2, n, self.lambda),
            ProblemKind::Joint => {
                let (u, l) = y.split_at_mut(2 * n);
                gridops::project_ball(u, 2, n, self.lambda);
                gridops::project_ball(l, 2, n, self.lambda * self.alpha);
            }
            ProblemKind::Coupled => gridops::project_ball(y, 4, n, self.lambda),
        }
    }

    /// Largest ratio of a per-pixel dual norm to its admissible radius.
    pub fn dual_infeasibility(&self, y: &[f64]) -> f64 {
        let n = self.npix();
        let ratio = |data: &[f64], ch: usize, radius: f64| {
            let mut worst: f64 = 0.0;
            for i in 0..n {
                let s: f64 = (0..ch).map(|k| data[k * n + i] * data[k * n + i]).sum();
                worst = worst.max(s.sqrt() / radius);
            }
            worst
        };
        match self.kind {
            ProblemKind::Rof => ratio(y, 2, self.lambda),
            ProblemKind::Joint => ratio(&y[..2 * n], 2, self.lambda)
                .max(ratio(&y[2 * n..], 2, self.lambda * self.alpha)),
            ProblemKind::Coupled => ratio(y, 4, self.lambda),
        }
    }

    /// `Ξ(z)` for `z = Lx`.
    pub fn xi(&self, z: &[f64]) -> f64 {
        let n = self.npix();
        match self.kind {
            ProblemKind::Rof => self.lambda * gridops::norm21_raw(z, 2, n),
            ProblemKind::Joint => {
                self.lambda
                    * (gridops::norm21_raw(&z[..2 * n], 2, n)
                        + self.alpha * gridops::norm21_raw(&z[2 * n..], 2, n))
            }
            ProblemKind::Coupled => self.lambda * gridops::norm21_raw(z, 4, n),
        }
    }

    /// `Θ(x)` minus the constant `½Σ log²` (zero for ROF).
    pub fn theta_shifted(&self, x: &[f64]) -> f64 {
        match self.data {
            Data::Rof(h) => 0.5 * x.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            Data::Fidelity(data, sys) => {
                let n = self.npix();
                fidelity::phi_raw(&x[..n], &x[n..], data, sys) - 0.5 * data.log_sq_sum
            }
        }
    }

    /// `Θ*(w)` plus the same constant.
    pub fn theta_conj_shifted(&self, w: &[f64]) -> f64 {
        match self.data {
            Data::Rof(h) => w.iter().zip(h).map(|(a, b)| 0.5 * a * a + a * b).sum(),
            Data::Fidelity(data, sys) => {
                let n = self.npix();
                fidelity::phi_conj_raw(&w[..n], &w[n..], data, sys) + 0.5 * data.log_sq_sum
            }
        }
    }

    pub fn theta_constant(&self) -> f64 {
        match self.data {
            Data::Rof(_) => 0.0,
            Data::Fidelity(data, _) => 0.5 * data.log_sq_sum,
        }
    }

    /// `∇Θ*(w)`, the primal point associated with `w = −L*y`.
    pub fn conj_grad(&self, w: &[f64], out: &mut [f64]) {
        match self.data {
            Data::Rof(h) => {
                for ((o, a), b) in out.iter_mut().zip(w).zip(h) {
                    *o = a + b;
                }
            }
            Data::Fidelity(data, sys) => {
                let n = self.npix();
                let (s, t) = (data.s.as_slice(), data.t.as_slice());
                let (ov, oh) = out.split_at_mut(n);
                for i in 0..n {
                    let (a, b) = sys.solve(w[i] + s[i], w[n + i] + t[i]);
                    ov[i] = a;
                    oh[i] = b;
                }
            }
        }
    }

    /// `prox_{δΘ}(x)`.
    pub fn prox_theta(&self, x: &[f64], delta: f64, out: &mut [f64]) {
        match self.data {
            Data::Rof(h) => {
                let k = 1.0 / (1.0 + delta);
                for ((o, a), b) in out.iter_mut().zip(x).zip(h) {
                    *o = (a + delta * b) * k;
                }
            }
            Data::Fidelity(data, sys) => fidelity::prox_phi_raw(x, delta, data, sys, out),
        }
    }
}

/// Values entering the duality gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    /// `Θ(x) + Ξ(Lx)`.
    pub primal: f64,
    /// `Θ*(−L*y) + Ξ*(y)`.
    pub dual: f64,
    /// `primal + dual`, accumulated without the constants that cancel.
    pub gap: f64,
    /// `gap / (|primal| + |dual|)`.
    pub normalized: f64,
}

/// Relative slack on the dual ball before a point counts as infeasible.
pub const DUAL_SLACK: f64 = 1e-9;

/// Floor added to the normalisation denominator.
pub const GAP_FLOOR: f64 = 1e-12;

pub(crate) struct GapWork {
    lx: Vec<f64>,
    lty: Vec<f64>,
    y: Vec<f64>,
}

impl GapWork {
    pub fn new(inst: &Instance) -> Self {
        Self {
            lx: vec![0.0; inst.dual_len()],
            lty: vec![0.0; inst.primal_len()],
            y: vec![0.0; inst.dual_len()],
        }
    }
}

pub(crate) fn gap(inst: &Instance, x: &[f64], y: &[f64], work: &mut GapWork) -> Gap {
    inst.apply_l(x, &mut work.lx);
    let p_shift = inst.theta_shifted(x) + inst.xi(&work.lx);
    let c = inst.theta_constant();
    let primal = p_shift + c;
    if inst.dual_infeasibility(y) > 1.0 + DUAL_SLACK {
        return Gap {
            primal,
            dual: f64::INFINITY,
            gap: f64::INFINITY,
            normalized: f64::INFINITY,
        };
    }
    work.y.copy_from_slice(y);
    inst.project_dual(&mut work.y);
    inst.apply_lt(&work.y, &mut work.lty);
    work.lty.iter_mut().for_each(|v| *v = -*v);
    let d_shift = inst.theta_conj_shifted(&work.lty);
    let dual = d_shift - c;
    let g = p_shift + d_shift;
    Gap {
        primal,
        dual,
        gap: g,
        normalized: g / (primal.abs() + dual.abs() + GAP_FLOOR),
    }
}
