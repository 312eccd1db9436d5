//! Total-variation regularised estimation.
//!
//! Three problems share one saddle-point template `min_x Θ(x) + Ξ(Lx)`:
//!
//! * ROF: `Θ = ½‖h − ĥ_LR‖²`, `Ξ = λ‖D·‖₂,₁`;
//! * joint: `Θ = Φ`, `Ξ(Dv, Dh) = λ‖Dv‖₂,₁ + λα‖Dh‖₂,₁`;
//! * coupled: `Θ = Φ`, `Ξ = λ‖[Dv; αDh]‖₂,₁` with a per-pixel 4-vector norm.
//!
//! Each is solved by one of four engines: dual forward-backward, dual FISTA,
//! primal-dual with fixed steps, and primal-dual with the strong-convexity
//! step schedule. All stop on the normalised duality gap.

mod engine;
mod problem;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fidelity::{EstimatePair, RegressionData, RegressionSystem};
use crate::gridops::{ScalarField, VectorField};

pub use problem::{Gap, ProblemKind, DUAL_SLACK, GAP_FLOOR};
use problem::{GapWork, Instance};

/// Iteration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Engine {
    /// Dual forward-backward.
    Dfb,
    /// Dual FISTA.
    Fista,
    /// Primal-dual, constant steps.
    Pd,
    /// Primal-dual with `ϑ_t = (1 + 2μδ_t)^{-1/2}` step updates.
    AcPd,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Dfb, Engine::Fista, Engine::Pd, Engine::AcPd];

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Dfb => "dfb",
            Engine::Fista => "fista",
            Engine::Pd => "pd",
            Engine::AcPd => "acpd",
        }
    }

    pub fn is_dual(&self) -> bool {
        matches!(self, Engine::Dfb | Engine::Fista)
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dfb" => Ok(Engine::Dfb),
            "fista" => Ok(Engine::Fista),
            "pd" => Ok(Engine::Pd),
            "acpd" | "ac-pd" => Ok(Engine::AcPd),
            other => Err(Error::Parameter(format!(
                "unknown engine {other:?} (expected dfb, fista, pd or acpd)"
            ))),
        }
    }
}

/// Why the iterations stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GapMet,
    IterCap,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::GapMet => "gap-met",
            Termination::IterCap => "iter-cap",
        })
    }
}

pub const DEFAULT_MAX_ITER: usize = 250_000;
pub const DEFAULT_CHECK_EVERY: usize = 50;
pub const DEFAULT_GAP_TOL: f64 = 5e-3;
pub const DEFAULT_GAP_TOL_COUPLED: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub lambda: f64,
    pub alpha: f64,
    /// FISTA inertia parameter, `b > 2`.
    pub b: f64,
    pub max_iter: usize,
    pub gap_tol: f64,
    /// Gap evaluation cadence in iterations.
    pub check_every: usize,
    /// Dual step for DFB/FISTA.
    pub gamma: Option<f64>,
    /// Initial primal step for PD/AcPD.
    pub delta0: Option<f64>,
    /// Initial dual step for PD/AcPD.
    pub nu0: Option<f64>,
}

impl SolverParams {
    /// Defaults for `kind` (gap tolerance depends on the problem).
    pub fn new(kind: ProblemKind, lambda: f64, alpha: f64) -> Self {
        Self {
            lambda,
            alpha,
            b: 4.0,
            max_iter: DEFAULT_MAX_ITER,
            gap_tol: match kind {
                ProblemKind::Coupled => DEFAULT_GAP_TOL_COUPLED,
                _ => DEFAULT_GAP_TOL,
            },
            check_every: DEFAULT_CHECK_EVERY,
            gamma: None,
            delta0: None,
            nu0: None,
        }
    }

    pub fn rof(lambda: f64) -> Self {
        Self::new(ProblemKind::Rof, lambda, 1.0)
    }

    pub fn joint(lambda: f64, alpha: f64) -> Self {
        Self::new(ProblemKind::Joint, lambda, alpha)
    }

    pub fn coupled(lambda: f64, alpha: f64) -> Self {
        Self::new(ProblemKind::Coupled, lambda, alpha)
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_gap_tol(mut self, gap_tol: f64) -> Self {
        self.gap_tol = gap_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("alpha", self.alpha)?;
        positive("gap_tol", self.gap_tol)?;
        if !(self.b > 2.0) || !self.b.is_finite() {
            return Err(Error::Parameter(format!("FISTA inertia b must exceed 2, got {}", self.b)));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be at least 1".into()));
        }
        if self.check_every == 0 {
            return Err(Error::Parameter("check_every must be at least 1".into()));
        }
        for (name, v) in [("gamma", self.gamma), ("delta0", self.delta0), ("nu0", self.nu0)] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        Ok(())
    }
}

/// Step sizes actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Steps {
    pub gamma: f64,
    pub delta0: f64,
    pub nu0: f64,
}

/// Default steps are 0.99 of the largest admissible value; overrides must
/// satisfy `γ·‖∇Θ*‖_Lip·‖L‖² < 1` and `δ₀ν₀‖L‖² < 1`.
pub(crate) fn resolve_steps(inst: &Instance, params: &SolverParams) -> Result<Steps> {
    let lsq = inst.l_norm_sq();
    let lip = inst.conj_lipschitz();
    let gamma = params.gamma.unwrap_or(0.99 / (lip * lsq));
    if gamma * lip * lsq >= 1.0 {
        return Err(Error::Parameter(format!(
            "dual step {gamma} violates gamma * {lip:.4} * {lsq:.4} < 1"
        )));
    }
    let default_pd = 0.99 / lsq.sqrt();
    let delta0 = params.delta0.unwrap_or(default_pd);
    let nu0 = params.nu0.unwrap_or(default_pd);
    if delta0 * nu0 * lsq >= 1.0 {
        return Err(Error::Parameter(format!(
            "primal-dual steps ({delta0}, {nu0}) violate delta0 * nu0 * {lsq:.4} < 1"
        )));
    }
    Ok(Steps { gamma, delta0, nu0 })
}

/// One gap evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub iter: usize,
    /// Primal objective `Θ(x) + Ξ(Lx)`.
    pub objective: f64,
    /// Dual objective `Θ*(−L*y)`.
    pub dual_objective: f64,
    pub gap: f64,
    pub gap_normalized: f64,
    /// Seconds since the solver started.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub problem: ProblemKind,
    pub engine: Engine,
    pub iterations: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub termination: Termination,
    pub seconds: f64,
}

impl SolverTrace {
    pub fn final_gap(&self) -> Option<f64> {
        self.checkpoints.last().map(|c| c.gap_normalized)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Config(format!("writing trace CSV: {e}"));
        w.write_record(["iter", "objective", "gap", "gap_normalized", "seconds", "dual_objective"])
            .map_err(err)?;
        for c in &self.checkpoints {
            w.write_record(&[
                c.iter.to_string(),
                format!("{:e}", c.objective),
                format!("{:e}", c.gap),
                format!("{:e}", c.gap_normalized),
                format!("{:.6}", c.seconds),
                format!("{:e}", c.dual_objective),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<trace csv>", e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// ROF output: denoised map, dual field and trace.
#[derive(Debug, Clone)]
pub struct RofSolution {
    pub h: ScalarField,
    pub dual: VectorField,
    pub trace: SolverTrace,
}

/// Joint or coupled output.
#[derive(Debug, Clone)]
pub struct PairSolution {
    pub estimate: EstimatePair,
    /// Four channels: `u` (horizontal, vertical) then `ℓ`.
    pub dual: VectorField,
    pub trace: SolverTrace,
}

fn check_problem(kind: ProblemKind, params: &SolverParams) -> Result<()> {
    params.validate()?;
    if kind == ProblemKind::Rof && params.alpha != 1.0 {
        log::debug!("alpha = {} ignored by the ROF problem", params.alpha);
    }
    Ok(())
}

/// `argmin_h ½‖h − ĥ_LR‖² + λ‖Dh‖₂,₁`.
pub fn solve_rof(h_lr: &ScalarField, params: &SolverParams, engine: Engine) -> Result<RofSolution> {
    check_problem(ProblemKind::Rof, params)?;
    let (rows, cols) = h_lr.dims();
    let inst = Instance::rof(h_lr.as_slice(), rows, cols, params.lambda);
    let out = engine::run(&inst, params, engine)?;
    Ok(RofSolution {
        h: ScalarField::from_raw(rows, cols, out.x),
        dual: VectorField::from_raw(2, rows, cols, out.y),
        trace: out.trace,
    })
}

fn solve_pair(
    kind: ProblemKind,
    data: &RegressionData,
    sys: &RegressionSystem,
    params: &SolverParams,
    engine: Engine,
) -> Result<PairSolution> {
    check_problem(kind, params)?;
    let (rows, cols) = data.dims();
    let inst = Instance::fidelity(kind, data, sys, params.lambda, params.alpha);
    let out = engine::run(&inst, params, engine)?;
    Ok(PairSolution {
        estimate: EstimatePair::from_flat(rows, cols, &out.x),
        dual: VectorField::from_raw(4, rows, cols, out.y),
        trace: out.trace,
    })
}

/// `argmin Φ(v, h) + λ(‖Dv‖₂,₁ + α‖Dh‖₂,₁)`.
pub fn solve_joint(
    data: &RegressionData,
    sys: &RegressionSystem,
    params: &SolverParams,
    engine: Engine,
) -> Result<PairSolution> {
    solve_pair(ProblemKind::Joint, data, sys, params, engine)
}

/// `argmin Φ(v, h) + λ‖[Dv; αDh]‖₂,₁`.
pub fn solve_coupled(
    data: &RegressionData,
    sys: &RegressionSystem,
    params: &SolverParams,
    engine: Engine,
) -> Result<PairSolution> {
    solve_pair(ProblemKind::Coupled, data, sys, params, engine)
}

/// Problem data for [`duality_gap`].
#[derive(Debug, Clone, Copy)]
pub enum Problem<'a> {
    Rof(&'a ScalarField),
    Joint(&'a RegressionData, &'a RegressionSystem),
    Coupled(&'a RegressionData, &'a RegressionSystem),
}

/// Primal point for [`duality_gap`].
#[derive(Debug, Clone, Copy)]
pub enum Primal<'a> {
    Scalar(&'a ScalarField),
    Pair(&'a EstimatePair),
}

/// `Γ(x; y)` and its normalised form. A dual point outside the admissible
/// balls by more than [`DUAL_SLACK`] gives an infinite gap; points within
/// the slack are projected first.
pub fn duality_gap(problem: Problem, primal: Primal, dual: &VectorField, params: &SolverParams) -> Result<Gap> {
    params.validate()?;
    let (inst, x) = match (problem, primal) {
        (Problem::Rof(h_lr), Primal::Scalar(h)) => {
            h_lr.ensure_same_dims(h)?;
            let (r, c) = h_lr.dims();
            (Instance::rof(h_lr.as_slice(), r, c, params.lambda), h.as_slice().to_vec())
        }
        (Problem::Joint(d, s), Primal::Pair(x)) => {
            (Instance::fidelity(ProblemKind::Joint, d, s, params.lambda, params.alpha), x.to_flat())
        }
        (Problem::Coupled(d, s), Primal::Pair(x)) => {
            (Instance::fidelity(ProblemKind::Coupled, d, s, params.lambda, params.alpha), x.to_flat())
        }
        _ => return Err(Error::Config("primal variable does not match the problem".into())),
    };
    if x.len() != inst.primal_len() {
        return Err(Error::Config(format!(
            "primal has {} values, problem expects {}",
            x.len(),
            inst.primal_len()
        )));
    }
    if dual.channels() != inst.dual_channels() || (dual.rows(), dual.cols()) != (inst.rows, inst.cols) {
        return Err(Error::Config(format!(
            "dual field {}x{}x{} does not match problem {}x{}x{}",
            dual.channels(),
            dual.rows(),
            dual.cols(),
            inst.dual_channels(),
            inst.rows,
            inst.cols
        )));
    }
    let mut work = GapWork::new(&inst);
    Ok(problem::gap(&inst, &x, dual.as_slice(), &mut work))
}
