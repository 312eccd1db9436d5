//! Iteration loops shared by the three problems.

use std::time::Instant;

use super::problem::{gap, GapWork, Instance};
use super::{resolve_steps, Checkpoint, Engine, SolverParams, SolverTrace, Termination};
use crate::error::{Error, Result};

pub(crate) struct RunOutput {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub trace: SolverTrace,
}

/// Update order for the primal-dual engines.
#[cfg_attr(not(test), allow(dead_code))]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PdOrder {
    /// Primal prox first, extrapolation on the dual variable.
    PrimalFirst,
    /// Dual projection first, extrapolation on the primal variable.
    DualFirst,
}

pub(crate) const DEFAULT_PD_ORDER: PdOrder = PdOrder::PrimalFirst;

pub(crate) fn run(inst: &Instance, params: &SolverParams, engine: Engine) -> Result<RunOutput> {
    run_with(inst, params, engine, DEFAULT_PD_ORDER)
}

struct Monitor<'a> {
    inst: &'a Instance<'a>,
    params: &'a SolverParams,
    work: GapWork,
    start: Instant,
    checkpoints: Vec<Checkpoint>,
}

impl<'a> Monitor<'a> {
    /// Evaluates the gap and reports whether the tolerance is met.
    fn check(&mut self, iter: usize, x: &[f64], y: &[f64]) -> Result<bool> {
        let g = gap(self.inst, x, y, &mut self.work);
        if g.gap.is_nan() || g.primal.is_nan() {
            return Err(Error::Degenerate(format!(
                "non-finite duality gap at iteration {iter}"
            )));
        }
        self.checkpoints.push(Checkpoint {
            iter,
            objective: g.primal,
            dual_objective: g.dual,
            gap: g.gap,
            gap_normalized: g.normalized,
            seconds: self.start.elapsed().as_secs_f64(),
        });
        Ok(g.normalized <= self.params.gap_tol)
    }

    fn finish(self, engine: Engine, iterations: usize, met: bool) -> SolverTrace {
        SolverTrace {
            problem: self.inst.kind,
            engine,
            iterations,
            checkpoints: self.checkpoints,
            termination: if met { Termination::GapMet } else { Termination::IterCap },
            seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

pub(crate) fn run_with(
    inst: &Instance,
    params: &SolverParams,
    engine: Engine,
    order: PdOrder,
) -> Result<RunOutput> {
    let steps = resolve_steps(inst, params)?;
    let mut mon = Monitor {
        inst,
        params,
        work: GapWork::new(inst),
        start: Instant::now(),
        checkpoints: Vec::new(),
    };
    let (x, y, iters, met) = match engine {
        Engine::Dfb | Engine::Fista => dual_loop(inst, params, steps.gamma, engine == Engine::Fista, &mut mon)?,
        Engine::Pd | Engine::AcPd => {
            let accel = engine == Engine::AcPd;
            match order {
                PdOrder::PrimalFirst => pd_primal_first(inst, params, steps.delta0, steps.nu0, accel, &mut mon)?,
                PdOrder::DualFirst => pd_dual_first(inst, params, steps.delta0, steps.nu0, accel, &mut mon)?,
            }
        }
    };
    let trace = mon.finish(engine, iters, met);
    log::debug!(
        "{} / {}: {} iterations, {}, final gap {:?}",
        inst.kind,
        engine,
        iters,
        trace.termination,
        trace.final_gap()
    );
    Ok(RunOutput { x, y, trace })
}

fn axpy_into(out: &mut [f64], a: &[f64], s: f64, b: &[f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x + s * y;
    }
}

/// Extrapolation `out = a + s (a − b)`.
fn extrapolate(out: &mut [f64], a: &[f64], b: &[f64], s: f64) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x + s * (x - y);
    }
}

type LoopResult = Result<(Vec<f64>, Vec<f64>, usize, bool)>;

/// Forward-backward on the dual `min_y Θ*(−L*y) + Ξ*(y)`, with optional
/// inertia. The primal iterate is `x(y) = ∇Θ*(−L*y)`; since `x(·)` is
/// affine the primal point at the extrapolated dual is extrapolated the
/// same way.
fn dual_loop(inst: &Instance, params: &SolverParams, gamma: f64, inertia: bool, mon: &mut Monitor) -> LoopResult {
    let (np, nd) = (inst.primal_len(), inst.dual_len());
    let mut y = vec![0.0; nd];
    let mut y_new = vec![0.0; nd];
    let mut y_bar = vec![0.0; nd];
    let mut x = inst.start();
    let mut x_prev = x.clone();
    let mut x_bar = x.clone();
    let mut lx = vec![0.0; nd];
    let mut w = vec![0.0; np];
    let mut tau = 1.0;
    let mut beta = 0.0;
    let mut met = false;
    let mut iters = 0;
    for t in 0..params.max_iter {
        extrapolate(&mut x_bar, &x, &x_prev, beta);
        inst.apply_l(&x_bar, &mut lx);
        axpy_into(&mut y_new, &y_bar, gamma, &lx);
        inst.project_dual(&mut y_new);
        if inertia {
            let tau_next = (t as f64 + params.b) / params.b;
            beta = (tau - 1.0) / tau_next;
            tau = tau_next;
        }
        extrapolate(&mut y_bar, &y_new, &y, beta);
        std::mem::swap(&mut y, &mut y_new);
        std::mem::swap(&mut x, &mut x_prev);
        inst.apply_lt(&y, &mut w);
        w.iter_mut().for_each(|v| *v = -*v);
        inst.conj_grad(&w, &mut x);
        iters = t + 1;
        if iters % params.check_every == 0 && mon.check(iters, &x, &y)? {
            met = true;
            break;
        }
    }
    if !met && iters % params.check_every != 0 {
        met = mon.check(iters, &x, &y)?;
    }
    Ok((x, y, iters, met))
}

fn theta_step(inst: &Instance, accel: bool, delta: f64) -> f64 {
    if accel {
        1.0 / (1.0 + 2.0 * inst.mu() * delta).sqrt()
    } else {
        1.0
    }
}

/// Primal prox with the extrapolated dual, then dual projection, then
/// extrapolation of the dual. Dual starts at the projection of `L x⁰`.
fn pd_primal_first(
    inst: &Instance,
    params: &SolverParams,
    mut delta: f64,
    mut nu: f64,
    accel: bool,
    mon: &mut Monitor,
) -> LoopResult {
    let (np, nd) = (inst.primal_len(), inst.dual_len());
    let mut x = inst.start();
    let mut x_new = vec![0.0; np];
    let mut y = vec![0.0; nd];
    inst.apply_l(&x, &mut y);
    inst.project_dual(&mut y);
    let mut y_new = vec![0.0; nd];
    let mut y_bar = y.clone();
    let mut lty = vec![0.0; np];
    let mut w = vec![0.0; np];
    let mut lx = vec![0.0; nd];
    let mut met = false;
    let mut iters = 0;
    for t in 0..params.max_iter {
        inst.apply_lt(&y_bar, &mut lty);
        axpy_into(&mut w, &x, -delta, &lty);
        inst.prox_theta(&w, delta, &mut x_new);
        inst.apply_l(&x_new, &mut lx);
        axpy_into(&mut y_new, &y, nu, &lx);
        inst.project_dual(&mut y_new);
        let th = theta_step(inst, accel, delta);
        delta *= th;
        nu /= th;
        extrapolate(&mut y_bar, &y_new, &y, th);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut y, &mut y_new);
        iters = t + 1;
        if iters % params.check_every == 0 && mon.check(iters, &x, &y)? {
            met = true;
            break;
        }
    }
    if !met && iters % params.check_every != 0 {
        met = mon.check(iters, &x, &y)?;
    }
    Ok((x, y, iters, met))
}

/// Dual projection with the extrapolated primal, then primal prox, then
/// extrapolation of the primal variable.
fn pd_dual_first(
    inst: &Instance,
    params: &SolverParams,
    mut delta: f64,
    mut nu: f64,
    accel: bool,
    mon: &mut Monitor,
) -> LoopResult {
    let (np, nd) = (inst.primal_len(), inst.dual_len());
    let mut x = inst.start();
    let mut x_new = vec![0.0; np];
    let mut x_bar = x.clone();
    let mut y = vec![0.0; nd];
    inst.apply_l(&x, &mut y);
    inst.project_dual(&mut y);
    let mut y_new = vec![0.0; nd];
    let mut lty = vec![0.0; np];
    let mut w = vec![0.0; np];
    let mut lx = vec![0.0; nd];
    let mut met = false;
    let mut iters = 0;
    for t in 0..params.max_iter {
        inst.apply_l(&x_bar, &mut lx);
        axpy_into(&mut y_new, &y, nu, &lx);
        inst.project_dual(&mut y_new);
        inst.apply_lt(&y_new, &mut lty);
        axpy_into(&mut w, &x, -delta, &lty);
        inst.prox_theta(&w, delta, &mut x_new);
        let th = theta_step(inst, accel, delta);
        delta *= th;
        nu /= th;
        extrapolate(&mut x_bar, &x_new, &x, th);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut y, &mut y_new);
        iters = t + 1;
        if iters % params.check_every == 0 && mon.check(iters, &x, &y)? {
            met = true;
            break;
        }
    }
    if !met && iters % params.check_every != 0 {
        met = mon.check(iters, &x, &y)?;
    }
    Ok((x, y, iters, met))
}
