//! Monte-Carlo experiment driver: piecewise textures, hyperparameter grid
//! search, classification scores, a posteriori regularity contrasts and
//! solver cost summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fidelity::{build_system, linreg, regression_stats, RegressionData, RegressionSystem};
use crate::gridops::{Mask, ScalarField};
use crate::segmentation::{classification_score, trof_threshold, Averaging, SegmentationMask};
use crate::solvers::{
    solve_coupled, solve_joint, solve_rof, Engine, ProblemKind, SolverParams, SolverTrace, Termination,
    DEFAULT_MAX_ITER,
};
use crate::synthesis::{default_ellipse, region_seed, synth_piecewise, Calibration, PiecewiseSpec};
use crate::wavelet::{analyze, LeaderPyramid, WaveletConfig};

/// Segmentation procedure: an estimate of `h` followed by iterative thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Rof,
    Joint,
    Coupled,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Rof, Method::Joint, Method::Coupled];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Rof => "T-ROF",
            Method::Joint => "T-joint",
            Method::Coupled => "T-coupled",
        }
    }

    pub fn problem(&self) -> ProblemKind {
        match self {
            Method::Rof => ProblemKind::Rof,
            Method::Joint => ProblemKind::Joint,
            Method::Coupled => ProblemKind::Coupled,
        }
    }

    pub fn uses_alpha(&self) -> bool {
        *self != Method::Rof
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.strip_prefix("t-").unwrap_or(&lower) {
            "rof" => Ok(Method::Rof),
            "joint" => Ok(Method::Joint),
            "coupled" => Ok(Method::Coupled),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl LogGrid {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        let g = Self { lo, hi, count };
        g.validate()?;
        Ok(g)
    }

    pub fn single(value: f64) -> Self {
        Self {
            lo: value,
            hi: value,
            count: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("grid must have at least one value".into()));
        }
        if !(self.lo > 0.0) || !(self.hi >= self.lo) || !self.hi.is_finite() {
            return Err(Error::Config(format!(
                "grid bounds must satisfy 0 < lo <= hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let (a, b) = (self.lo.log10(), self.hi.log10());
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.hi
                } else {
                    10f64.powf(a + (b - a) * i as f64 / (self.count - 1) as f64)
                }
            })
            .collect()
    }
}

/// Experiment size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scale {
    /// `N = 256`, 3 realizations, 9 λ × 3 α grid, 20 000 iteration cap.
    #[default]
    Desk,
    /// `N = 512`, 5 realizations, 9 λ × 6 α grid, 250 000 iteration cap.
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Config(format!("unknown scale {s:?}"))),
        }
    }
}

/// Iteration cap of desk-scale grid searches.
pub const DESK_MAX_ITER: usize = 20_000;

/// Preset contrasts `(ΔΣ², ΔH)` over the `(Σ₀², H₀) = (0.6, 0.5)` background.
pub const PRESETS: [(&str, f64, f64); 6] = [
    ("I", 0.1, 0.2),
    ("II", 0.15, 0.1),
    ("III", 0.1, 0.1),
    ("IV", 0.05, 0.1),
    ("V", 0.1, 0.05),
    ("VI", 0.1, 0.025),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub sigma0_sq: f64,
    pub h0: f64,
    pub delta_sigma_sq: f64,
    pub delta_h: f64,
    pub n: usize,
    pub realizations: usize,
    pub seed: u64,
    /// Methods with the engines run for each.
    pub methods: Vec<(Method, Vec<Engine>)>,
    pub lambda_grid: LogGrid,
    pub alpha_grid: LogGrid,
    pub j1: u32,
    pub j2: u32,
    pub max_iter: usize,
    /// Overrides the per-problem default gap tolerance when set.
    pub gap_tol: Option<f64>,
    pub averaging: Averaging,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Configurations I–VI, plus `II'` (background `Σ₀ = 0.6`, ellipse
    /// `(Σ₁, H₁) = (0.65, 0.8)`, both read as standard deviations).
    pub fn preset(id: &str, scale: Scale) -> Result<Self> {
        let (sigma0_sq, h0, ds, dh) = if id == "II'" {
            (0.36, 0.5, 0.65f64 * 0.65 - 0.36, 0.3)
        } else {
            let &(_, ds, dh) = PRESETS
                .iter()
                .find(|(name, _, _)| *name == id)
                .ok_or_else(|| Error::Config(format!("unknown configuration {id:?}")))?;
            (0.6, 0.5, ds, dh)
        };
        let (n, realizations, lambda_grid, alpha_grid, max_iter) = match scale {
            Scale::Desk => (256, 3, LogGrid::new(0.1, 1000.0, 9)?, LogGrid::new(0.01, 100.0, 3)?, DESK_MAX_ITER),
            Scale::Full => (512, 5, LogGrid::new(0.1, 1000.0, 9)?, LogGrid::new(0.01, 1000.0, 6)?, DEFAULT_MAX_ITER),
        };
        Ok(Self {
            id: id.to_string(),
            sigma0_sq,
            h0,
            delta_sigma_sq: ds,
            delta_h: dh,
            n,
            realizations,
            seed: 0,
            methods: Method::ALL.iter().map(|&m| (m, vec![Engine::AcPd])).collect(),
            lambda_grid,
            alpha_grid,
            j1: 2,
            j2: 5,
            max_iter,
            gap_tol: None,
            averaging: Averaging::Linear,
            threads: None,
        })
    }

    pub fn sigma1_sq(&self) -> f64 {
        self.sigma0_sq + self.delta_sigma_sq
    }

    pub fn h1(&self) -> f64 {
        self.h0 + self.delta_h
    }

    pub fn validate(&self) -> Result<()> {
        self.lambda_grid.validate()?;
        self.alpha_grid.validate()?;
        if !(self.sigma0_sq > 0.0) || !(self.sigma1_sq() > 0.0) {
            return Err(Error::Config(format!(
                "region variances must be positive, got {} and {}",
                self.sigma0_sq,
                self.sigma1_sq()
            )));
        }
        for h in [self.h0, self.h1()] {
            if !(h > 0.0 && h < 1.0) {
                return Err(Error::Config(format!("region regularity {h} outside (0, 1)")));
            }
        }
        if self.realizations == 0 {
            return Err(Error::Config("at least one realization is required".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if let Some(t) = self.gap_tol {
            if !(t > 0.0) {
                return Err(Error::Config(format!("gap tolerance must be positive, got {t}")));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("thread count must be positive".into()));
        }
        for (m, engines) in &self.methods {
            if engines.is_empty() {
                return Err(Error::Config(format!("no engine given for {m}")));
            }
        }
        WaveletConfig::new(3, self.j1, self.j2)?.check_dims(self.n, self.n)?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_config()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(reason) => Error::format(path, reason),
            other => other,
        })
    }

    /// Master seed of realization `r`.
    pub fn realization_seed(&self, r: usize) -> u64 {
        region_seed(self.seed, r as u64)
    }

    fn solver_params(&self, method: Method, lambda: f64, alpha: f64) -> SolverParams {
        let p = SolverParams::new(method.problem(), lambda, alpha).with_max_iter(self.max_iter);
        match self.gap_tol {
            Some(t) => p.with_gap_tol(t),
            None => p,
        }
    }
}

/// On-disk configuration: flat `key = value` lines (TOML). Every key is
/// optional; `preset` and `scale` pick the starting point and the rest
/// override it.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<String>,
    scale: Option<String>,
    id: Option<String>,
    sigma0_sq: Option<f64>,
    h0: Option<f64>,
    delta_sigma_sq: Option<f64>,
    delta_h: Option<f64>,
    n: Option<usize>,
    realizations: Option<usize>,
    seed: Option<u64>,
    methods: Option<Vec<String>>,
    rof_engines: Option<Vec<String>>,
    joint_engines: Option<Vec<String>>,
    coupled_engines: Option<Vec<String>>,
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    lambda_count: Option<usize>,
    alpha_min: Option<f64>,
    alpha_max: Option<f64>,
    alpha_count: Option<usize>,
    j1: Option<u32>,
    j2: Option<u32>,
    max_iter: Option<usize>,
    gap_tol: Option<f64>,
    averaging: Option<String>,
    threads: Option<usize>,
}

impl ConfigFile {
    fn into_config(self) -> Result<ExperimentConfig> {
        let scale = self.scale.as_deref().map(Scale::from_str).transpose()?.unwrap_or_default();
        let mut cfg = ExperimentConfig::preset(self.preset.as_deref().unwrap_or("I"), scale)?;
        cfg.id = self.id.or(self.preset).unwrap_or_else(|| "custom".into());
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(sigma0_sq, h0, delta_sigma_sq, delta_h, n, realizations, seed, j1, j2, max_iter);
        cfg.gap_tol = self.gap_tol.or(cfg.gap_tol);
        cfg.threads = self.threads.or(cfg.threads);
        let parse_engines = |list: Option<Vec<String>>| -> Result<Vec<Engine>> {
            match list {
                None => Ok(vec![Engine::AcPd]),
                Some(l) => l.iter().map(|s| s.parse()).collect(),
            }
        };
        let engines = [
            parse_engines(self.rof_engines)?,
            parse_engines(self.joint_engines)?,
            parse_engines(self.coupled_engines)?,
        ];
        if let Some(list) = self.methods {
            let mut methods = Vec::new();
            for s in &list {
                let m: Method = s.parse()?;
                if methods.iter().any(|(x, _)| *x == m) {
                    return Err(Error::Config(format!("method {m} listed twice")));
                }
                methods.push((m, engines[m as usize].clone()));
            }
            cfg.methods = methods;
        } else {
            for (m, e) in cfg.methods.iter_mut() {
                *e = engines[*m as usize].clone();
            }
        }
        let grid = |lo: Option<f64>, hi: Option<f64>, count: Option<usize>, base: LogGrid| LogGrid {
            lo: lo.unwrap_or(base.lo),
            hi: hi.unwrap_or(base.hi),
            count: count.unwrap_or(base.count),
        };
        cfg.lambda_grid = grid(self.lambda_min, self.lambda_max, self.lambda_count, cfg.lambda_grid);
        cfg.alpha_grid = grid(self.alpha_min, self.alpha_max, self.alpha_count, cfg.alpha_grid);
        if let Some(a) = self.averaging {
            cfg.averaging = match a.to_ascii_lowercase().as_str() {
                "linear" => Averaging::Linear,
                "log" => Averaging::Log,
                _ => return Err(Error::Config(format!("unknown averaging {a:?}"))),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One solver run on one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub config: String,
    pub method: Method,
    pub engine: Engine,
    pub lambda: f64,
    /// `None` for T-ROF.
    pub alpha: Option<f64>,
    pub realization: usize,
    pub seed: u64,
    pub score: f64,
    /// `Ĥ₁ − Ĥ₀`; NaN when a region is empty.
    pub delta_h: f64,
    /// Thresholding found no split; the mask is all background.
    pub trivial: bool,
    pub iterations: usize,
    pub max_iter: usize,
    pub seconds: f64,
    pub termination: Termination,
}

impl ResultRecord {
    fn alpha_key(&self) -> f64 {
        self.alpha.unwrap_or(0.0)
    }
}

/// Texture analysed once per realization.
struct Realization {
    index: usize,
    seed: u64,
    pyramid: LeaderPyramid,
    data: RegressionData,
    h_lr: ScalarField,
}

/// Piecewise texture of realization `index` over the default ellipse, with
/// the ground-truth mask.
pub fn synthesize_realization(cfg: &ExperimentConfig, index: usize) -> Result<(ScalarField, Mask)> {
    cfg.validate()?;
    let truth = default_ellipse(cfg.n)?;
    let texture = texture_for(cfg, &truth, index)?;
    Ok((texture, truth))
}

fn texture_for(cfg: &ExperimentConfig, truth: &Mask, index: usize) -> Result<ScalarField> {
    let spec = PiecewiseSpec::two_region(
        truth,
        (cfg.h0, cfg.sigma0_sq.sqrt()),
        (cfg.h1(), cfg.sigma1_sq().sqrt()),
        cfg.realization_seed(index),
    )?;
    synth_piecewise(&spec, Calibration::Exact)
}

fn prepare(cfg: &ExperimentConfig, truth: &Mask, sys: &RegressionSystem, index: usize) -> Result<Realization> {
    let seed = cfg.realization_seed(index);
    let texture = texture_for(cfg, truth, index)?;
    let wcfg = WaveletConfig::new(3, cfg.j1, cfg.j2)?;
    let pyramid = analyze(&texture, &wcfg)?;
    let data = regression_stats(&pyramid, sys)?;
    let h_lr = linreg(&data, sys).h;
    Ok(Realization {
        index,
        seed,
        pyramid,
        data,
        h_lr,
    })
}

/// Segments an `h` map and scores it against `truth`.
pub fn score_estimate(
    h: &ScalarField,
    truth: &Mask,
    pyramid: &LeaderPyramid,
    sys: &RegressionSystem,
    averaging: Averaging,
) -> Result<(f64, f64, bool)> {
    let seg = match trof_threshold(h) {
        Ok(seg) => seg,
        Err(Error::Degenerate(_)) => {
            let (r, c) = h.dims();
            let score = classification_score(&Mask::zeros(r, c), truth)?;
            return Ok((score, f64::NAN, true));
        }
        Err(e) => return Err(e),
    };
    let score = classification_score(&seg.labels, truth)?;
    let delta_h = match seg.with_global_h(pyramid, sys, averaging) {
        Ok(SegmentationMask { h_global: Some((h0, h1)), .. }) => h1 - h0,
        Ok(_) | Err(Error::Degenerate(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok((score, delta_h, false))
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    realization: usize,
    method: Method,
    engine: Engine,
    lambda: f64,
    alpha: Option<f64>,
}

fn run_cell(
    cfg: &ExperimentConfig,
    truth: &Mask,
    sys: &RegressionSystem,
    real: &Realization,
    cell: Cell,
) -> Result<ResultRecord> {
    let params = cfg.solver_params(cell.method, cell.lambda, cell.alpha.unwrap_or(1.0));
    let start = Instant::now();
    let (h, trace): (ScalarField, SolverTrace) = match cell.method {
        Method::Rof => {
            let s = solve_rof(&real.h_lr, &params, cell.engine)?;
            (s.h, s.trace)
        }
        Method::Joint => {
            let s = solve_joint(&real.data, sys, &params, cell.engine)?;
            (s.estimate.h, s.trace)
        }
        Method::Coupled => {
            let s = solve_coupled(&real.data, sys, &params, cell.engine)?;
            (s.estimate.h, s.trace)
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let (score, delta_h, trivial) = score_estimate(&h, truth, &real.pyramid, sys, cfg.averaging)?;
    Ok(ResultRecord {
        config: cfg.id.clone(),
        method: cell.method,
        engine: cell.engine,
        lambda: cell.lambda,
        alpha: cell.alpha,
        realization: real.index,
        seed: real.seed,
        score,
        delta_h,
        trivial,
        iterations: trace.iterations,
        max_iter: params.max_iter,
        seconds,
        termination: trace.termination,
    })
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Runs every (realization, method, engine, λ, α) cell of `cfg`. Records
/// come back sorted by realization, method, engine, λ then α.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    if cfg.methods.is_empty() {
        return Ok(Vec::new());
    }
    let truth = default_ellipse(cfg.n)?;
    let sys = build_system(cfg.j1, cfg.j2)?;
    let lambdas = cfg.lambda_grid.values();
    let alphas = cfg.alpha_grid.values();
    let context = |seed: u64, lambda: f64, alpha: Option<f64>| {
        let id = cfg.id.clone();
        move |e: Error| Error::Experiment {
            config: id,
            seed,
            lambda,
            alpha,
            source: Box::new(e),
        }
    };

    with_pool(cfg.threads, || -> Result<Vec<ResultRecord>> {
        let reals = (0..cfg.realizations)
            .into_par_iter()
            .map(|r| {
                prepare(cfg, &truth, &sys, r).map_err(context(cfg.realization_seed(r), f64::NAN, None))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cells = Vec::new();
        for r in 0..cfg.realizations {
            for (method, engines) in &cfg.methods {
                for &engine in engines {
                    for &lambda in &lambdas {
                        if method.uses_alpha() {
                            for &alpha in &alphas {
                                cells.push(Cell { realization: r, method: *method, engine, lambda, alpha: Some(alpha) });
                            }
                        } else {
                            cells.push(Cell { realization: r, method: *method, engine, lambda, alpha: None });
                        }
                    }
                }
            }
        }
        let mut records = cells
            .into_par_iter()
            .map(|cell| {
                let real = &reals[cell.realization];
                log::debug!("{} {} {} lambda={} alpha={:?}", cfg.id, real.index, cell.method, cell.lambda, cell.alpha);
                run_cell(cfg, &truth, &sys, real, cell).map_err(context(real.seed, cell.lambda, cell.alpha))
            })
            .collect::<Result<Vec<_>>>()?;
        records.sort_by(|a, b| {
            (a.realization, a.method, a.engine as u8)
                .cmp(&(b.realization, b.method, b.engine as u8))
                .then(a.lambda.total_cmp(&b.lambda))
                .then(a.alpha_key().total_cmp(&b.alpha_key()))
        });
        Ok(records)
    })?
}

/// Mean and sample standard deviation; NaN entries are skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
        let count = v.len();
        if count == 0 {
            return Self { mean: f64::NAN, sd: f64::NAN, count };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let sd = if count > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, count }
    }
}

/// Seed-averaged performance at the best grid cell of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct BestCell {
    pub config: String,
    pub method: Method,
    pub engine: Engine,
    pub lambda: f64,
    pub alpha: Option<f64>,
    pub score: Summary,
    pub delta_h: Summary,
}

/// Per (config, method), the (engine, λ, α) cell with the highest score
/// averaged over realizations. Ties go to the smaller λ, then the smaller
/// α, then the earlier engine.
pub fn best_over_grid(records: &[ResultRecord]) -> Result<Vec<BestCell>> {
    if records.is_empty() {
        return Err(Error::Config("no records to select from".into()));
    }
    type CellKey = (String, Method, u8, u64, u64);
    let mut cells: BTreeMap<CellKey, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.config.clone(), r.method, r.engine as u8, r.lambda.to_bits(), r.alpha_key().to_bits()))
            .or_default()
            .push(r);
    }
    let mut best: BTreeMap<(String, Method), BestCell> = BTreeMap::new();
    for group in cells.values() {
        let first = group[0];
        let cand = BestCell {
            config: first.config.clone(),
            method: first.method,
            engine: first.engine,
            lambda: first.lambda,
            alpha: first.alpha,
            score: Summary::of(group.iter().map(|r| r.score)),
            delta_h: Summary::of(group.iter().map(|r| r.delta_h)),
        };
        let key = (cand.config.clone(), cand.method);
        match best.get(&key) {
            Some(cur) if !beats(&cand, cur) => {}
            _ => {
                best.insert(key, cand);
            }
        }
    }
    Ok(best.into_values().collect())
}

fn beats(a: &BestCell, b: &BestCell) -> bool {
    let key = |c: &BestCell| (c.lambda, c.alpha.unwrap_or(0.0), c.engine as u8);
    if a.score.mean != b.score.mean {
        return a.score.mean > b.score.mean;
    }
    let (ka, kb) = (key(a), key(b));
    ka.0.total_cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.cmp(&kb.2))
        .is_lt()
}

/// Iteration and wall-time summary of one (method, engine) group.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub method: Method,
    pub engine: Engine,
    pub iterations: Summary,
    pub seconds: Summary,
    pub capped: usize,
    pub runs: usize,
    pub max_iter: usize,
}

impl CostRow {
    /// `"> max_iter"` when every run hit the cap.
    pub fn iterations_cell(&self) -> String {
        if self.capped == self.runs {
            format!("> {}", self.max_iter)
        } else if self.capped > 0 {
            format!(
                "{:.1} ± {:.1} ({}/{} capped)",
                self.iterations.mean, self.iterations.sd, self.capped, self.runs
            )
        } else {
            format!("{:.1} ± {:.1}", self.iterations.mean, self.iterations.sd)
        }
    }

    pub fn seconds_cell(&self) -> String {
        format!("{:.3} ± {:.3}", self.seconds.mean, self.seconds.sd)
    }
}

pub fn cost_table(records: &[ResultRecord]) -> Vec<CostRow> {
    let mut groups: BTreeMap<(Method, u8), Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.engine as u8)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| CostRow {
            method: g[0].method,
            engine: g[0].engine,
            iterations: Summary::of(g.iter().map(|r| r.iterations as f64)),
            seconds: Summary::of(g.iter().map(|r| r.seconds)),
            capped: g.iter().filter(|r| r.termination == Termination::IterCap).count(),
            runs: g.len(),
            max_iter: g.iter().map(|r| r.max_iter).max().unwrap_or(0),
        })
        .collect()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format(path, e.to_string())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_records_csv<W: Write>(records: &[ResultRecord], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "config", "method", "engine", "lambda", "alpha", "realization", "seed", "score", "delta_h", "trivial",
        "iterations", "max_iter", "seconds", "termination",
    ])?;
    for r in records {
        w.write_record([
            r.config.clone(),
            r.method.to_string(),
            r.engine.to_string(),
            r.lambda.to_string(),
            fmt_opt(r.alpha),
            r.realization.to_string(),
            r.seed.to_string(),
            r.score.to_string(),
            r.delta_h.to_string(),
            r.trivial.to_string(),
            r.iterations.to_string(),
            r.max_iter.to_string(),
            r.seconds.to_string(),
            r.termination.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_best_csv<W: Write>(best: &[BestCell], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "config", "method", "engine", "lambda", "alpha", "score_mean", "score_sd", "delta_h_mean", "delta_h_sd",
        "realizations",
    ])?;
    for b in best {
        w.write_record([
            b.config.clone(),
            b.method.to_string(),
            b.engine.to_string(),
            b.lambda.to_string(),
            fmt_opt(b.alpha),
            b.score.mean.to_string(),
            b.score.sd.to_string(),
            b.delta_h.mean.to_string(),
            b.delta_h.sd.to_string(),
            b.score.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cost_csv<W: Write>(rows: &[CostRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method", "engine", "iterations", "seconds", "iterations_mean", "iterations_sd", "seconds_mean",
        "seconds_sd", "capped", "runs",
    ])?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.engine.to_string(),
            r.iterations_cell(),
            r.seconds_cell(),
            r.iterations.mean.to_string(),
            r.iterations.sd.to_string(),
            r.seconds.mean.to_string(),
            r.seconds.sd.to_string(),
            r.capped.to_string(),
            r.runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `records.csv`, `best.csv` and `costs.csv` into `dir`.
pub fn save_tables(records: &[ResultRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str| {
        let path = dir.join(name);
        std::fs::File::create(&path).map(|f| (f, path.clone())).map_err(|e| Error::io(path, e))
    };
    let (f, p) = open("records.csv")?;
    write_records_csv(records, f).map_err(csv_err(&p))?;
    if !records.is_empty() {
        let (f, p) = open("best.csv")?;
        write_best_csv(&best_over_grid(records)?, f).map_err(csv_err(&p))?;
    }
    let (f, p) = open("costs.csv")?;
    write_cost_csv(&cost_table(records), f).map_err(csv_err(&p))?;
    Ok(())
}

/// Zero-mean, unit-variance copy of `x`.
pub fn standardize(x: &ScalarField) -> Result<ScalarField> {
    let mean = x.mean();
    let var = x.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate("texture has zero variance".into()));
    }
    let s = var.sqrt();
    Ok(x.map(|v| (v - mean) / s))
}

/// Standardizes `a` and `b` independently and takes `b` where `mask` is 1.
pub fn composite(a: &ScalarField, b: &ScalarField, mask: &Mask) -> Result<ScalarField> {
    a.ensure_same_dims(b)?;
    if mask.dims() != a.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            got: mask.dims(),
        });
    }
    let (a, b) = (standardize(a)?, standardize(b)?);
    let (rows, cols) = a.dims();
    Ok(ScalarField::from_fn(rows, cols, |r, c| {
        if mask.get(r, c) == 1 {
            b.get(r, c)
        } else {
            a.get(r, c)
        }
    }))
}

/// Reads a grayscale image as a field in `[0, 1]`.
pub fn read_gray_image(path: &Path) -> Result<ScalarField> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = img.to_luma32f();
    let (w, h) = gray.dimensions();
    Ok(ScalarField::from_raw(h as usize, w as usize, gray.into_raw().into_iter().map(f64::from).collect()))
}

/// Two real textures composited under `mask` after per-image standardization.
pub fn ingest_real_texture(path_a: &Path, path_b: &Path, mask: &Mask) -> Result<ScalarField> {
    let a = read_gray_image(path_a)?;
    let b = read_gray_image(path_b)?;
    composite(&a, &b, mask)
}
