use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fracseg::fidelity::{build_system, linreg, mu_table, regression_stats, RegressionData, RegressionSystem};
use fracseg::gridops::ScalarField;
use fracseg::harness::{self, ExperimentConfig, Method, Scale};
use fracseg::io;
use fracseg::segmentation::{classification_score, trof_threshold, Averaging};
use fracseg::solvers::{self, Engine, SolverParams, SolverTrace, DEFAULT_MAX_ITER};
use fracseg::synthesis::{synth_y, Calibration, FractalParams};
use fracseg::wavelet::{analyze, LeaderPyramid, WaveletConfig};

#[derive(Parser)]
#[command(name = "fracseg", version, about = "Fractal texture segmentation toolkit")]
struct Cli {
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a piecewise (or homogeneous) texture.
    Synth(SynthArgs),
    /// Leader pyramid and linear-regression maps of a texture.
    Analyze(AnalyzeArgs),
    /// Estimate, threshold and export a segmentation.
    Segment(SegmentArgs),
    /// Run an experiment configuration and write CSV tables.
    Bench(BenchArgs),
    /// Duality-gap traces of one problem for one or all engines.
    Gap(GapArgs),
    /// Strong-convexity modulus for every octave range.
    MuTable(MuTableArgs),
}

#[derive(Args)]
struct Octaves {
    #[arg(long, default_value_t = 2)]
    j1: u32,
    #[arg(long, default_value_t = 5)]
    j2: u32,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment configuration; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "I")]
    preset: String,
    /// `desk` or `full`.
    #[arg(long, default_value = "desk")]
    scale: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::preset(&self.preset, self.scale.parse::<Scale>()?)?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, default_value_t = 0)]
    realization: usize,
    /// Homogeneous field with this H instead of a piecewise texture.
    #[arg(long)]
    homogeneous_h: Option<f64>,
    /// Variance of the homogeneous field.
    #[arg(long, default_value_t = 0.6)]
    sigma_sq: f64,
    /// Skip the exact variance rescaling.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// FSEG1 texture file.
    input: PathBuf,
    #[command(flatten)]
    octaves: Octaves,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value = "coupled")]
    method: String,
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
}

impl SolveArgs {
    fn method(&self) -> Result<Method> {
        Ok(self.method.parse()?)
    }

    fn params(&self) -> Result<SolverParams> {
        let p = SolverParams::new(self.method()?.problem(), self.lambda, self.alpha).with_max_iter(self.max_iter);
        Ok(match self.gap_tol {
            Some(t) => p.with_gap_tol(t),
            None => p,
        })
    }
}

#[derive(Args)]
struct SegmentArgs {
    input: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
    #[arg(long, default_value = "acpd")]
    engine: String,
    #[command(flatten)]
    octaves: Octaves,
    /// Ground-truth PGM mask; prints the classification score.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct GapArgs {
    input: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
    /// Single engine; all four when omitted.
    #[arg(long)]
    engine: Option<String>,
    #[command(flatten)]
    octaves: Octaves,
}

#[derive(Args)]
struct MuTableArgs {
    #[arg(long, default_value_t = 8)]
    jmax: u32,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match &cli.command {
        Command::Synth(a) => synth(a, &cli.out_dir),
        Command::Analyze(a) => analyze_cmd(a, &cli.out_dir),
        Command::Segment(a) => segment(a, &cli.out_dir),
        Command::Bench(a) => bench(a, &cli.out_dir),
        Command::Gap(a) => gap(a, &cli.out_dir),
        Command::MuTable(a) => mu(a, &cli.out_dir),
    }
}

fn synth(a: &SynthArgs, out: &Path) -> Result<()> {
    let cfg = a.experiment.load()?;
    let calibration = if a.raw { Calibration::Raw } else { Calibration::Exact };
    let texture = if let Some(h) = a.homogeneous_h {
        let p = FractalParams::from_variance(h, a.sigma_sq, cfg.realization_seed(a.realization), cfg.n)?;
        synth_y(&p, calibration)?
    } else {
        if a.raw {
            bail!("--raw only applies to homogeneous fields");
        }
        let (texture, truth) = harness::synthesize_realization(&cfg, a.realization)?;
        io::write_pgm(&out.join("mask.pgm"), &truth)?;
        texture
    };
    let path = out.join("texture.fseg");
    io::write_texture(&path, &texture)?;
    log::info!("wrote {} ({}x{})", path.display(), texture.rows(), texture.cols());
    Ok(())
}

struct Analysis {
    pyramid: LeaderPyramid,
    sys: RegressionSystem,
    data: RegressionData,
}

fn load_and_analyze(input: &Path, octaves: &Octaves) -> Result<Analysis> {
    let texture = io::read_texture(input)?;
    let cfg = WaveletConfig::new(3, octaves.j1, octaves.j2)?;
    let pyramid = analyze(&texture, &cfg)?;
    let sys = build_system(octaves.j1, octaves.j2)?;
    let data = regression_stats(&pyramid, &sys)?;
    Ok(Analysis { pyramid, sys, data })
}

fn analyze_cmd(a: &AnalyzeArgs, out: &Path) -> Result<()> {
    let an = load_and_analyze(&a.input, &a.octaves)?;
    an.pyramid.dump(out, "loglead")?;
    let lr = linreg(&an.data, &an.sys);
    io::write_grid_with_sidecar(&out.join("v_lr.f64"), &lr.v, &[("map", "v".into())])?;
    io::write_grid_with_sidecar(&out.join("h_lr.f64"), &lr.h, &[("map", "h".into())])?;
    if an.pyramid.clamped() > 0 {
        log::warn!("{} leaders clamped before the logarithm", an.pyramid.clamped());
    }
    log::info!("mean h_lr {:.4}, mean v_lr {:.4}", lr.h.mean(), lr.v.mean());
    Ok(())
}

/// Runs one solver and returns the `h` map, optional `v` map and trace.
fn run_solver(
    an: &Analysis,
    method: Method,
    params: &SolverParams,
    engine: Engine,
) -> Result<(ScalarField, Option<ScalarField>, SolverTrace)> {
    Ok(match method {
        Method::Rof => {
            let h_lr = linreg(&an.data, &an.sys).h;
            let s = solvers::solve_rof(&h_lr, params, engine)?;
            (s.h, None, s.trace)
        }
        Method::Joint => {
            let s = solvers::solve_joint(&an.data, &an.sys, params, engine)?;
            (s.estimate.h, Some(s.estimate.v), s.trace)
        }
        Method::Coupled => {
            let s = solvers::solve_coupled(&an.data, &an.sys, params, engine)?;
            (s.estimate.h, Some(s.estimate.v), s.trace)
        }
    })
}

fn segment(a: &SegmentArgs, out: &Path) -> Result<()> {
    let an = load_and_analyze(&a.input, &a.octaves)?;
    let method = a.solve.method()?;
    let engine: Engine = a.engine.parse()?;
    let params = a.solve.params()?;
    let (h, v, trace) = run_solver(&an, method, &params, engine)?;
    log::info!(
        "{method} / {engine}: {} iterations, {}, {:.2}s",
        trace.iterations,
        trace.termination,
        trace.seconds
    );
    io::write_grid_with_sidecar(&out.join("h.f64"), &h, &[("method", method.to_string())])?;
    if let Some(v) = &v {
        io::write_grid_with_sidecar(&out.join("v.f64"), v, &[("method", method.to_string())])?;
    }
    trace.save_csv(&out.join("trace.csv"))?;
    let seg = trof_threshold(&h)?.with_global_h(&an.pyramid, &an.sys, Averaging::Linear)?;
    io::write_pgm(&out.join("segmentation.pgm"), &seg.labels)?;
    if let Some((h0, h1)) = seg.h_global {
        println!("threshold {:.4}  H0 {h0:.4}  H1 {h1:.4}  delta_H {:.4}", seg.threshold, h1 - h0);
    }
    if let Some(path) = &a.truth {
        let truth = io::read_pgm_mask(path)?;
        println!("score {:.4}", classification_score(&seg.labels, &truth)?);
    }
    Ok(())
}

fn bench(a: &BenchArgs, out: &Path) -> Result<()> {
    let mut cfg = a.experiment.load()?;
    if let Some(m) = a.max_iter {
        cfg.max_iter = m;
    }
    cfg.gap_tol = a.gap_tol.or(cfg.gap_tol);
    cfg.threads = a.threads.or(cfg.threads);
    log::info!(
        "config {}: N={}, {} realizations, {} lambda x {} alpha",
        cfg.id,
        cfg.n,
        cfg.realizations,
        cfg.lambda_grid.count,
        cfg.alpha_grid.count
    );
    let records = harness::run_config(&cfg)?;
    harness::save_tables(&records, out)?;
    if !records.is_empty() {
        for b in harness::best_over_grid(&records)? {
            println!(
                "{:<10} lambda {:<9.3} alpha {:<9} score {:.1} ± {:.1}%  delta_H {:.3} ± {:.3}",
                b.method,
                b.lambda,
                b.alpha.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into()),
                100.0 * b.score.mean,
                100.0 * b.score.sd,
                b.delta_h.mean,
                b.delta_h.sd
            );
        }
    }
    Ok(())
}

fn gap(a: &GapArgs, out: &Path) -> Result<()> {
    let an = load_and_analyze(&a.input, &a.octaves)?;
    let method = a.solve.method()?;
    let params = a.solve.params()?;
    let engines = match &a.engine {
        Some(e) => vec![e.parse::<Engine>()?],
        None => Engine::ALL.to_vec(),
    };
    for engine in engines {
        let (_, _, trace) = run_solver(&an, method, &params, engine)?;
        let path = out.join(format!("gap_{}_{}.csv", method.label().to_ascii_lowercase(), engine.name().to_ascii_lowercase()));
        trace.save_csv(&path)?;
        println!(
            "{:<6} {:>7} iterations  {}  final normalized gap {:.3e}",
            engine.to_string(),
            trace.iterations,
            trace.termination,
            trace.checkpoints.last().map(|c| c.gap_normalized).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn mu(a: &MuTableArgs, out: &Path) -> Result<()> {
    if a.jmax < 2 {
        bail!("--jmax must be at least 2");
    }
    let path = out.join("mu_table.csv");
    let mut text = String::from("j1,j2,mu,j_inv_norm\n");
    for e in mu_table(a.jmax) {
        text.push_str(&format!("{},{},{},{}\n", e.j1, e.j2, e.mu, e.j_inv_norm));
    }
    fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    print!("{text}");
    Ok(())
}
