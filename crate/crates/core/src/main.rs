//! Command-line front end: geodesic interpolation, path-energy
//! evaluation, gradient checking and SSIM metrics over PGM files.
//!
//! Exit codes: 0 success, 1 error, 2 geodesic ran out of iterations
//! (frames are still written). Every error prints its stable code token
//! on one line, then `error: <message>`, both on stderr.

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use ndarray::Array2;
use otpath::io::{self, RunConfig};
use otpath::{
    optimize_path, path_energy, path_energy_gradient_tol, path_energy_tol, ssim_sequence,
    w2_estimate, BoundaryCondition, DensityGrid, DensityPath, EnergyMode, Error, ObstacleMask,
    Result, SolverConfig, SsimParams,
};
use rand::{Rng, SeedableRng};
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "otpath", version, about = "Dynamic optimal transport on grayscale images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the path energy of a directory of PGM frames
    Energy(EnergyArgs),
    /// Optimize a geodesic interpolation between two images
    Geodesic(GeodesicArgs),
    /// Compare the analytic gradient with finite differences
    Gradcheck(GradcheckArgs),
    /// Adjacent-frame SSIM statistics of a directory of PGM frames
    Metrics(MetricsArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Balanced,
    Unbalanced,
}

/// Transport-mode flags shared by the energy/geodesic/gradcheck commands.
#[derive(Args)]
struct TransportArgs {
    /// Transport mode
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Source-term weight for unbalanced mode (requires --mode unbalanced)
    #[arg(long)]
    tau: Option<f64>,
    /// Boundary condition: dirichlet, neumann or periodic
    #[arg(long)]
    bc: Option<BoundaryCondition>,
    /// Obstacle mask: PGM whose nonzero pixels are walls
    #[arg(long)]
    obstacle: Option<PathBuf>,
}

#[derive(Args)]
struct EnergyArgs {
    /// Directory of consecutively numbered .pgm frames
    #[arg(long)]
    frames: PathBuf,
    #[command(flatten)]
    transport: TransportArgs,
    /// Config file merged under explicit flags
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GeodesicArgs {
    /// Source image (PGM)
    #[arg(long)]
    source: Option<PathBuf>,
    /// Target image (PGM)
    #[arg(long)]
    target: Option<PathBuf>,
    /// Output directory for frames and report.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of time steps T (default: from the centroid displacement)
    #[arg(long)]
    steps: Option<usize>,
    /// Mass-loss penalty weight β
    #[arg(long)]
    beta: Option<f64>,
    /// Downsample inputs to N×N before optimizing
    #[arg(long)]
    downsample: Option<usize>,
    /// Density floor ε
    #[arg(long)]
    eps: Option<f64>,
    /// Iteration budget
    #[arg(long)]
    max_iters: Option<usize>,
    /// Recorded in the run for reproducibility
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    transport: TransportArgs,
    /// Config file merged under explicit flags
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Grid side length (n ≤ 16)
    #[arg(long)]
    n: usize,
    /// Time steps (T ≤ 6)
    #[arg(long)]
    steps: usize,
    /// RNG seed for the random path
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    transport: TransportArgs,
    /// Perturb the analytic gradient (harness sanity hook)
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Args)]
struct MetricsArgs {
    /// Directory of consecutively numbered .pgm frames
    #[arg(long)]
    frames: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OTPATH_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                ExitCode::SUCCESS
            } else {
                // usage problems follow the same error contract as the
                // library: code token first, human text after
                eprintln!("ConfigError");
                eprintln!("{e}");
                ExitCode::from(1)
            };
        }
    };
    let outcome = match &cli.command {
        Command::Energy(args) => cmd_energy(args),
        Command::Geodesic(args) => cmd_geodesic(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Metrics(args) => cmd_metrics(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", e.code());
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Resolve mode/τ flags against the config; τ and the mode must agree.
fn resolve_mode(args: &TransportArgs, cfg: &RunConfig) -> Result<(ModeArg, Option<f64>)> {
    let mode = args.mode.or_else(|| {
        cfg.mode.as_deref().map(|m| match m {
            "unbalanced" => ModeArg::Unbalanced,
            _ => ModeArg::Balanced,
        })
    });
    let tau = args.tau.or(cfg.tau);
    match (mode.unwrap_or(ModeArg::Balanced), tau) {
        (ModeArg::Balanced, Some(_)) => Err(Error::Config(
            "--tau requires --mode unbalanced".into(),
        )),
        (ModeArg::Unbalanced, None) => Err(Error::Config(
            "unbalanced mode requires --tau".into(),
        )),
        (m, t) => Ok((m, t)),
    }
}

fn build_mode(kind: ModeArg, tau: Option<f64>, mask: Option<&ObstacleMask>) -> Result<EnergyMode> {
    let mode = match kind {
        ModeArg::Balanced => EnergyMode::balanced(),
        ModeArg::Unbalanced => EnergyMode::unbalanced(tau.expect("checked by resolve_mode"))?,
    };
    Ok(match mask {
        Some(m) => mode.with_obstacle(m.clone()),
        None => mode,
    })
}

fn read_mask_flag(args: &TransportArgs, cfg: &RunConfig, n: usize) -> Result<Option<ObstacleMask>> {
    args.obstacle
        .as_ref()
        .or(cfg.obstacle.as_ref())
        .map(|p| io::read_mask(p, n))
        .transpose()
}

/// Threshold at ε, pin obstacle cells, and (in balanced mode) rescale the
/// free cells about the ε floor to hit `target_mass`.
fn preprocess_endpoint(
    img: &DensityGrid,
    eps: f64,
    mask: Option<&ObstacleMask>,
    target_mass: Option<f64>,
) -> Result<DensityGrid> {
    let mut v = img.threshold(eps).into_values();
    let mut n_obs = 0usize;
    if let Some(m) = mask {
        for (x, &o) in v.iter_mut().zip(m.cells()) {
            if o {
                *x = eps;
                n_obs += 1;
            }
        }
    }
    if let Some(total) = target_mass {
        let n_free = v.len() - n_obs;
        let target_free = total - n_obs as f64 * eps;
        let base = n_free as f64 * eps;
        if !(target_free > base) {
            return Err(Error::Config(format!(
                "eps {eps} leaves no room for mass {total} on {n_free} free cells"
            )));
        }
        let free_sum: f64 = match mask {
            Some(m) => v.iter().zip(m.cells()).filter(|(_, &o)| !o).map(|(x, _)| x).sum(),
            None => v.sum(),
        };
        let denom = free_sum - base;
        let assign: Box<dyn Fn(f64) -> f64> = if denom > f64::MIN_POSITIVE {
            let factor = (target_free - base) / denom;
            Box::new(move |x| eps + (x - eps) * factor)
        } else {
            // flat image at the floor: spread the mass uniformly
            let fill = eps + (target_free - base) / n_free as f64;
            Box::new(move |_| fill)
        };
        match mask {
            Some(m) => {
                for (x, &o) in v.iter_mut().zip(m.cells()) {
                    if !o {
                        *x = assign(*x);
                    }
                }
            }
            None => v.mapv_inplace(&*assign),
        }
    }
    DensityGrid::new(v)
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn cmd_geodesic(args: &GeodesicArgs) -> Result<u8> {
    let cfg = load_config(args.config.as_ref())?;
    let source_file = require(args.source.clone().or(cfg.source.clone()), "source")?;
    let target_file = require(args.target.clone().or(cfg.target.clone()), "target")?;
    let out_dir = require(args.out.clone().or(cfg.out.clone()), "out")?;
    let eps = args.eps.or(cfg.eps).unwrap_or(1e-5);
    let bc = args.transport.bc.or(cfg.bc).unwrap_or_default();
    let beta = args.beta.or(cfg.beta).unwrap_or(0.0);
    let (kind, tau) = resolve_mode(&args.transport, &cfg)?;

    let mut source = io::read_image(&source_file)?;
    let mut target = io::read_image(&target_file)?;
    if let Some(nd) = args.downsample.or(cfg.downsample) {
        source = source.downsample(nd)?;
        target = target.downsample(nd)?;
    }
    if source.n() != target.n() {
        return Err(Error::ShapeMismatch(format!(
            "source is {0}x{0}, target is {1}x{1}",
            source.n(),
            target.n()
        )));
    }
    let mask = read_mask_flag(&args.transport, &cfg, source.n())?;
    let mode = build_mode(kind, tau, mask.as_ref())?;

    // balanced transport needs equal endpoint masses: rescale both to
    // their mean so neither image dominates the intensity scale
    let target_mass = mode.is_balanced().then(|| {
        let pinned = |g: &DensityGrid| {
            preprocess_endpoint(g, eps, mask.as_ref(), None).map(|p| p.mass())
        };
        Ok::<f64, Error>((pinned(&source)? + pinned(&target)?) / 2.0)
    });
    let target_mass = target_mass.transpose()?;
    source = preprocess_endpoint(&source, eps, mask.as_ref(), target_mass)?;
    target = preprocess_endpoint(&target, eps, mask.as_ref(), target_mass)?;

    let solver = SolverConfig {
        steps: args.steps.or(cfg.steps),
        eps,
        bc,
        mode,
        beta,
        max_iters: args.max_iters.or(cfg.max_iters).unwrap_or(500),
        step0: cfg.step0.unwrap_or(1.0),
        tol_rel: cfg.tol_rel.unwrap_or(1e-6),
        seed: args.seed.or(cfg.seed).unwrap_or(0),
    };
    solver.validate()?;

    let res = optimize_path(&source, &target, &solver)?;
    let t_used = res.path.steps();
    info!(
        "geodesic: T={t_used} J={:e} iterations={} converged={}",
        res.j_final, res.iterations, res.converged
    );
    io::write_frames(&res.path, &out_dir, "frame")?;
    let seq = ssim_sequence(&res.path, &SsimParams::default())?;
    let w2 = w2_estimate(&res.report, t_used);
    io::write_report(&res.report, &res.path, &seq, w2, &out_dir.join("report.csv"))?;

    println!("T = {t_used}");
    println!("J = {}", fmt(res.j_final));
    println!("iterations = {}", res.iterations);
    println!("converged = {}", res.converged);
    Ok(if res.converged { 0 } else { 2 })
}

fn cmd_energy(args: &EnergyArgs) -> Result<u8> {
    let cfg = load_config(args.config.as_ref())?;
    let raw = io::read_frames(&args.frames)?;
    let eps = cfg.eps.unwrap_or(1e-5);
    let bc = args.transport.bc.or(cfg.bc).unwrap_or_default();
    let (kind, tau) = resolve_mode(&args.transport, &cfg)?;
    let mask = read_mask_flag(&args.transport, &cfg, raw.n())?;
    let mode = build_mode(kind, tau, mask.as_ref())?;

    // evaluate the frames as they are, only floored at ε (quantized
    // frames legitimately contain zeros)
    let path = DensityPath::new(raw.into_slices().iter().map(|s| s.threshold(eps)).collect())?;
    let report = path_energy(&path, bc, &mode)?;
    let seq = ssim_sequence(&path, &SsimParams::default())?;
    let w2 = w2_estimate(&report, path.steps());
    io::write_report(&report, &path, &seq, w2, &args.frames.join("energy.csv"))?;
    println!("J = {}", fmt(report.j));
    Ok(0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<u8> {
    if args.n < 2 || args.n > 16 {
        return Err(Error::Config(format!("--n must be in [2, 16], got {}", args.n)));
    }
    if args.steps < 2 || args.steps > 6 {
        return Err(Error::Config(format!(
            "--steps must be in [2, 6], got {}",
            args.steps
        )));
    }
    let cfg = RunConfig::default();
    let bc = args.transport.bc.unwrap_or_default();
    let (kind, tau) = resolve_mode(&args.transport, &cfg)?;
    let mask = read_mask_flag(&args.transport, &cfg, args.n)?;
    let mode = build_mode(kind, tau, mask.as_ref())?;

    let eps = 1e-5;
    let n = args.n;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let mut raw: Vec<Array2<f64>> = (0..=args.steps)
        .map(|_| Array2::from_shape_fn((n, n), |_| 0.2 + 0.8 * rng.gen::<f64>()))
        .collect();
    if let Some(m) = &mask {
        for slice in &mut raw {
            for (x, &o) in slice.iter_mut().zip(m.cells()) {
                if o {
                    *x = eps;
                }
            }
        }
    }
    if mode.is_balanced() {
        let m0 = raw[0].sum();
        for slice in &mut raw {
            let factor = m0 / slice.sum();
            slice.mapv_inplace(|v| v * factor);
        }
    }
    let path_of = |raw: &[Array2<f64>]| -> Result<DensityPath> {
        DensityPath::new(
            raw.iter()
                .map(|v| DensityGrid::new(v.clone()))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    let path = path_of(&raw)?;
    let mut analytic = path_energy_gradient_tol(&path, bc, &mode, 1e-12)?.slices;
    if args.corrupt_gradient {
        analytic[0][(0, 0)] += 1e-3;
    }

    let h = 1e-5;
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for t in 1..args.steps {
        for i in 0..n {
            for j in 0..n {
                if mask.as_ref().is_some_and(|m| m.is_obstacle(i, j)) {
                    continue;
                }
                let mut plus = raw.clone();
                plus[t][(i, j)] += h;
                let mut minus = raw.clone();
                minus[t][(i, j)] -= h;
                let jp = path_energy_tol(&path_of(&plus)?, bc, &mode, 1e-12)?.j;
                let jm = path_energy_tol(&path_of(&minus)?, bc, &mode, 1e-12)?.j;
                let fd = (jp - jm) / (2.0 * h);
                err = err.max((analytic[t - 1][(i, j)] - fd).abs());
                scale = scale.max(fd.abs());
            }
        }
    }
    let rel = err / scale.max(1e-12);
    println!("max relative error = {rel:.3e}");
    Ok(if rel <= 1e-5 { 0 } else { 1 })
}

fn cmd_metrics(args: &MetricsArgs) -> Result<u8> {
    let path = io::read_frames(&args.frames)?;
    let seq = ssim_sequence(&path, &SsimParams::default())?;
    let mut csv = String::from("pair,ssim\n");
    for (t, s) in seq.per_pair.iter().enumerate() {
        println!("ssim[{t}] = {}", fmt(*s));
        csv.push_str(&format!("{t},{}\n", fmt(*s)));
    }
    println!("mean = {}", fmt(seq.mean));
    println!("std = {}", fmt(seq.std));
    csv.push_str(&format!("mean,{}\nstd,{}\n", fmt(seq.mean), fmt(seq.std)));
    fs::write(args.frames.join("metrics.csv"), csv)?;
    Ok(0)
}
