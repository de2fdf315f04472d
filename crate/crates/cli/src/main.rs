//! Command-line front end: periodic solves, stability marches, operator and
//! cycle certificates, and the `verify` suites.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kinetics_core::characteristics::{
    cycle_measure_estimates, CycleSettings, WallForce, MC_STEPS_PER_PERIOD,
};
use kinetics_core::collision::{
    coercivity_floor, gamma_bound_constant, k1_ratio, nu_min, verify_k2_bound, GammaMethod,
    GammaOperator, K1_CONSTANT,
};
use kinetics_core::config::RunConfig;
use kinetics_core::grid::{read_snapshot, write_snapshot, DistributionField, Normalization};
use kinetics_core::report;
use kinetics_core::solvers::{nonlinear_periodic_solve, PeriodicSolution, SolverContext};
use kinetics_core::stability::{
    decay_rate_fit, ibvp_march, initial_perturbation, positivity_check, MarchMode,
};
use kinetics_core::wall::FrameClock;
use kinetics_core::KineticsError;

mod verify;

#[derive(Parser)]
#[command(
    name = "kinetics",
    version,
    about = "Time-periodic rarefied gas between a fixed and an oscillating wall"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// Flat JSON config file (see `print-config`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    period: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// Velocity nodes per axis.
    #[arg(long)]
    nv: Option<usize>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    vmax: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    /// Relative tolerance of the linear fixed points.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the time-periodic state.
    Steady {
        #[command(flatten)]
        common: Common,
        /// Snapshot of F_per.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-iteration CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// March a perturbation of the periodic state and fit its decay.
    Stability {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        periods: Option<usize>,
        /// Initial amplitude as a multiple of |w f_per| (of 1 when delta = 0).
        #[arg(long)]
        f0_amplitude: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-slice CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reuse a periodic state written by `steady --out`.
        #[arg(long)]
        periodic: Option<PathBuf>,
    },
    /// Run a suite of property checks.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Suite::Trivial)]
        suite: Suite,
    },
    /// Collision-operator certificates.
    Kernels {
        #[command(flatten)]
        common: Common,
        /// Random pairs for the pointwise kernel bound.
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
    },
    /// Monte-Carlo estimate of the back-time cycle measure.
    Cycles {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t0: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Cycle counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Print the effective configuration.
    PrintConfig {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Trivial,
    Derived,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<KineticsError>().is_some_and(|k| {
                matches!(k, KineticsError::Config { .. } | KineticsError::Json(_))
            });
            ExitCode::from(if config || e.is::<ConfigFailure>() {
                2
            } else {
                1
            })
        }
    }
}

/// Marks errors raised while assembling the configuration.
#[derive(Debug)]
struct ConfigFailure(String);

impl std::fmt::Display for ConfigFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigFailure {}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            RunConfig::load(p).map_err(|e| ConfigFailure(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut cfg.delta, common.delta);
    set(&mut cfg.period, common.period);
    set(&mut cfg.beta, common.beta);
    set(&mut cfg.q, common.q);
    set(&mut cfg.v_max, common.vmax);
    set(&mut cfg.tol_fix, common.tol);
    if let Some(v) = common.nv {
        cfg.n_v = v;
    }
    if let Some(v) = common.nx {
        cfg.n_x = v;
    }
    if let Some(v) = common.nt {
        cfg.n_t = v;
    }
    if let Some(v) = common.max_iter {
        cfg.max_iter = v;
    }
    if common.lambda0.is_some() {
        cfg.lambda0 = common.lambda0;
    }
    if let Some(v) = common.threads {
        cfg.threads = v;
    }
    if let Ok(v) = std::env::var("KINETICS_THREADS") {
        cfg.threads = v.parse().map_err(|_| {
            ConfigFailure(format!("KINETICS_THREADS: `{v}` is not a positive integer"))
        })?;
    }
    cfg.validate().map_err(|e| ConfigFailure(e.to_string()))?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Steady {
            common,
            out,
            report,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.out = out.or(cfg.out);
            cfg.report = report.or(cfg.report);
            kinetics_core::init_threads(cfg.threads);
            steady(&cfg)
        }
        Command::Stability {
            common,
            periods,
            f0_amplitude,
            seed,
            out,
            periodic,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.periods = periods.unwrap_or(cfg.periods);
            cfg.f0_amplitude = f0_amplitude.unwrap_or(cfg.f0_amplitude);
            cfg.stability_seed = seed.unwrap_or(cfg.stability_seed);
            cfg.out = out.or(cfg.out);
            cfg.validate().map_err(|e| ConfigFailure(e.to_string()))?;
            kinetics_core::init_threads(cfg.threads);
            stability(&cfg, periodic.as_deref())
        }
        Command::Verify { common, suite } => {
            let cfg = load_config(&common)?;
            kinetics_core::init_threads(cfg.threads);
            let checks = verify::run_suite(suite)?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {:<52} {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                ok &= c.pass;
            }
            println!(
                "{} of {} checks passed",
                checks.iter().filter(|c| c.pass).count(),
                checks.len()
            );
            Ok(ok)
        }
        Command::Kernels { common, pairs } => {
            let cfg = load_config(&common)?;
            kinetics_core::init_threads(cfg.threads);
            kernels(&cfg, pairs)
        }
        Command::Cycles {
            common,
            t0,
            samples,
            seed,
            k,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.cycles_t0 = t0.unwrap_or(cfg.cycles_t0);
            cfg.cycles_samples = samples.unwrap_or(cfg.cycles_samples);
            cfg.cycles_seed = seed.unwrap_or(cfg.cycles_seed);
            if let Some(k) = k {
                cfg.cycles_k = k;
            }
            cfg.validate().map_err(|e| ConfigFailure(e.to_string()))?;
            kinetics_core::init_threads(cfg.threads);
            cycles(&cfg)
        }
        Command::PrintConfig { common } => {
            println!("{}", load_config(&common)?.to_json());
            Ok(true)
        }
    }
}

fn context(cfg: &RunConfig) -> anyhow::Result<SolverContext> {
    Ok(SolverContext::new(
        &cfg.wall()?,
        &cfg.grid(),
        cfg.weight()?,
        cfg.solver_settings(),
    )?)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn steady(cfg: &RunConfig) -> anyhow::Result<bool> {
    let ctx = context(cfg)?;
    let (sol, rep) = nonlinear_periodic_solve(&ctx)?;
    let full = ctx.full_distribution(&sol.f);
    let pos = positivity_check(&ctx, &full);
    print!("{}", report::solver_summary(&rep));
    println!(
        "min F_per           {:.6e} (|v| = {:.3}) -> {}",
        pos.min,
        pos.speed_at_min,
        if pos.pass { "pass" } else { "FAIL" }
    );
    if let Some(p) = &cfg.out {
        let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        let mut w = BufWriter::new(file);
        write_snapshot(&mut w, &full, &ctx.space, &ctx.wf)?;
        w.flush()?;
    }
    if let Some(p) = &cfg.report {
        write_text(p, &report::solver_csv(&rep))?;
    }
    Ok(pos.pass)
}

/// Reads an `F` snapshot and converts it to the perturbation `f`.
fn load_periodic(ctx: &SolverContext, path: &Path) -> anyhow::Result<PeriodicSolution> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (header, data) = read_snapshot(BufReader::new(file))?;
    let (n_t, n_x, nv) = (ctx.st.n_t(), ctx.st.n_x(), ctx.space.len());
    let n_full = ctx.space.grid().n_full();
    if header.dims != [n_t, n_x, n_full] || header.v_max != ctx.space.grid().v_max() {
        bail!(
            "snapshot grid {:?} (v_max {}) does not match the configured grid",
            header.dims,
            header.v_max
        );
    }
    if header.normalization != Normalization::Raw {
        bail!("snapshot does not hold a raw distribution");
    }
    let sm = ctx.space.sqrt_mu();
    let f = DistributionField::from_fn(n_t, n_x, nv, |n, i, k| {
        let big = data[(n * n_x + i) * n_full + ctx.space.full_of_node(k)];
        (big - sm[k] * sm[k]) / sm[k]
    });
    Ok(PeriodicSolution {
        f,
        wall_out: ctx.zero_trace(),
        inflow: ctx.zero_trace(),
    })
}

fn stability(cfg: &RunConfig, periodic: Option<&Path>) -> anyhow::Result<bool> {
    let ctx = context(cfg)?;
    let sol = match periodic {
        Some(p) => load_periodic(&ctx, p)?,
        None => nonlinear_periodic_solve(&ctx)?.0,
    };
    let scale = ctx.weighted_sup(&sol.f);
    let base = if scale > 0.0 { scale } else { 1.0 };
    let settings = cfg.stability_settings();
    let f0 = initial_perturbation(&ctx, cfg.f0_amplitude * base, settings.seed);
    let mode = MarchMode::Perturbation {
        periodic: &sol,
        zero_mass: true,
    };
    let run = ibvp_march(&ctx, mode, &f0, cfg.periods, &settings)?;
    let fit = decay_rate_fit(&run);
    let pos = positivity_check(&ctx, &ctx.full_distribution(&sol.f));
    if let Some(p) = &cfg.out {
        write_text(p, &report::stability_csv(&run))?;
    }
    print!(
        "{}",
        report::stability_summary(&run, fit.as_ref().ok(), Some(&pos))
    );
    let fit_ok = match &fit {
        Ok(f) => f.lambda1 > 0.0,
        Err(e) => {
            println!("decay fit: {e}");
            false
        }
    };
    Ok(fit_ok && pos.pass)
}

fn kernels(cfg: &RunConfig, pairs: usize) -> anyhow::Result<bool> {
    let ctx = context(cfg)?;
    let table = ctx.table();
    let symmetry = table.symmetry_defect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.cycles_seed);
    let vm = cfg.v_max;
    let mut k1 = 0.0f64;
    for _ in 0..pairs {
        let v = [
            rng.gen_range(-vm..vm),
            rng.gen_range(-vm..vm),
            rng.gen_range(-vm..vm),
        ];
        let u = [
            rng.gen_range(-vm..vm),
            rng.gen_range(-vm..vm),
            rng.gen_range(-vm..vm),
        ];
        if let Ok(r) = k1_ratio(v, u) {
            k1 = k1.max(r);
        }
    }
    let k2 = verify_k2_bound(&ctx.space, &ctx.wf);
    let c0 = coercivity_floor(table, &ctx.space);
    let grid_gamma = GammaOperator::with_method(&ctx.space, cfg.m_omega, GammaMethod::Grid)?;
    let lin: Vec<f64> = ctx
        .space
        .nodes()
        .iter()
        .zip(ctx.space.sqrt_mu())
        .map(|(v, s)| (0.3 + 0.5 * v[0]) * s)
        .collect();
    let defects = grid_gamma.conservation_defects(&grid_gamma.gamma(&lin, &lin));
    let max_defect = defects.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let g_const = gamma_bound_constant(ctx.gamma(), &ctx.wf, 50, cfg.cycles_seed);
    println!("nu_min                  {:.6e}", nu_min());
    println!("|K|_L2                  {:.6e}", ctx.k_norm());
    println!("symmetry defect         {symmetry:.3e}");
    println!("k1 max ratio            {k1:.6e} (constant {K1_CONSTANT:.6e})");
    println!("k2 max ratio            {:.6e}", k2.max_ratio);
    println!("coercivity floor        {c0:.6e}");
    println!("Gamma invariant defects {defects:?}");
    println!("Gamma bound constant    {g_const:.6e}");
    Ok(symmetry <= 1e-10 && k1 <= K1_CONSTANT * (1.0 + 1e-12) && c0 > 0.0 && max_defect <= 1e-5)
}

fn cycles(cfg: &RunConfig) -> anyhow::Result<bool> {
    let clock = FrameClock::new(&cfg.wall()?);
    let force = WallForce { clock: &clock };
    let settings = CycleSettings {
        weight: cfg.weight()?,
        steps_per_period: MC_STEPS_PER_PERIOD,
        ..CycleSettings::default()
    };
    let est = cycle_measure_estimates(
        &force,
        cfg.cycles_t0,
        &cfg.cycles_k,
        cfg.cycles_samples,
        cfg.cycles_seed,
        &settings,
    );
    println!("k,estimate,stderr,samples");
    for e in &est {
        println!("{},{:e},{:e},{}", e.k, e.estimate, e.stderr, e.samples);
    }
    // Non-increasing in k within three standard errors.
    Ok(est
        .windows(2)
        .all(|w| w[1].estimate <= w[0].estimate + 3.0 * (w[0].stderr + w[1].stderr)))
}
