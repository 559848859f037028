use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgepump::harness::{
    disorder_ensemble, run_figure_recipe, scan_failure_seed, sweep_pump_time, t_star_vs_l,
    PerSiteGrid, PumpSetup, Recipe, RecipeOptions, RunConfig,
};
use edgepump::lzs::{lzs_evolve, LzsParams};
use edgepump::propagate::DtPolicy;
use edgepump::spectra::{band_diagram, linspace, Branch};
use edgepump::{Error, Result};

#[derive(Parser)]
#[command(name = "edgepump", version, about = "Edge-state pumping in the off-diagonal AAH chain")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Disorder seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Fixed time step (default: halve until converged).
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Number of stored samples per trajectory.
    #[arg(long, global = true)]
    samples: Option<usize>,
}

#[derive(Args)]
struct ChainArgs {
    /// TOML run configuration; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sites: Option<usize>,
    /// Disorder strength W.
    #[arg(long)]
    disorder: Option<f64>,
    /// Pump time T.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    theta_start: Option<f64>,
    #[arg(long)]
    theta_end: Option<f64>,
    /// Tracked levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Excited,
    Ground,
}

#[derive(Subcommand)]
enum Cmd {
    /// Band diagram over one period of θ.
    Bands {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, default_value_t = 361)]
        points: usize,
    },
    /// One pump run with occupation traces.
    Evolve {
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Two-level LZS model over one period.
    Lzs {
        #[arg(long, default_value_t = 0.4)]
        g: f64,
        #[arg(long, default_value_t = 4.0)]
        a: f64,
        #[arg(long, default_value_t = 20.0)]
        period: f64,
        #[arg(long, value_enum, default_value_t = BranchArg::Excited)]
        branch: BranchArg,
    },
    /// Final occupations against pump time.
    SweepT {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, default_value_t = 500.0)]
        t_min: f64,
        #[arg(long, default_value_t = 10000.0)]
        t_max: f64,
        #[arg(long, default_value_t = 96)]
        t_points: usize,
    },
    /// Optimum pump time T* against chain length.
    ScaleL {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, value_delimiter = ',', default_value = "21,34,42,55,89")]
        lengths: Vec<usize>,
        /// Pump-time grid in units of L.
        #[arg(long, default_value_t = 10.0)]
        per_site_min: f64,
        #[arg(long, default_value_t = 80.0)]
        per_site_max: f64,
        #[arg(long, default_value_t = 71)]
        per_site_points: usize,
    },
    /// Disorder ensemble over a seed range.
    Ensemble {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = 20)]
        count: u64,
        /// Stop at the first seed showing the anticrossing failure.
        #[arg(long)]
        scan_failure: bool,
    },
    /// Data bundle for a named figure (fig1b, fig1d, fig2, fig3, fig4, fig5).
    Recipe { name: String },
}

fn config(common: &Common, a: &ChainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.sites {
        cfg = cfg.with_sites(s);
    }
    if let Some(w) = a.disorder {
        cfg.disorder = w;
    }
    if let Some(t) = a.duration {
        cfg.duration = t;
    }
    if a.theta_start.is_some() {
        cfg.theta_start = a.theta_start;
    }
    if a.theta_end.is_some() {
        cfg.theta_end = a.theta_end;
    }
    if a.levels.is_some() {
        cfg.levels = a.levels.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.dt.is_some() {
        cfg.dt = common.dt;
    }
    if let Some(n) = common.samples {
        cfg.samples = n;
    }
    cfg.out_dir = common.out_dir.clone();
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    println!("{}", path.display());
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, v: &T) -> Result<()> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.cmd {
        Cmd::Bands { chain, points } => {
            let cfg = config(c, &chain)?;
            let d = band_diagram(
                &cfg.model_params(),
                cfg.disorder_realization().as_ref(),
                &linspace(0.0, std::f64::consts::TAU, points),
            )?;
            d.write_csv(create(&cfg.out_dir, "bands.csv")?)?;
        }
        Cmd::Evolve { chain } => {
            let cfg = config(c, &chain)?;
            let setup = PumpSetup::new(&cfg)?;
            let run = setup.run(cfg.duration)?;
            run.write_csv(create(&cfg.out_dir, "trajectory.csv")?)?;
            write_json(
                &cfg.out_dir,
                "run.json",
                &serde_json::json!({
                    "config": cfg,
                    "window": run.window,
                    "convergence": run.report,
                    "max_norm_drift": run.trajectory.max_norm_drift(),
                }),
            )?;
            for (l, r) in run.occupations.levels.iter().zip(run.occupations.final_values()) {
                println!("rho_{l}(T) = {r:.6}");
            }
        }
        Cmd::Lzs { g, a, period, branch } => {
            let p = LzsParams::new(g, a, period)?;
            let branch = match branch {
                BranchArg::Excited => Branch::Positive,
                BranchArg::Ground => Branch::Negative,
            };
            let policy = c.dt.map_or(DtPolicy::default(), |dt| DtPolicy::Fixed { dt });
            let s = lzs_evolve(&p, None, branch, policy, c.samples.unwrap_or(2001))?;
            s.write_csv(create(&c.out_dir, "lzs.csv")?)?;
            println!("rho(T) = {:.6}", s.final_rho());
        }
        Cmd::SweepT {
            chain,
            t_min,
            t_max,
            t_points,
        } => {
            let mut cfg = config(c, &chain)?;
            cfg.dt = cfg.dt.or(Some(edgepump::harness::SWEEP_DT));
            let s = sweep_pump_time(&cfg, &linspace(t_min, t_max, t_points))?;
            s.write_csv(create(&cfg.out_dir, "sweep.csv")?)?;
            write_json(&cfg.out_dir, "sweep.json", &s)?;
            if let Some(t) = s.t_star {
                println!("T* = {t:.2} (rho = {:.6})", s.t_star_rho.unwrap_or(f64::NAN));
            }
        }
        Cmd::ScaleL {
            chain,
            lengths,
            per_site_min,
            per_site_max,
            per_site_points,
        } => {
            let mut cfg = config(c, &chain)?;
            cfg.dt = cfg.dt.or(Some(edgepump::harness::SWEEP_DT));
            let grid = PerSiteGrid {
                min: per_site_min,
                max: per_site_max,
                points: per_site_points,
            };
            let rec = t_star_vs_l(&cfg, &lengths, &grid)?;
            write_json(&cfg.out_dir, "scaling.json", &rec)?;
            for p in &rec.points {
                println!("L = {}: T* = {:?} {:?}", p.sites, p.t_star, p.flag);
            }
            println!(
                "slope = {:.4}, intercept = {:.2}, R^2 = {:.5}",
                rec.slope, rec.intercept, rec.r_squared
            );
        }
        Cmd::Ensemble {
            chain,
            first_seed,
            count,
            scan_failure,
        } => {
            let mut cfg = config(c, &chain)?;
            cfg.dt = cfg.dt.or(Some(edgepump::harness::SWEEP_DT));
            let seeds = first_seed..first_seed + count;
            if scan_failure {
                match scan_failure_seed(&cfg, seeds, cfg.duration)? {
                    Some(m) => {
                        write_json(&cfg.out_dir, "failure_seed.json", &m)?;
                        println!("seed {}: rho = {:?}, min gap = {:?}", m.seed, m.final_rho, m.min_gap);
                    }
                    None => println!("no failing seed in range"),
                }
            } else {
                let seeds: Vec<u64> = seeds.collect();
                let rec = disorder_ensemble(&cfg, &seeds, cfg.duration)?;
                write_json(&cfg.out_dir, "ensemble.json", &rec)?;
                for m in &rec.members {
                    println!(
                        "seed {:>4}: rho = {:?}, min gap = {:?}, peaks = {:?}",
                        m.seed,
                        m.final_rho,
                        m.min_gap,
                        m.pair_peaks.iter().map(|p| (p.theta, p.value)).collect::<Vec<_>>()
                    );
                }
                println!(
                    "median = {:.4}, quartiles = ({:.4}, {:.4}), clean min gap = {:e}, xi = {:.1}",
                    rec.median, rec.lower_quartile, rec.upper_quartile, rec.clean_min_gap, rec.xi
                );
            }
        }
        Cmd::Recipe { name } => {
            let recipe: Recipe = name.parse()?;
            let opts = RecipeOptions {
                out_dir: c.out_dir.clone(),
                dt: c.dt,
                samples: c.samples.unwrap_or(501),
                seed: c.seed,
            };
            let dir = run_figure_recipe(recipe, &opts)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}
