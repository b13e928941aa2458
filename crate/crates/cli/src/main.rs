use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use epsqueeze::ep::{SolveOptions, DEFAULT_TOL};
use epsqueeze::model::annihilation_poles;
use epsqueeze::oracle::{validate, McOptions};
use epsqueeze::scenarios::{read_csv, sweep_config, write_csv, SweepOptions};
use epsqueeze::{
    build_m, classify_degeneracy, emit_config, fit_slope, parse_config, solve_ep, Complex64, EpReport, Field,
    FisherOptions, FreeParam, PhiChoice, Scenario, ScenarioName, SensorConfig, SweepRecord, ThetaGrid, Verdict,
};

#[derive(Parser)]
#[command(name = "epsqueeze", version, about = "Precision bounds for squeezed non-Hermitian sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues of the quadrature matrix and the mode poles.
    Eig {
        #[arg(long)]
        config: PathBuf,
        /// Perturbation; defaults to the value in the file.
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Quantum Fisher information over a θ grid.
    Qfi {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Classical Fisher information of a detection scheme over a θ grid.
    Cfi {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        detection: Detection,
        /// Homodyne angle in radians, or `auto` to optimise per point.
        #[arg(long, default_value = "auto")]
        phi: String,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Exceptional-point tools.
    Ep {
        #[command(subcommand)]
        command: EpCommand,
    },
    /// Runs a preset scenario.
    Sweep {
        #[arg(long)]
        scenario: ScenarioName,
        /// Replaces the preset grid.
        #[arg(long)]
        theta_grid: Option<ThetaGrid>,
        #[arg(long)]
        out: PathBuf,
        /// Exit with status 1 if any row failed.
        #[arg(long)]
        strict: bool,
    },
    /// Fits a log–log slope to a sweep CSV.
    Slope {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "crb")]
        field: Field,
        /// Fit window `LO:HI` in θ.
        #[arg(long)]
        window: String,
    },
    /// Time-domain cross-checks.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Prints a configuration in canonical form.
    Emit {
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<ScenarioName>,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// `log:LO:HI:PTS`
    #[arg(long)]
    theta_grid: ThetaGrid,
    #[arg(long)]
    out: PathBuf,
    /// Exit with status 1 if any row failed; singular covariances are not regularised.
    #[arg(long)]
    strict: bool,
    /// Permit grids below the precision floor.
    #[arg(long)]
    allow_below_floor: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Detection {
    Het,
    Hom,
}

#[derive(Subcommand)]
enum EpCommand {
    /// Classifies the configuration at θ = 0.
    ///
    /// Exit status: 0 EP on threshold, 2 diabolic, 3 not degenerate,
    /// 4 on threshold without an EP.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Adjusts two parameters until the EP conditions hold.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Two of eps1_abs, eps2_abs, g, gamma01, gamma02.
        #[arg(long, value_delimiter = ',', required = true)]
        free: Vec<FreeParam>,
        /// Starting values `A,B` for the two parameters.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        guess: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Compares the frequency-domain results with time-domain simulations.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2000)]
        trajectories: usize,
        #[arg(long, default_value_t = 5e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &Path) -> Result<SensorConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("parsing {}", path.display()))
}

fn save(records: &[SweepRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf)?;
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// Writes the sweep and reports failed rows; in strict mode they fail the run.
fn finish(records: &[SweepRecord], path: &Path, strict: bool) -> Result<ExitCode> {
    save(records, path)?;
    let failed = records.iter().filter(|r| r.has_error()).count();
    if failed > 0 {
        eprintln!("{failed} of {} rows failed", records.len());
        if strict {
            return Ok(ExitCode::from(1));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_grid(config: &SensorConfig, args: &SweepArgs, mut opts: SweepOptions) -> Result<ExitCode> {
    opts.fisher = FisherOptions { strict: args.strict, ..opts.fisher };
    opts.allow_below_floor = args.allow_below_floor;
    let records = sweep_config(config, &args.theta_grid, &opts)?;
    finish(&records, &args.out, args.strict)
}

fn parse_phi(s: &str) -> Result<PhiChoice> {
    if s == "auto" {
        return Ok(PhiChoice::Auto);
    }
    let phi: f64 = s.parse().map_err(|_| anyhow!("--phi expects `auto` or an angle in radians, got `{s}`"))?;
    if !phi.is_finite() {
        bail!("--phi must be finite");
    }
    Ok(PhiChoice::Fixed(phi))
}

fn parse_window(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| anyhow!("--window expects LO:HI, got `{s}`"))?;
    let (lo, hi): (f64, f64) = (lo.parse()?, hi.parse()?);
    if !(lo > 0.0 && hi > lo) {
        bail!("--window needs 0 < LO < HI");
    }
    Ok((lo, hi))
}

fn fmt_c(z: Complex64) -> String {
    format!("{:>+.10e} {:>+.10e}i", z.re, z.im)
}

fn eig(config: &SensorConfig) -> Result<String> {
    let m = build_m::<f64>(config)?.to_nalgebra();
    let mut ev: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let mut s = String::new();
    writeln!(s, "theta = {:e}", config.theta)?;
    writeln!(s, "quadrature matrix eigenvalues:")?;
    for z in ev {
        writeln!(s, "  {}", fmt_c(z))?;
    }
    writeln!(s, "mode poles:")?;
    for z in annihilation_poles(config) {
        writeln!(s, "  {}", fmt_c(z))?;
    }
    Ok(s)
}

fn report_text(r: &EpReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "verdict          {}", r.verdict);
    let _ = writeln!(s, "cond1 residual   {:e}", r.cond1_residual);
    let _ = writeln!(s, "cond2 residual   {:e}", r.cond2_residual);
    let _ = writeln!(s, "det slope        {:.6}", r.det_slope);
    let _ = writeln!(s, "eigenvalue clusters (value, algebraic, geometric):");
    for c in &r.clusters {
        let _ = writeln!(s, "  {}  {} {}", fmt_c(c.value), c.algebraic, c.geometric);
    }
    if let (Some(a), Some(b)) = (r.jordan_a, r.jordan_b) {
        let _ = writeln!(s, "jordan a         {}", fmt_c(a));
        let _ = writeln!(s, "jordan b         {}", fmt_c(b));
    }
    s
}

fn exit_for(v: Verdict) -> ExitCode {
    ExitCode::from(match v {
        Verdict::EpPo => 0,
        Verdict::Diabolic => 2,
        Verdict::NotDegenerate => 3,
        Verdict::ThresholdOnly => 4,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Eig { config, theta } => {
            let mut c = load(&config)?;
            if let Some(t) = theta {
                c = c.with_theta(t);
            }
            print!("{}", eig(&c)?);
        }
        Command::Qfi { config, sweep } => {
            let opts = SweepOptions { heterodyne: false, homodyne: None, ..Default::default() };
            return run_grid(&load(&config)?, &sweep, opts);
        }
        Command::Cfi { config, detection, phi, sweep } => {
            let opts = match detection {
                Detection::Het => SweepOptions { homodyne: None, ..Default::default() },
                Detection::Hom => SweepOptions { heterodyne: false, homodyne: Some(parse_phi(&phi)?), ..Default::default() },
            };
            return run_grid(&load(&config)?, &sweep, opts);
        }
        Command::Ep { command: EpCommand::Check { config, tol } } => {
            let r = classify_degeneracy(&load(&config)?, tol)?;
            print!("{}", report_text(&r));
            return Ok(exit_for(r.verdict));
        }
        Command::Ep { command: EpCommand::Solve { config, free, guess } } => {
            let (Ok(free), Ok(guess)) = (<[FreeParam; 2]>::try_from(free), <[f64; 2]>::try_from(guess)) else {
                bail!("--free and --guess each take exactly two comma-separated values");
            };
            let template = load(&config)?;
            let s = solve_ep(&template, free, guess, &SolveOptions::default())?;
            println!("# {} Newton steps", s.iterations);
            for p in free {
                println!("# {} = {:?}", p.as_str(), p.get(&s.config));
            }
            for line in report_text(&s.report).lines() {
                println!("# {line}");
            }
            print!("{}", emit_config(&s.config));
        }
        Command::Sweep { scenario, theta_grid, out, strict } => {
            let mut s = Scenario::preset(scenario);
            if let Some(g) = theta_grid {
                s = s.with_grid(g)?;
            }
            let opts = SweepOptions { fisher: FisherOptions { strict, ..Default::default() }, ..Default::default() };
            let records = sweep_config(&s.config, &s.grid, &opts)?;
            return finish(&records, &out, strict);
        }
        Command::Slope { input, field, window } => {
            let file = std::fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let records = read_csv(file)?;
            let fit = fit_slope(&records, field, parse_window(&window)?)?;
            println!("slope {:.6}", fit.slope);
            println!("r2 {:.6}", fit.r_squared);
            println!("points {}", fit.points);
        }
        Command::Oracle { command: OracleCommand::Validate { config, trajectories, dt, seed } } => {
            let checks = validate(&load(&config)?, &McOptions { trajectories, dt, seed, ..Default::default() });
            println!("{:<26} {:>12} {:>10}  result", "check", "error", "tolerance");
            for c in &checks {
                let status = if c.passed { "pass" } else { "FAIL" };
                println!("{:<26} {:>12.3e} {:>10.1e}  {status}", c.name, c.error, c.tolerance);
                if let Some(n) = &c.note {
                    println!("    {n}");
                }
            }
            if checks.iter().any(|c| !c.passed) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Emit { config, scenario } => {
            let c = match (config, scenario) {
                (Some(p), _) => load(&p)?,
                (None, Some(s)) => Scenario::preset(s).config,
                (None, None) => unreachable!("clap requires one of --config and --scenario"),
            };
            print!("{}", emit_config(&c));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EPSQUEEZE_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow!("EPSQUEEZE_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("EPSQUEEZE_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
