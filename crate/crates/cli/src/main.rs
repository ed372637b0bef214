use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use holpower::analytics::{build_sigma, concave_envelope, sigma_bounds};
use holpower::dp::{bellman_residual, solve};
use holpower::output::{g12, write_envelope, write_events, write_policy, write_sigma, write_sim_rows, write_values, SimRow};
use holpower::policy::Policy;
use holpower::scenario::{find_canned, Scenario, CANNED};
use holpower::sim::{replication_seed, run_batch, run_trajectory};
use holpower::verify::{global_checks, verify_scenario, Check};

/// Head-of-line deadline power control: exact DP, semi-analytic tables,
/// heuristic controllers and Monte Carlo comparisons.
#[derive(Parser)]
#[command(name = "holpower", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Source {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "canned")]
    scenario: Option<PathBuf>,
    /// Name of a built-in scenario (see `holpower list`).
    #[arg(long)]
    canned: Option<String>,
}

impl Source {
    fn load(&self) -> Result<Scenario> {
        match (&self.scenario, &self.canned) {
            (Some(path), _) => {
                Scenario::from_path(path).with_context(|| format!("loading {}", path.display()))
            }
            (None, Some(name)) => Ok(find_canned(name)?.load()?),
            (None, None) => bail!("pass --scenario <path> or --canned <name>"),
        }
    }
}

#[derive(Args, Clone)]
struct SimOverrides {
    /// Base seed; overrides HOLPOWER_SEED, which overrides the scenario file.
    #[arg(long, env = "HOLPOWER_SEED")]
    seed: Option<u64>,
    /// Replications per operating point.
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the dynamic program and write value.csv and policy.csv.
    Solve {
        #[command(flatten)]
        source: Source,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Simulate every controller and sweep point; one CSV row each.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        sim: SimOverrides,
        /// Output CSV file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra columns: stderr of every ratio, per-replication drop ratio.
        #[arg(long)]
        verbose: bool,
        /// With --verbose, also write the per-slot log of replication 0 of the first row here.
        #[arg(long, requires = "verbose")]
        event_log: Option<PathBuf>,
    },
    /// Run the invariant suite; exits nonzero if any check fails.
    Verify {
        #[command(flatten)]
        source: Source,
        /// Verify every built-in scenario.
        #[arg(long, conflicts_with_all = ["scenario", "canned"])]
        all_canned: bool,
        #[command(flatten)]
        sim: SimOverrides,
        /// Print passing checks too.
        #[arg(long)]
        verbose: bool,
    },
    /// Dump delta, sigma, T_b(0) and the sigma bounds at one interference level.
    Sigma {
        #[command(flatten)]
        source: Source,
        /// 1-based interference state; required when the chain has several states.
        #[arg(long)]
        interference: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a sigmoidal success curve and its concave envelope.
    Envelope {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        interference: Option<usize>,
        /// Number of evenly spaced samples.
        #[arg(long, default_value_t = 1001)]
        points: usize,
        /// Largest sampled power (defaults to four times the tangency point).
        #[arg(long)]
        p_max: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    List,
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?.install(f))
}

fn level_index(scenario: &Scenario, interference: Option<usize>) -> Result<usize> {
    let n = scenario.spec.num_states();
    match interference {
        Some(k) if k >= 1 && k <= n => Ok(k - 1),
        Some(k) => bail!("--interference {k} is outside 1..={n}"),
        None if n == 1 => Ok(0),
        None => bail!("the chain has {n} states; choose one with --interference"),
    }
}

fn cmd_solve(source: &Source, out: &Path) -> Result<()> {
    let scenario = source.load()?;
    let spec = &scenario.spec;
    let (v, mu) = solve(spec).context("solving the dynamic program")?;
    std::fs::create_dir_all(out)?;
    write_values(File::create(out.join("value.csv"))?, &v)?;
    write_policy(File::create(out.join("policy.csv"))?, &mu)?;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "scenario {}", scenario.name)?;
    for (i, &level) in spec.interference.levels().iter().enumerate() {
        writeln!(
            stdout,
            "J(B={}, D={}, i={}) = {}  (level {})",
            spec.backlog,
            spec.deadline,
            i + 1,
            g12(v.get(spec.backlog, spec.deadline, i)),
            g12(level)
        )?;
    }
    writeln!(stdout, "bellman residual {}", g12(bellman_residual(spec, &v)?))?;
    Ok(())
}

fn cmd_simulate(
    source: &Source,
    overrides: &SimOverrides,
    out: Option<&Path>,
    verbose: bool,
    event_log: Option<&Path>,
) -> Result<()> {
    let mut scenario = source.load()?;
    scenario.override_sim(overrides.seed, overrides.replications);
    scenario.validate()?;
    let jobs = scenario.jobs();
    let rows = with_pool(overrides.jobs, || -> Result<Vec<SimRow>> {
        jobs.iter()
            .map(|job| {
                let policy = Policy::build(&job.policy, &job.spec)
                    .with_context(|| format!("building {}", job.policy.label()))?;
                let report = run_batch(&job.spec, &policy, &scenario.sim)?;
                Ok(SimRow {
                    scenario: scenario.name.clone(),
                    policy: job.policy.label().to_string(),
                    parameter: job.parameter.map(|(p, _)| p.name().to_string()).unwrap_or_default(),
                    value: job.parameter.map(|(_, v)| v),
                    report,
                })
            })
            .collect()
    })??;
    write_sim_rows(writer(out)?, &rows, verbose)?;
    if let (Some(path), Some(job)) = (event_log, jobs.first()) {
        let mut policy = Policy::build(&job.policy, &job.spec)?;
        let mut events = Vec::new();
        run_trajectory(
            &job.spec,
            &mut policy,
            replication_seed(scenario.sim.base_seed, 0),
            scenario.sim.max_slots_for(&job.spec),
            scenario.sim.initial_interference,
            Some(&mut events),
        );
        write_events(File::create(path)?, &events)?;
    }
    Ok(())
}

fn report(checks: &[Check], verbose: bool, out: &mut impl Write) -> Result<usize> {
    let mut failures = 0;
    for c in checks {
        if !c.passed {
            failures += 1;
        }
        if verbose || !c.passed {
            writeln!(
                out,
                "{} {}: measured {} ({})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                g12(c.measured),
                c.detail
            )?;
        }
    }
    Ok(failures)
}

fn cmd_verify(source: &Source, all: bool, overrides: &SimOverrides, verbose: bool) -> Result<ExitCode> {
    let scenarios: Vec<Scenario> = if all {
        CANNED.iter().map(|c| c.load()).collect::<Result<_, _>>()?
    } else {
        vec![source.load()?]
    };
    let (failures, total) = with_pool(overrides.jobs, || -> Result<(usize, usize)> {
        let mut stdout = io::stdout().lock();
        let mut failures = 0;
        let mut total = 0;
        for mut s in scenarios {
            s.override_sim(overrides.seed, overrides.replications);
            let checks = verify_scenario(&s)?;
            total += checks.len();
            failures += report(&checks, verbose, &mut stdout)?;
        }
        let checks = global_checks()?;
        total += checks.len();
        failures += report(&checks, verbose, &mut stdout)?;
        Ok((failures, total))
    })??;
    println!("{total} checks, {failures} failed");
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_sigma(source: &Source, interference: Option<usize>, out: Option<&Path>) -> Result<()> {
    let scenario = source.load()?;
    let i = level_index(&scenario, interference)?;
    let level = scenario.spec.interference.level(i);
    let st = build_sigma(&scenario.spec, level);
    let bounds = sigma_bounds(&st, &scenario.spec);
    write_sigma(writer(out)?, &st, &bounds)?;
    Ok(())
}

fn cmd_envelope(
    source: &Source,
    interference: Option<usize>,
    points: usize,
    p_max: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let scenario = source.load()?;
    let i = level_index(&scenario, interference)?;
    let env = concave_envelope(&scenario.spec.success, scenario.spec.interference.level(i))?;
    let span = p_max.unwrap_or(4.0 * env.p_star);
    if !(span.is_finite() && span > 0.0) || points < 2 {
        bail!("need --p-max > 0 and at least 2 points");
    }
    write_envelope(writer(out)?, &env, span, points)?;
    Ok(())
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Solve { source, out } => cmd_solve(source, out)?,
        Command::Simulate {
            source,
            sim,
            out,
            verbose,
            event_log,
        } => cmd_simulate(source, sim, out.as_deref(), *verbose, event_log.as_deref())?,
        Command::Verify {
            source,
            all_canned,
            sim,
            verbose,
        } => return cmd_verify(source, *all_canned, sim, *verbose),
        Command::Sigma {
            source,
            interference,
            out,
        } => cmd_sigma(source, *interference, out.as_deref())?,
        Command::Envelope {
            source,
            interference,
            points,
            p_max,
            out,
        } => cmd_envelope(source, *interference, *points, *p_max, out.as_deref())?,
        Command::List => {
            let mut stdout = io::stdout().lock();
            for c in CANNED {
                writeln!(stdout, "{:<20} {}", c.name, c.summary)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
