use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use atomion::cache::{Cache, CACHE_ENV};
use atomion::config::{Emit, Point, RunConfig};
use atomion::pipeline::{self, Manifest};
use atomion::verify::run_checks;
use atomion::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;

/// Exact eigenstates and observables of two bosons next to a trapped ion.
#[derive(Parser, Debug)]
#[command(name = "atomion", version)]
struct Cli {
    /// TOML run configuration; every field has a default.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override any config field, e.g. `--set grids.cmf.points=512`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Eigenstate cache directory.
    #[arg(long, env = CACHE_ENV, default_value = ".atomion-cache", global = true)]
    cache_dir: PathBuf,

    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct PointArgs {
    /// Contact strength (sets model.g).
    #[arg(long)]
    g: Option<f64>,
    /// Mass ratio m_A/m_I (sets model.beta).
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct OutputArgs {
    /// Output directory (sets output_dir).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Comma-separated emit targets (sets emit); an empty value emits nothing.
    #[arg(long, value_delimiter = ',')]
    emit: Option<Vec<String>>,
    /// State indices to report (sets sweep.states).
    #[arg(long, value_delimiter = ',')]
    states: Option<Vec<usize>>,
    /// Ignore cached eigenstates and solve again (sets cache_policy).
    #[arg(long)]
    recompute: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one point and print its spectrum; writes spectrum.csv.
    Solve {
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Evaluate the configured observables at one point.
    Observables {
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the sweep block over every (beta, g) pair.
    Sweep {
        /// Comma-separated g values (sets sweep.g).
        #[arg(long, value_delimiter = ',')]
        g: Option<Vec<f64>>,
        /// Comma-separated beta values (sets sweep.beta).
        #[arg(long, value_delimiter = ',')]
        beta: Option<Vec<f64>>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the built-in oracle checks on the configured grids.
    Verify,
    /// Inspect or clear the eigenstate cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand, Debug)]
enum CacheAction {
    /// List cached eigenstate files.
    Ls,
    /// Remove cache files by hash prefix, or all of them with --all.
    Rm {
        prefixes: Vec<String>,
        #[arg(long, conflicts_with = "prefixes")]
        all: bool,
    },
}

fn toml_list<T: ToString>(v: &[T]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

fn float_list(v: &[f64]) -> String {
    toml_list(&v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>())
}

fn output_overrides(o: &OutputArgs, sets: &mut Vec<String>) -> Result<(), Error> {
    if let Some(dir) = &o.out {
        sets.push(format!("output_dir={}", toml_string(&dir.display().to_string())));
    }
    if let Some(list) = &o.emit {
        let mut names = Vec::new();
        for e in list.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
            let emit = Emit::parse(e).ok_or_else(|| {
                let known: Vec<&str> = Emit::ALL.iter().map(|e| e.name()).collect();
                Error::Config(format!("--emit: unknown target `{e}` (known: {})", known.join(", ")))
            })?;
            names.push(toml_string(emit.name()));
        }
        sets.push(format!("emit={}", toml_list(&names)));
    }
    if let Some(states) = &o.states {
        sets.push(format!("sweep.states={}", toml_list(states)));
    }
    if o.recompute {
        sets.push("cache_policy=\"recompute\"".into());
    }
    Ok(())
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn point_overrides(p: &PointArgs, sets: &mut Vec<String>) {
    if let Some(g) = p.g {
        sets.push(format!("model.g={g:?}"));
    }
    if let Some(b) = p.beta {
        sets.push(format!("model.beta={b:?}"));
    }
}

fn load_config(cli: &Cli, extra: &[String]) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    cfg.apply_overrides(extra)?;
    Ok(cfg)
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) | Error::InvalidGrid(_) | Error::InvalidParams(_) => {
            ExitCode::from(EXIT_CONFIG)
        }
        Error::NoConvergence { .. } => ExitCode::from(EXIT_NO_CONVERGENCE),
        _ => ExitCode::from(EXIT_FAILURE),
    }
}

fn report(manifest: &Manifest, cfg: &RunConfig, quiet: bool) -> ExitCode {
    if !quiet {
        eprintln!(
            "{} point(s), {} eigensolve(s), {} cache hit(s); wrote {} file(s) to {}",
            manifest.points.len(),
            manifest.eigensolves,
            manifest.cache_hits,
            manifest.files.len() + 1,
            cfg.output_dir.display()
        );
    }
    for p in manifest.points.iter().filter(|p| p.error.is_some()) {
        eprintln!(
            "beta={} g={}: {}",
            p.beta,
            p.g,
            p.error.as_deref().unwrap_or_default()
        );
    }
    if manifest.convergence_failures() > 0 {
        ExitCode::from(EXIT_NO_CONVERGENCE)
    } else if manifest.failures() > 0 {
        ExitCode::from(EXIT_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}

fn print_spectrum(manifest: &Manifest, cfg: &RunConfig) {
    for p in &manifest.points {
        println!("beta = {}, g = {}", p.beta, p.g);
        if p.error.is_some() {
            continue;
        }
        let shift = if p.beta > 0.0 {
            atomion::hamiltonians::cm_solution(&cfg.model.with_beta(p.beta))
                .map(|c| c.energy)
                .unwrap_or(0.0)
        } else {
            0.0
        };
        println!("{:>5} {:>20} {:>20} {:>10}", "state", "relative", "total", "residual");
        for &k in &cfg.sweep.states {
            println!(
                "{:>5} {:>20.12} {:>20.12} {:>10.2e}",
                k,
                p.eigenvalues[k],
                p.eigenvalues[k] + shift,
                p.residuals[k]
            );
        }
    }
}

fn run_points(
    cli: &Cli,
    cfg: &RunConfig,
    points: &[Point],
    name: &str,
    print: bool,
) -> ExitCode {
    let cache = Cache::new(&cli.cache_dir);
    let command = format!("atomion {name}");
    match pipeline::run(cfg, points, cache, &command, !cli.quiet) {
        Ok(m) => {
            if print {
                print_spectrum(&m, cfg);
            }
            report(&m, cfg, cli.quiet)
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut sets = Vec::new();
    let prepared = match &cli.command {
        Command::Solve { point, output } | Command::Observables { point, output } => {
            point_overrides(point, &mut sets);
            output_overrides(output, &mut sets)
        }
        Command::Sweep { g, beta, output } => {
            if let Some(g) = g {
                sets.push(format!("sweep.g={}", float_list(g)));
            }
            if let Some(b) = beta {
                sets.push(format!("sweep.beta={}", float_list(b)));
            }
            output_overrides(output, &mut sets)
        }
        Command::Verify | Command::Cache { .. } => Ok(()),
    };
    if matches!(cli.command, Command::Solve { .. }) {
        sets.push("emit=[\"spectrum\"]".into());
    }
    let cfg = match prepared.and_then(|_| load_config(&cli, &sets)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };

    match &cli.command {
        Command::Solve { .. } => run_points(&cli, &cfg, &cfg.single_point(), "solve", true),
        Command::Observables { .. } => {
            run_points(&cli, &cfg, &cfg.single_point(), "observables", false)
        }
        Command::Sweep { .. } => run_points(&cli, &cfg, &cfg.sweep_points(), "sweep", false),
        Command::Verify => {
            if let Err(e) = cfg.validate(&[]) {
                eprintln!("error: {e}");
                return exit_for(&e);
            }
            let checks = run_checks(&cfg);
            for c in &checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
        Command::Cache { action } => {
            let cache = Cache::new(&cli.cache_dir);
            let result = match action {
                CacheAction::Ls => cache.list().map(|entries| {
                    for e in entries {
                        let grids: Vec<String> = e
                            .grids
                            .iter()
                            .map(|g| format!("{}x{}", g.extent(), g.len()))
                            .collect();
                        println!(
                            "{}  {:<13} {:<18} {} state(s)  E0={:.8}  {} bytes",
                            &e.hash[..16],
                            e.frame.tag(),
                            grids.join(","),
                            e.energies.len(),
                            e.energies.first().copied().unwrap_or(f64::NAN),
                            e.bytes
                        );
                    }
                }),
                CacheAction::Rm { prefixes, all } => {
                    if prefixes.is_empty() && !all {
                        eprintln!("error: give hash prefixes or --all");
                        return ExitCode::from(EXIT_CONFIG);
                    }
                    cache.remove(prefixes).map(|removed| {
                        for p in &removed {
                            println!("removed {}", p.display());
                        }
                    })
                }
            };
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_for(&e)
                }
            }
        }
    }
}
