use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use asn_rtf::experiment;
use asn_rtf::io::config::{ExperimentConfig, SweepAxis, SweepSpec};
use asn_rtf::Exec;

#[derive(Parser, Debug)]
#[command(
    name = "asn-rtf",
    version,
    about = "RTF estimation and MVDR experiments for acoustic sensor networks"
)]
struct Cli {
    /// Experiment configuration (INI); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overrides `[experiment] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 = automatic; overrides `[experiment] threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write scene.json, x.wav, v.wav and labels.csv for trial 0.
    Simulate,
    /// Run all trials, methods and SNRs; write result and summary CSVs.
    Run,
    /// Repeat `run` along one axis and write long-format CSVs.
    Sweep {
        /// snr, frames or nodes; defaults to `[sweep] axis`.
        #[arg(long)]
        axis: Option<SweepAxis>,
        /// Comma-separated axis values; defaults to `[sweep] values`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
    },
    /// Print the effective configuration in canonical form.
    ConfigDump,
}

fn log(msg: &str) {
    eprintln!("[asn-rtf] {msg}");
}

fn load(cli: &Cli) -> asn_rtf::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: &ExperimentConfig) -> asn_rtf::Result<usize> {
    let exec = Exec::from_threads(cfg.threads);
    let progress = |m: &str| log(m);
    match &cli.command {
        Command::ConfigDump => {
            print!("{}", cfg.to_ini());
            Ok(0)
        }
        Command::Simulate => {
            let files = experiment::simulate(cfg, &cfg.output.dir, exec)?;
            for p in [&files.scene, &files.x_wav, &files.v_wav, &files.labels] {
                log(&format!("wrote {}", p.display()));
            }
            Ok(0)
        }
        Command::Run => {
            log(&format!(
                "run: {} trials x {} SNRs x {} methods, layout {}",
                cfg.trials,
                cfg.snr_db.len(),
                cfg.methods.len(),
                cfg.layout
            ));
            let rows = experiment::run(cfg, exec, &progress)?;
            let (results, summary) = experiment::write_run(cfg, &rows)?;
            log(&format!(
                "wrote {} and {}",
                results.display(),
                summary.display()
            ));
            Ok(rows.iter().filter(|r| r.error.is_some()).count())
        }
        Command::Sweep { axis, values } => {
            let spec = match (axis, values, &cfg.sweep) {
                (Some(a), Some(v), _) => SweepSpec {
                    axis: *a,
                    values: v.clone(),
                },
                (a, v, Some(s)) => SweepSpec {
                    axis: a.unwrap_or(s.axis),
                    values: v.clone().unwrap_or_else(|| s.values.clone()),
                },
                (Some(SweepAxis::Snr), None, None) => SweepSpec {
                    axis: SweepAxis::Snr,
                    values: cfg.snr_db.clone(),
                },
                _ => {
                    return Err(asn_rtf::Error::Parameter(
                        "sweep needs --axis and --values or a [sweep] section".into(),
                    ))
                }
            };
            let points = experiment::sweep(cfg, &spec, exec, &progress)?;
            let (results, summary) = experiment::write_sweep(cfg, spec.axis, &points)?;
            log(&format!(
                "wrote {} and {}",
                results.display(),
                summary.display()
            ));
            Ok(points
                .iter()
                .flat_map(|(_, rows)| rows)
                .filter(|r| r.error.is_some())
                .count())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            log(&format!("error: {e}"));
            return ExitCode::FAILURE;
        }
    };

    #[cfg(feature = "parallel")]
    let outcome = if cfg.threads > 1 {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
        {
            Ok(pool) => pool.install(|| execute(&cli, &cfg)),
            Err(e) => {
                log(&format!("error: cannot start thread pool: {e}"));
                return ExitCode::FAILURE;
            }
        }
    } else {
        execute(&cli, &cfg)
    };
    #[cfg(not(feature = "parallel"))]
    let outcome = execute(&cli, &cfg);

    match outcome {
        Ok(warnings) => {
            if !matches!(cli.command, Command::ConfigDump) {
                log(&format!("done, {warnings} warnings"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log(&format!("error: {e}"));
            ExitCode::FAILURE
        }
    }
}
