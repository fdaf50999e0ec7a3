//! `urb`: train, attack and evaluate models under the union of l-inf, l2
//! and l1 perturbation models.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use union_robust::checkpoint::{load_checkpoint, save_checkpoint};
use union_robust::config::{Settings, Split};
use union_robust::data::Dataset;
use union_robust::evaluation::{curve_csv, evaluate, filter_sparsity_report, robustness_curve, DEFAULT_SPARSITY_THRESHOLD};
use union_robust::training::train_with;
use union_robust::{Error, ModelSpec, Network, NormKind};

#[derive(Parser)]
#[command(name = "urb", version, about = "Adversarial robustness against unions of lp balls")]
struct Cli {
    /// Worker threads for example-level parallelism (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides `train.seed` for `train`, `eval.seed` otherwise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Records,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also append per-epoch records to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against one attack from the suite.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Attack id such as `linf.pgd` or `l1.pointwise`.
        #[arg(long)]
        attack: String,
        #[arg(long, value_enum, default_value = "records")]
        format: Format,
    },
    /// Union worst-case evaluation over the configured suite.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Accuracy against one norm group's attacks over a grid of budgets (CSV).
    Curve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        norm: NormKind,
        /// Comma-separated, strictly increasing budgets.
        #[arg(long)]
        grid: String,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report first-layer filters dominated by a single weight.
    InspectFilters {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SPARSITY_THRESHOLD)]
        threshold: f64,
    },
}

fn settings(cfg: &ConfigArgs, seed_key: &str) -> Result<Settings, Error> {
    let mut overrides = cfg.overrides.clone();
    if let Some(seed) = cfg.seed {
        overrides.push(format!("{seed_key}={seed}"));
    }
    Settings::load(&cfg.config, &overrides)
}

fn load_model(path: &Path) -> Result<Network, Error> {
    if !path.exists() {
        return Err(Error::InvalidArgument(format!("checkpoint {} does not exist", path.display())));
    }
    let (params, spec) = load_checkpoint(path)?;
    Network::new(spec, params)
}

fn test_set(settings: &Settings, spec: &ModelSpec) -> Result<Dataset, Error> {
    let data = settings.data.load(Split::Test)?;
    let data = if settings.eval.limit > 0 {
        data.take(settings.eval.limit)?
    } else {
        data
    };
    if data.example_shape() != spec.input_shape {
        return Err(Error::Config(format!(
            "test data {:?} does not match checkpoint input {:?}",
            data.example_shape(),
            spec.input_shape
        )));
    }
    Ok(data)
}

fn print_lines(lines: &[String]) {
    let mut out = std::io::stdout().lock();
    for l in lines {
        let _ = writeln!(out, "{l}");
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train { cfg, out, log } => {
            let s = settings(&cfg, "train.seed")?;
            let data = s.data.load(Split::Train)?;
            let spec = s.model_spec(data.example_shape(), data.classes().max(s.data.classes))?;
            let mut log_file = log.map(fs::File::create).transpose()?;
            let mut log_error = None;
            let (params, _) = train_with(&s.train, &spec, &data, |record| {
                let line = record.record(true);
                println!("{line}");
                if let Some(f) = log_file.as_mut() {
                    if let Err(e) = writeln!(f, "{line}") {
                        log_error.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = log_error {
                return Err(e.into());
            }
            save_checkpoint(&params, &spec, &out)?;
            println!("checkpoint={} parameters={}", out.display(), params.total_len());
        }
        Command::Attack {
            checkpoint,
            cfg,
            attack,
            format,
        } => {
            let s = settings(&cfg, "eval.seed")?;
            let net = load_model(&checkpoint)?;
            let suite = s.suite_all()?.select(&[attack.as_str()])?;
            let data = test_set(&s, &net.spec)?;
            let report = evaluate(&net, &data, &suite, s.eval.seed)?;
            match format {
                Format::Table => print!("{}", report.table()),
                Format::Records => print_lines(&report.records()),
            }
        }
        Command::Eval { checkpoint, cfg, format } => {
            let s = settings(&cfg, "eval.seed")?;
            let net = load_model(&checkpoint)?;
            let suite = s.suite()?;
            let data = test_set(&s, &net.spec)?;
            let report = evaluate(&net, &data, &suite, s.eval.seed)?;
            match format {
                Format::Table => print!("{}", report.table()),
                Format::Records => print_lines(&report.records()),
            }
        }
        Command::Curve {
            checkpoint,
            cfg,
            norm,
            grid,
            out,
        } => {
            let s = settings(&cfg, "eval.seed")?;
            let net = load_model(&checkpoint)?;
            let grid = grid
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad grid value {v:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let family = s.suite()?.group(norm);
            if family.is_empty() {
                return Err(Error::Config(format!("the configured suite has no {norm} attacks")));
            }
            let data = test_set(&s, &net.spec)?;
            let csv = curve_csv(&robustness_curve(&net, &data, &family, &grid, s.eval.seed)?);
            match out {
                Some(path) => fs::write(path, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::InspectFilters { checkpoint, threshold } => {
            let net = load_model(&checkpoint)?;
            let report = filter_sparsity_report(&net.spec, &net.params, threshold)?;
            let mut lines: Vec<String> = report
                .ratios
                .iter()
                .enumerate()
                .map(|(i, r)| format!("kind=filter index={i} ratio={r:.6} flagged={}", *r > threshold))
                .collect();
            lines.push(format!(
                "kind=summary filters={} flagged={} threshold={}",
                report.ratios.len(),
                report.flagged,
                report.threshold
            ));
            print_lines(&lines);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } | Error::Invariant(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(Error::InvalidArgument(format!("cannot start {n} threads: {e}"))),
        },
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("urb: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
