use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mediator::analysis::{read_config, run, ReportFormat};
use mediator::learners::LearnerKind;
use mediator::oracle::{
    counterfactual_table, simulate, statistical_table, truth_counterfactual, truth_statistical, Counterfactual, Scm,
    DEFAULT_DRAWS,
};
use mediator::riesz::RieszKind;
use mediator::{EffectFamily, Error, FunctionalSpec};

#[derive(Parser)]
#[command(name = "mediator", version, about = "Causal mediation analysis with cross-fitted one-step estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Counterfactual,
    Statistical,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate an effect family from a TOML run config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// N, RI or RT.
        #[arg(long)]
        effect: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated learner list, e.g. `mean,linear,boost`.
        #[arg(long, value_delimiter = ',')]
        learners: Option<Vec<String>>,
        /// Representer class: linear_basis or feedforward.
        #[arg(long)]
        riesz: Option<String>,
        /// Run natural effects despite intermediate confounders.
        #[arg(long)]
        allow_cross_world: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Draw a dataset from a structural causal model.
    Simulate {
        #[arg(long)]
        scm: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the seed stored in the model file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo ground truth for an effect family, counterfactual or functional.
    Truth {
        #[arg(long)]
        scm: PathBuf,
        /// N, RI, RT, a twin name (S0..S4, S1', S2', S2'', S3''), ri(a,b) or a functional.
        #[arg(long)]
        effect: String,
        #[arg(long, default_value_t = DEFAULT_DRAWS)]
        draws: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "counterfactual")]
        kind: Kind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run {
            config,
            seed,
            effect,
            folds,
            epochs,
            learners,
            riesz,
            allow_cross_world,
            out,
            format,
        } => {
            let mut cfg = read_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = effect {
                cfg.effect = e;
            }
            if let Some(v) = folds {
                cfg.crossfit_folds = v;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(ls) = learners {
                cfg.learners = ls.iter().map(|l| l.parse::<LearnerKind>()).collect::<Result<_, _>>()?;
            }
            if let Some(r) = riesz {
                cfg.riesz.kind = match r.as_str() {
                    "linear" | "linear_basis" => RieszKind::LinearBasis,
                    "feedforward" | "ff" => RieszKind::Feedforward,
                    other => return Err(Error::Config(format!("unknown riesz class `{other}`"))),
                };
            }
            if allow_cross_world {
                cfg.allow_cross_world = true;
            }
            if let Some(p) = out {
                cfg.output = Some(p);
            }
            if let Some(f) = format {
                cfg.format = match f {
                    Format::Json => ReportFormat::Json,
                    Format::Table => ReportFormat::Table,
                };
            }
            let report = run(&cfg)?;
            match &cfg.output {
                Some(path) => {
                    report.write(path, cfg.format)?;
                    print!("{}", report.render_table());
                }
                None => print!("{}", report.render(cfg.format)),
            }
            Ok(())
        }
        Command::Simulate { scm, n, out, seed } => {
            let model = Scm::load(&scm)?;
            let data = simulate::<f64>(&model, n, seed.unwrap_or(model.seed))?;
            data.write_csv(&out)?;
            Ok(())
        }
        Command::Truth {
            scm,
            effect,
            draws,
            seed,
            kind,
            out,
        } => {
            let model = Scm::load(&scm)?;
            let seed = seed.unwrap_or(model.seed);
            let json = if let Ok(family) = effect.parse::<EffectFamily>() {
                let table = match kind {
                    Kind::Counterfactual => counterfactual_table(&model, family, None, draws, seed)?,
                    Kind::Statistical => statistical_table(&model, family, None, draws, seed)?,
                };
                table.to_json()
            } else {
                let entry = match kind {
                    Kind::Counterfactual => {
                        let cf: Counterfactual = effect.parse()?;
                        truth_counterfactual(&model, &cf, None, draws, seed)?
                    }
                    Kind::Statistical => {
                        let spec: FunctionalSpec = effect.parse()?;
                        truth_statistical(&model, &spec, None, draws, seed)?
                    }
                };
                serde_json::to_string_pretty(&serde_json::json!({
                    "target": effect,
                    "draws": draws,
                    "seed": seed,
                    "value": entry.value,
                    "mc_se": entry.mc_se,
                }))
                .expect("json")
            };
            match out {
                Some(p) => std::fs::write(p, json + "\n")?,
                None => println!("{json}"),
            }
            Ok(())
        }
    }
}
