use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use risnoma_harness::config;
use risnoma_harness::experiment::{
    kind_name, run_experiment, run_prediction, run_training, write_summary, ResultTable, SweepVariable, Variant,
};
use risnoma_harness::presets::{self, Preset};

#[derive(Parser)]
#[command(name = "risnoma", version, about = "RIS-assisted NOMA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// INI experiment file.
    config: Option<PathBuf>,
    /// Built-in experiment (fig3 to fig7) used when no file is given.
    #[arg(long)]
    preset: Option<String>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a file or preset.
    Run(Common),
    /// Run a sweep, optionally replacing its variable, grid or baselines.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// transmit_power, n_elements or none.
        #[arg(long)]
        variable: Option<String>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Comma-separated baseline variants.
        #[arg(long, value_delimiter = ',')]
        baselines: Option<Vec<String>>,
    },
    /// Score traffic predictors, optionally on a recorded single-user trace.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Trace CSV with columns user_id,interval,demand_bits.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Intervals used for fitting; the rest is held out.
        #[arg(long)]
        train_len: Option<usize>,
    },
    /// Summarize result CSVs written by `run` or `sweep`.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn load(c: &Common, default_preset: &str) -> anyhow::Result<Preset> {
    let mut p = match (&c.config, &c.preset) {
        (Some(_), Some(_)) => bail!("give either a config file or --preset, not both"),
        (Some(path), None) => config::load(path, &c.out)?,
        (None, name) => {
            let name = name.as_deref().unwrap_or(default_preset);
            presets::by_name(name, &c.out)
                .with_context(|| format!("unknown preset `{name}`; expected one of {:?}", presets::NAMES))?
        }
    };
    if let Some(s) = c.seed {
        match &mut p {
            Preset::Sweep(x) => x.seeds = vec![s],
            Preset::Training(x) => x.seeds = vec![s],
            Preset::Prediction(x) => x.seeds = vec![s],
        }
    }
    Ok(p)
}

fn execute(p: &Preset) -> anyhow::Result<()> {
    match p {
        Preset::Sweep(s) => {
            let table = run_experiment(s)?;
            print_summary(&table);
            println!("wrote {}", s.out_dir.join(format!("{}.csv", s.name)).display());
        }
        Preset::Training(t) => {
            let runs = run_training(t)?;
            println!("agent,seed,final_cumulative_reward,final_mean_ee");
            for r in &runs {
                if let Some(last) = r.log.records.last() {
                    println!("{},{},{},{}", r.agent, r.seed, last.cumulative_reward, last.mean_ee);
                }
            }
            println!("wrote {}", t.out_dir.join(format!("{}.csv", t.name)).display());
        }
        Preset::Prediction(p) => {
            let rows = run_prediction(p)?;
            for kind in &p.kinds {
                let v: Vec<f64> = rows.iter().filter(|r| r.kind == *kind).map(|r| r.nrmse).collect();
                println!("{} mean NRMSE {:.4} over {} seeds", kind_name(*kind), v.iter().sum::<f64>() / v.len() as f64, v.len());
            }
            println!("wrote {}", p.out_dir.join(format!("{}.csv", p.name)).display());
        }
    }
    Ok(())
}

fn print_summary(t: &ResultTable) {
    let mut out = Vec::new();
    write_summary(&t.summary(), &mut out).expect("writing to memory");
    print!("{}", String::from_utf8_lossy(&out));
}

fn report(files: &[PathBuf]) -> anyhow::Result<()> {
    for f in files {
        let table = read_table(f)?;
        println!("# {}", f.display());
        print_summary(&table);
    }
    Ok(())
}

fn read_table(path: &Path) -> anyhow::Result<ResultTable> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    ResultTable::read_csv(file).with_context(|| format!("in {}", path.display()))
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(c) => execute(&load(&c, "fig4")?),
        Command::Sweep { common, variable, grid, baselines } => {
            let Preset::Sweep(mut s) = load(&common, "fig4")? else {
                bail!("`sweep` needs a sweep experiment");
            };
            if let Some(v) = variable {
                s.sweep = SweepVariable::parse(&v).with_context(|| format!("unknown sweep variable `{v}`"))?;
            }
            if let Some(g) = grid {
                s.grid = g;
            }
            if let Some(b) = baselines {
                s.baselines = b
                    .iter()
                    .map(|n| Variant::parse(n).with_context(|| format!("unknown baseline `{n}`")))
                    .collect::<anyhow::Result<_>>()?;
            }
            execute(&Preset::Sweep(s))
        }
        Command::Predict { common, trace, train_len } => {
            let Preset::Prediction(mut p) = load(&common, "fig7")? else {
                bail!("`predict` needs a prediction experiment");
            };
            if trace.is_some() {
                p.trace_file = trace;
            }
            if let Some(n) = train_len {
                p.train_len = n;
            }
            execute(&Preset::Prediction(p))
        }
        Command::Report { files } => report(&files),
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
