use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use regionkg::agents::{ChatMode, MockFixture};
use regionkg::dataio::{generate_synthetic, write_dataset, SyntheticSpec};
use regionkg::fusion::EmbedMode;
use regionkg::pipeline::{
    report, run_experiment, run_search, ChatSetup, Dataset, ExperimentConfig, Round, RunOptions,
    SearchAlgo,
};

#[derive(Parser)]
#[command(
    name = "regionkg",
    version,
    about = "Region indicator prediction over location knowledge graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Lite,
    Default,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Ga,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted indicator signal.
    GenSynth {
        /// Generator spec file (TOML).
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// Built-in spec.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run round 1 (agent proposals and single-task training), round 2
    /// (communication and cross-task training), or both.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Answer agent calls from the mock fixture instead of a chat endpoint.
        #[arg(long)]
        mock_agents: bool,
        /// Comma-separated ablation flags: no_self_update, no_rec, no_trans, no_attn.
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<String>,
        #[arg(long, value_enum, default_value = "all")]
        round: RoundArg,
    },
    /// Random or genetic meta-path search for one indicator.
    Search {
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory; `runs/<name>/search` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a run directory into tables.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn chat_setup(mock: bool, config: &ExperimentConfig) -> Result<ChatSetup> {
    if mock {
        let fixture = match &config.mock_fixture {
            Some(p) => MockFixture::load(p)?,
            None => MockFixture::shipped(),
        };
        return Ok(ChatSetup::Mock(fixture));
    }
    match ChatMode::from_env() {
        ChatMode::Remote(c) => Ok(ChatSetup::Remote(c)),
        ChatMode::Mock => {
            bail!("no chat endpoint configured (LLM_ENDPOINT is unset); pass --mock-agents")
        }
    }
}

fn gen_synth(spec: Option<PathBuf>, preset: Option<Preset>, out: PathBuf) -> Result<()> {
    let spec = match (spec, preset) {
        (Some(p), _) => {
            SyntheticSpec::load(&p).with_context(|| format!("loading spec {}", p.display()))?
        }
        (None, Some(Preset::Default)) => SyntheticSpec::default_scale(),
        (None, _) => SyntheticSpec::lite(),
    };
    let ds = generate_synthetic(&spec).context("generating synthetic dataset")?;
    let m = write_dataset(&ds, &out)?;
    println!(
        "wrote {} ({} entities, {} facts)",
        out.display(),
        m.num_entities,
        m.num_facts
    );
    for ind in &m.indicators {
        println!("  {:<16} oracle R2 {:.4}", ind.name, ind.oracle.r2_heldout);
    }
    Ok(())
}

fn main_inner() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenSynth { spec, preset, out } => gen_synth(spec, preset, out),
        Command::Run {
            config,
            data,
            out,
            mock_agents,
            ablate,
            round,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let data = Dataset::load(&data)?;
            let opts = RunOptions {
                out: out.clone(),
                chat: chat_setup(mock_agents, &config)?,
                embed: EmbedMode::from_env(),
                ablations: ablate.into_iter().filter(|a| !a.is_empty()).collect(),
            };
            let round = match round {
                RoundArg::One => Round::One,
                RoundArg::Two => Round::Two,
                RoundArg::All => Round::All,
            };
            let m = run_experiment(&config, &data, &opts, round)?;
            for (name, r) in &m.rounds {
                for t in &r.tasks {
                    println!(
                        "{name} {:<16} val R2 {:.4}  test R2 {:.4}",
                        t.indicator, t.val_r2, t.test_r2
                    );
                }
            }
            println!("run written to {}", out.display());
            Ok(())
        }
        Command::Search {
            algo,
            config,
            data,
            out,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let data = Dataset::load(&data)?;
            let out =
                out.unwrap_or_else(|| PathBuf::from("runs").join(&config.name).join("search"));
            let algo = match algo {
                Algo::Ga => SearchAlgo::Genetic,
                Algo::Random => SearchAlgo::Random,
            };
            let r = run_search(&config, &data, algo, EmbedMode::from_env(), &out)?;
            println!(
                "{} evaluations, best validation R2 {:.4}; history in {}",
                r.history.evaluations.len(),
                r.best_fitness,
                out.display()
            );
            Ok(())
        }
        Command::Report { run } => {
            let s = report(&run)?;
            let table = run.join("report").join("metrics.txt");
            print!("{}", std::fs::read_to_string(&table).unwrap_or_default());
            println!(
                "{} report files in {}",
                s.files.len(),
                run.join("report").display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
