//! `phg` command line.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use phg_core::training::RunConfig;

use crate::config;
use crate::error::{CliError, Result};
use crate::exec::Pool;
use crate::io::{load_corpus, read_jsonl};
use crate::pipeline::{self, PairRecord};

#[derive(Debug, Parser)]
#[command(name = "phg", version, about = "Personalized headline generation with dual-filtered user profiles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand. Precedence, lowest first: preset,
/// config file, `--set`, dedicated flags.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration. An optional top-level `preset = "paper" | "desk"`
    /// selects the defaults the file overrides.
    #[arg(long, env = config::CONFIG_ENV, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config field, e.g. `--set train.phase2.lr=0.01` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Master seed (also seeds the synthetic corpus).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results are identical for any count.
    #[arg(long, default_value_t = 1, global = true)]
    pub threads: usize,
    /// Top-M% click-through-rate cut for the breaking set.
    #[arg(long, global = true)]
    pub breaking_percent: Option<f64>,
    /// Drop breaking clicks instead of masking their dwell.
    #[arg(long, global = true)]
    pub hard_drop: bool,
    /// Apply the interest-window condition to dwell values rather than click times.
    #[arg(long, global = true)]
    pub iea_on_dwell: bool,
    /// Beam width for decoding.
    #[arg(long, global = true)]
    pub beam_width: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with planted noise and references.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build the breaking set and filtered histories; score the rule-based baseline.
    Filter {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the four training phases, checkpointing after each.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the latest checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Decode headlines with a trained model.
    Generate {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Specific checkpoint; defaults to the run's latest.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Line-delimited {user_id, article_id} requests; defaults to the
        /// corpus evaluation cases.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// ROUGE of candidate headlines against references, matched on (user_id, article_id).
    Evaluate {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Retrain with components disabled and tabulate relative changes.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated subset of IPL, IEA, SIM, BF, BP.
        #[arg(long, value_delimiter = ',')]
        toggles: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Full versus no-filter models over several seeds of the synthetic corpus.
    DenoiseGain {
        /// Comma-separated seeds; defaults to five consecutive seeds from `--seed`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let path = config::locate(self.config.as_deref())?;
        let mut cfg = config::load(&path, &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.synth.random_seed = s;
        }
        if let Some(p) = self.breaking_percent {
            cfg.filter.breaking_percent = p;
        }
        if self.hard_drop {
            cfg.filter.hard_drop = true;
        }
        if self.iea_on_dwell {
            cfg.filter.iea_on_dwell = true;
        }
        if let Some(b) = self.beam_width {
            cfg.beam_width = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn pool(&self) -> Result<Pool> {
        if self.threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        Pool::new(self.threads)
    }
}

fn say(s: &str) {
    print!("{s}");
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, common } => {
            let cfg = common.resolve()?;
            let c = pipeline::synth(&cfg, &out)?;
            say(&format!(
                "wrote {} articles, {} users, {} references to {}\n",
                c.articles().len(),
                c.histories().len(),
                c.references().len(),
                out.display()
            ));
        }
        Command::Filter { corpus, out, common } => {
            let cfg = common.resolve()?;
            let r = pipeline::filter(&load_corpus(&corpus)?, &cfg, &out)?;
            say(&format!(
                "breaking articles: {}\nshort-dwell rate: {:.2}%\n",
                r.breaking_count,
                100.0 * r.short_dwell_rate
            ));
            if let Some(rb) = r.rule_based {
                say(&format!(
                    "rule-based filter precision {:.4} recall {:.4}\n",
                    rb.precision, rb.recall
                ));
            }
        }
        Command::Train {
            corpus,
            out,
            resume,
            common,
        } => {
            let cfg = common.resolve()?;
            let pool = common.pool()?;
            let s = pipeline::train(&load_corpus(&corpus)?, &cfg, &out, &pool, resume)?;
            say(&serde_json::to_string_pretty(&s).expect("summary serialises"));
            say("\n");
        }
        Command::Generate {
            corpus,
            run,
            out,
            checkpoint,
            pairs,
            common,
        } => {
            let cfg = common.resolve()?;
            let pool = common.pool()?;
            let corpus = load_corpus(&corpus)?;
            let (model, _) = pipeline::load_model(&run, &cfg, checkpoint.as_deref())?;
            let requests: Option<Vec<PairRecord>> = pairs.as_deref().map(read_jsonl).transpose()?;
            let recs = pipeline::generate(&corpus, &cfg, &model, requests.as_deref(), &out, &pool)?;
            say(&format!(
                "wrote {} headlines to {}\n",
                recs.len(),
                out.join(pipeline::GENERATIONS_FILE).display()
            ));
        }
        Command::Evaluate {
            candidates,
            references,
            out,
            common,
        } => {
            let cfg = common.resolve()?;
            let r = pipeline::evaluate_files(&cfg, &candidates, &references, &out)?;
            say(&r.to_tsv());
        }
        Command::Ablate {
            corpus,
            toggles,
            out,
            common,
        } => {
            let cfg = common.resolve()?;
            let pool = common.pool()?;
            let r = pipeline::ablate(&load_corpus(&corpus)?, &cfg, &toggles, &out, &pool)?;
            say(&r.to_tsv());
        }
        Command::DenoiseGain { seeds, out, common } => {
            let cfg = common.resolve()?;
            let pool = common.pool()?;
            let seeds = if seeds.is_empty() {
                (cfg.seed..cfg.seed + 5).collect()
            } else {
                seeds
            };
            let r = pipeline::denoise_gain(&cfg, &seeds, &out, &pool)?;
            say(&r.table().to_tsv());
            say(&r.to_tsv());
        }
    }
    Ok(())
}

/// Parses arguments, runs, and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

