//! Subcommand bodies. Each reads and writes the documented files under the
//! directories it is given and echoes the effective config into every output
//! directory.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use phg_core::corpus::{synth_generate, Corpus, Token};
use phg_core::denoise::{build_breaking_set, recovery, rule_based_filter, Recovery};
use phg_core::eval::{
    corpus_rouge, evaluate, evaluation_cases, run_ablations, run_denoise_gain, AblationReport, DenoiseGainReport,
    EvalCase, RougeTriple,
};
use phg_core::training::{
    build_model, Executor, MetricRecord, Model, Observer, Prepared, RunConfig, Session, TrainState, TrainSummary,
};
use phg_core::user_encoder::Facet;
use phg_core::vocab::Vocab;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config;
use crate::error::{CliError, Result};
use crate::io::{self, read_json, read_jsonl, write_json, write_jsonl, write_text};

pub const BREAKING_FILE: &str = "breaking.txt";
pub const VOCAB_FILE: &str = "vocab.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const GENERATIONS_FILE: &str = "generations.jsonl";

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    io::create_dir(out)?;
    config::echo(out, cfg)
}

/// Writes a synthetic corpus with planted noise flags and references.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Corpus> {
    let corpus = synth_generate(&cfg.synth)?;
    prepare_out(out, cfg)?;
    io::save_corpus(out, &corpus)?;
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub breaking_percent: f64,
    pub breaking_count: usize,
    pub clicks: usize,
    /// Share of clicks below the short-dwell threshold.
    pub short_dwell_rate: f64,
    /// Rule-based baseline against planted noise, when the corpus has flags.
    pub rule_based: Option<Recovery>,
}

/// Breaking set, news-level filtered histories and the rule-based baseline.
pub fn filter(corpus: &Corpus, cfg: &RunConfig, out: &Path) -> Result<FilterReport> {
    prepare_out(out, cfg)?;
    let data = Prepared::new(corpus, cfg)?;
    let breaking = build_breaking_set(corpus, cfg.filter.breaking_percent)?;
    io::write_breaking_set(&out.join(BREAKING_FILE), &breaking)?;
    let filtered = corpus
        .histories()
        .iter()
        .map(|h| data.filter(h))
        .collect::<Result<Vec<_>, _>>()?;
    write_jsonl(&out.join("filtered_histories.jsonl"), &filtered)?;
    let rule: Vec<_> = corpus
        .histories()
        .iter()
        .map(|h| rule_based_filter(h, cfg.filter.min_dwell_seconds, &breaking))
        .collect();
    write_jsonl(&out.join("rule_filtered_histories.jsonl"), &rule)?;
    let clicks = corpus.click_count();
    let short = corpus
        .histories()
        .iter()
        .flat_map(|h| &h.events)
        .filter(|e| e.dwell_seconds < cfg.filter.min_dwell_seconds)
        .count();
    let flagged = corpus
        .histories()
        .iter()
        .flat_map(|h| &h.events)
        .any(|e| e.planted_noise().is_some());
    let report = FilterReport {
        breaking_percent: cfg.filter.breaking_percent,
        breaking_count: breaking.len(),
        clicks,
        short_dwell_rate: if clicks == 0 { 0.0 } else { short as f64 / clicks as f64 },
        rule_based: flagged.then(|| recovery(corpus.histories(), &rule)),
    };
    write_json(&out.join("filter_report.json"), &report)?;
    Ok(report)
}

/// Metrics sink and per-phase checkpoint writer.
pub struct RunObserver {
    start: Instant,
    metrics: BufWriter<File>,
    metrics_path: PathBuf,
    checkpoints: PathBuf,
}

impl RunObserver {
    pub fn new(out: &Path, append: bool) -> Result<Self> {
        let metrics_path = out.join(METRICS_FILE);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&metrics_path)
            .map_err(|e| CliError::io(&metrics_path, e))?;
        let checkpoints = out.join(CHECKPOINT_DIR);
        io::create_dir(&checkpoints)?;
        Ok(Self {
            start: Instant::now(),
            metrics: BufWriter::new(file),
            metrics_path,
            checkpoints,
        })
    }
}

fn io_core(path: &Path, e: std::io::Error) -> phg_core::error::Error {
    phg_core::error::Error::Host(format!("{}: {e}", path.display()))
}

impl Observer for RunObserver {
    fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn metric(&mut self, record: &MetricRecord) -> phg_core::error::Result<()> {
        let line = serde_json::to_string(record).expect("metric records serialise");
        writeln!(self.metrics, "{line}")
            .and_then(|_| self.metrics.flush())
            .map_err(|e| io_core(&self.metrics_path, e))
    }

    fn phase_end(&mut self, state: &TrainState, model: &Model) -> phg_core::error::Result<()> {
        let path = checkpoint_path(&self.checkpoints, state.phase);
        std::fs::write(&path, checkpoint::encode(state, model.store.entries())).map_err(|e| io_core(&path, e))
    }
}

pub fn checkpoint_path(dir: &Path, phase: u8) -> PathBuf {
    dir.join(format!("phase{phase}.ckpt"))
}

/// Most advanced checkpoint in a run directory.
pub fn latest_checkpoint(run: &Path) -> Option<PathBuf> {
    (1..=4u8)
        .rev()
        .map(|p| checkpoint_path(&run.join(CHECKPOINT_DIR), p))
        .find(|p| p.exists())
}

/// Trains every phase, or the remaining ones when `resume` finds a
/// checkpoint in `out` written under the same configuration.
pub fn train<E: Executor>(corpus: &Corpus, cfg: &RunConfig, out: &Path, exec: &E, resume: bool) -> Result<TrainSummary> {
    io::create_dir(out)?;
    let mut model = build_model(corpus, cfg)?;
    let mut state = TrainState::new(cfg.seed);
    let mut summary = TrainSummary::default();
    let resumed = if resume { latest_checkpoint(out) } else { None };
    if let Some(path) = &resumed {
        let echoed = out.join(config::ECHO_FILE);
        let previous = config::load(&echoed, &[])?;
        if &previous != cfg {
            return Err(CliError::format(&echoed, "run was started with a different configuration"));
        }
        let vocab: Vocab = read_json(&out.join(VOCAB_FILE))?;
        if vocab != model.vocab {
            return Err(CliError::format(&out.join(VOCAB_FILE), "vocabulary does not match the corpus"));
        }
        let ck = checkpoint::load(path)?;
        model.load_params(&ck.params)?;
        state = ck.state;
        if out.join(SUMMARY_FILE).exists() {
            summary = read_json(&out.join(SUMMARY_FILE))?;
        }
    } else {
        config::echo(out, cfg)?;
        write_json(&out.join(VOCAB_FILE), &model.vocab)?;
    }
    let data = Prepared::new(corpus, cfg)?;
    let mut observer = RunObserver::new(out, resumed.is_some())?;
    let mut session = Session {
        cfg,
        data: &data,
        exec,
        observer: &mut observer,
    };
    let fresh = session.run_all(&mut model, &mut state)?;
    summary.phase1 = fresh.phase1.or(summary.phase1);
    summary.phase2 = fresh.phase2.or(summary.phase2);
    summary.phase3 = fresh.phase3.or(summary.phase3);
    summary.phase4 = fresh.phase4.or(summary.phase4);
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Model from a run directory's vocabulary and a checkpoint.
pub fn load_model(run: &Path, cfg: &RunConfig, ckpt: Option<&Path>) -> Result<(Model, TrainState)> {
    let vocab: Vocab = read_json(&run.join(VOCAB_FILE))?;
    let path = match ckpt {
        Some(p) => p.to_path_buf(),
        None => latest_checkpoint(run)
            .ok_or_else(|| CliError::format(run, "run directory has no checkpoints"))?,
    };
    let ck = checkpoint::load(&path)?;
    let mut model = Model::new(vocab, &cfg.model, cfg.seed)?;
    model.load_params(&ck.params).map_err(|e| CliError::format(&path, e.to_string()))?;
    Ok((model, ck.state))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetWeights {
    pub ipl: f64,
    pub iea: f64,
    pub sim: f64,
}

/// One line of `generations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub user_id: String,
    pub article_id: String,
    pub headline: Vec<Token>,
    pub score: f64,
    pub alpha: f64,
    pub facet_weights: FacetWeights,
}

/// A (user, article) request; references and generation records also parse as this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub user_id: String,
    pub article_id: String,
    #[serde(default)]
    pub headline: Vec<Token>,
}

/// Beam-decodes a headline for every requested pair (default: the
/// evaluation cases of the corpus).
pub fn generate<E: Executor>(
    corpus: &Corpus,
    cfg: &RunConfig,
    model: &Model,
    pairs: Option<&[PairRecord]>,
    out: &Path,
    exec: &E,
) -> Result<Vec<GenerationRecord>> {
    prepare_out(out, cfg)?;
    let data = Prepared::new(corpus, cfg)?;
    let cases: Vec<EvalCase> = match pairs {
        Some(p) => p
            .iter()
            .map(|r| EvalCase {
                user_id: r.user_id.clone(),
                article_id: r.article_id.clone(),
                reference: r.headline.clone(),
            })
            .collect(),
        None => evaluation_cases(corpus),
    };
    let (_, outputs) = evaluate(model, &data, cfg, &cases, exec)?;
    let weights = exec
        .map(outputs.len(), |i| {
            let h = data.history_by_id(&outputs[i].user_id).expect("evaluated user exists");
            model.user_summary(h, &data.facets).map(|s| s.facet_weights)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let records: Vec<GenerationRecord> = outputs
        .into_iter()
        .zip(weights)
        .map(|(o, w)| GenerationRecord {
            user_id: o.user_id,
            article_id: o.article_id,
            headline: o.headline,
            score: o.score,
            alpha: o.alpha,
            facet_weights: FacetWeights {
                ipl: w[Facet::Ipl as usize],
                iea: w[Facet::Iea as usize],
                sim: w[Facet::Sim as usize],
            },
        })
        .collect();
    write_jsonl(&out.join(GENERATIONS_FILE), &records)?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub pairs: usize,
    /// References with no matching candidate; scored as empty headlines.
    pub missing: usize,
    pub scores: RougeTriple,
}

impl RougeReport {
    pub fn to_tsv(&self) -> String {
        format!(
            "ROUGE-1\tROUGE-2\tROUGE-L\tpairs\tmissing\n{:.2}\t{:.2}\t{:.2}\t{}\t{}\n",
            100.0 * self.scores.rouge1,
            100.0 * self.scores.rouge2,
            100.0 * self.scores.rouge_l,
            self.pairs,
            self.missing
        )
    }
}

/// Scores candidate headlines against references matched on (user, article).
pub fn evaluate_files(cfg: &RunConfig, candidates: &Path, references: &Path, out: &Path) -> Result<RougeReport> {
    let cands: Vec<PairRecord> = read_jsonl(candidates)?;
    let refs: Vec<PairRecord> = read_jsonl(references)?;
    let mut by_key: BTreeMap<(&str, &str), &[Token]> = BTreeMap::new();
    for c in &cands {
        if by_key
            .insert((c.user_id.as_str(), c.article_id.as_str()), c.headline.as_slice())
            .is_some()
        {
            return Err(CliError::format(
                candidates,
                format!("duplicate candidate for ({}, {})", c.user_id, c.article_id),
            ));
        }
    }
    let mut missing = 0;
    let pairs: Vec<(&[Token], &[Token])> = refs
        .iter()
        .map(|r| {
            let c = by_key.get(&(r.user_id.as_str(), r.article_id.as_str())).copied();
            missing += usize::from(c.is_none());
            (c.unwrap_or(&[]), r.headline.as_slice())
        })
        .collect();
    let report = RougeReport {
        pairs: pairs.len(),
        missing,
        scores: corpus_rouge::<Token, _>(&pairs),
    };
    prepare_out(out, cfg)?;
    write_text(&out.join("rouge.tsv"), &report.to_tsv())?;
    write_json(&out.join("rouge.json"), &report)?;
    Ok(report)
}

pub fn ablate<E: Executor>(corpus: &Corpus, cfg: &RunConfig, toggles: &[String], out: &Path, exec: &E) -> Result<AblationReport> {
    prepare_out(out, cfg)?;
    let report = run_ablations(corpus, cfg, toggles, exec)?;
    write_text(&out.join("ablation.tsv"), &report.to_tsv())?;
    write_json(&out.join("ablation.json"), &report)?;
    Ok(report)
}

pub fn denoise_gain<E: Executor>(cfg: &RunConfig, seeds: &[u64], out: &Path, exec: &E) -> Result<DenoiseGainReport> {
    prepare_out(out, cfg)?;
    let report = run_denoise_gain(cfg, seeds, exec)?;
    write_text(&out.join("denoise_gain.tsv"), &report.to_tsv())?;
    write_text(&out.join("denoise_table.tsv"), &report.table().to_tsv())?;
    write_json(&out.join("denoise_gain.json"), &report)?;
    Ok(report)
}
