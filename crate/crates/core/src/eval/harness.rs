//! Generation over the held-out split, the ablation table and the
//! denoising-gain experiment.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::rouge::corpus_rouge;
use crate::corpus::{is_heldout_index, synth_generate, Corpus, Token};
use crate::error::{Error, Result};
use crate::training::{mean_std, train, Ablation, Executor, Model, NullObserver, Prepared, RunConfig, Toggles};

/// One (user, held-out article) pair with the headline it is scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub user_id: String,
    pub article_id: String,
    pub reference: Vec<Token>,
}

/// Personalised references when the corpus has them; otherwise clicks of
/// held-out users on held-out articles, scored against the original headline.
pub fn evaluation_cases(corpus: &Corpus) -> Vec<EvalCase> {
    if !corpus.references().is_empty() {
        return corpus
            .references()
            .iter()
            .map(|r| EvalCase {
                user_id: r.user_id.clone(),
                article_id: r.article_id.clone(),
                reference: r.headline.clone(),
            })
            .collect();
    }
    let mut out: Vec<EvalCase> = Vec::new();
    for (u, h) in corpus.histories().iter().enumerate() {
        if !is_heldout_index(u) {
            continue;
        }
        for e in &h.events {
            let Some(a) = corpus.article_index(&e.article_id) else { continue };
            if !is_heldout_index(a) || out.iter().any(|c| c.user_id == h.user_id && c.article_id == e.article_id) {
                continue;
            }
            out.push(EvalCase {
                user_id: h.user_id.clone(),
                article_id: e.article_id.clone(),
                reference: corpus.articles()[a].headline.clone(),
            });
        }
    }
    out
}

/// A generated headline and what it was scored with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutput {
    pub user_id: String,
    pub article_id: String,
    pub headline: Vec<Token>,
    pub reference: Vec<Token>,
    pub alpha: f64,
    pub score: f64,
    pub reward: f64,
}

/// Beam-decodes one headline; `alpha` is forced to 0 when the breaking
/// predictor is toggled off.
pub fn generate_case(model: &Model, data: &Prepared<'_>, cfg: &RunConfig, case: &EvalCase) -> Result<CaseOutput> {
    let article = data
        .corpus
        .article(&case.article_id)
        .ok_or_else(|| Error::Reference(format!("article {}", case.article_id)))?;
    let history = data
        .history_by_id(&case.user_id)
        .ok_or_else(|| Error::Reference(format!("user {}", case.user_id)))?;
    let user = model.user_summary(history, &data.facets)?.vector;
    let alpha = if cfg.toggles.bp { model.alpha(&article.body)? } else { 0.0 };
    let g = model.generate(&article.body, &user, alpha, cfg.beam_width)?;
    let reward = model.reward(&g.tokens, &article.headline, &user, cfg.train.reward)?;
    Ok(CaseOutput {
        user_id: case.user_id.clone(),
        article_id: case.article_id.clone(),
        headline: g.tokens,
        reference: case.reference.clone(),
        alpha,
        score: g.score,
        reward,
    })
}

/// Mean ROUGE F1 and reward, as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VariantScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub reward: f64,
}

impl VariantScores {
    pub const METRICS: [&'static str; 4] = ["ROUGE-1", "ROUGE-2", "ROUGE-L", "reward"];

    pub fn from_outputs(outputs: &[CaseOutput]) -> Self {
        let pairs: Vec<(&[Token], &[Token])> = outputs
            .iter()
            .map(|o| (o.headline.as_slice(), o.reference.as_slice()))
            .collect();
        let r = corpus_rouge::<Token, _>(&pairs);
        let reward = mean_std(&outputs.iter().map(|o| o.reward).collect::<Vec<_>>()).0;
        Self {
            rouge1: r.rouge1,
            rouge2: r.rouge2,
            rouge_l: r.rouge_l,
            reward,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.rouge1, self.rouge2, self.rouge_l, self.reward]
    }
}

/// Generates for every case and scores the batch.
pub fn evaluate<E: Executor>(
    model: &Model,
    data: &Prepared<'_>,
    cfg: &RunConfig,
    cases: &[EvalCase],
    exec: &E,
) -> Result<(VariantScores, Vec<CaseOutput>)> {
    if cases.is_empty() {
        return Err(Error::Empty("evaluation cases"));
    }
    let outputs = exec
        .map(cases.len(), |i| generate_case(model, data, cfg, &cases[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((VariantScores::from_outputs(&outputs), outputs))
}

/// Relative change of `x` against `base` in percent; 0 when both are 0 and
/// `None` when only the base is 0.
pub fn relative_delta(base: f64, x: f64) -> Option<f64> {
    if base == 0.0 {
        return (x == 0.0).then_some(0.0);
    }
    Some(100.0 * (x - base) / base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub scores: VariantScores,
    /// Relative % change per metric against the first row.
    pub deltas: [Option<f64>; 4],
}

/// Scores of the full model followed by its variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn new(full: VariantScores, variants: Vec<(String, VariantScores)>) -> Self {
        let base = full.values();
        let mut rows = Vec::with_capacity(variants.len() + 1);
        rows.push(AblationRow {
            variant: "full".into(),
            scores: full,
            deltas: [Some(0.0); 4],
        });
        for (variant, scores) in variants {
            let v = scores.values();
            let deltas = core::array::from_fn(|k| relative_delta(base[k], v[k]));
            rows.push(AblationRow { variant, scores, deltas });
        }
        Self { rows }
    }

    /// Table-1 style: scores on a 0–100 scale, variants annotated with their
    /// relative change.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("model");
        for m in VariantScores::METRICS {
            s.push('\t');
            s.push_str(m);
        }
        s.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            s.push_str(&row.variant);
            for (v, d) in row.scores.values().iter().zip(row.deltas) {
                let _ = write!(s, "\t{:.2}", 100.0 * v);
                if i > 0 {
                    match d {
                        Some(d) => {
                            let _ = write!(s, " ({d:+.2}%)");
                        }
                        None => s.push_str(" (n/a)"),
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

pub fn variant_name(ablation: Ablation) -> String {
    format!("-w/o {}", ablation.name())
}

/// Parses toggle names, rejecting unknown and repeated ones.
pub fn parse_toggles<S: AsRef<str>>(names: &[S]) -> Result<Vec<Ablation>> {
    let mut out = Vec::with_capacity(names.len());
    for n in names {
        let a = Ablation::parse(n.as_ref())?;
        if out.contains(&a) {
            return Err(Error::Config(format!("ablation toggle {} given twice", a.name())));
        }
        out.push(a);
    }
    Ok(out)
}

/// Configuration of an ablated variant: same everything, one component off.
pub fn ablated_config(cfg: &RunConfig, ablation: Ablation) -> RunConfig {
    let mut c = cfg.clone();
    c.toggles = ablation.apply(c.toggles);
    c.label = variant_name(ablation);
    c
}

/// Trains one configuration from scratch and scores it on the held-out cases.
pub fn train_and_evaluate<E: Executor>(
    corpus: &Corpus,
    cfg: &RunConfig,
    exec: &E,
) -> Result<(Model, VariantScores, Vec<CaseOutput>)> {
    let (model, _, _) = train(corpus, cfg, exec, &mut NullObserver)?;
    let data = Prepared::new(corpus, cfg)?;
    let (scores, outputs) = evaluate(&model, &data, cfg, &evaluation_cases(corpus), exec)?;
    Ok((model, scores, outputs))
}

/// Retrains once per toggle with that component disabled and tabulates the
/// result against the full model.
pub fn run_ablations<E: Executor, S: AsRef<str>>(
    corpus: &Corpus,
    cfg: &RunConfig,
    toggles: &[S],
    exec: &E,
) -> Result<AblationReport> {
    let ablations = parse_toggles(toggles)?;
    let (_, full, _) = train_and_evaluate(corpus, cfg, exec)?;
    let mut variants = Vec::with_capacity(ablations.len());
    for a in ablations {
        let (_, scores, _) = train_and_evaluate(corpus, &ablated_config(cfg, a), exec)?;
        variants.push((variant_name(a), scores));
    }
    Ok(AblationReport::new(full, variants))
}

/// Scores of the dual-filtering model and its no-filter twin on one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub full: VariantScores,
    pub no_filter: VariantScores,
}

/// Checks that two configurations differ only in the denoising switches:
/// the first has them on, the second has them off.
pub fn check_denoise_pair(full: &RunConfig, no_filter: &RunConfig) -> Result<()> {
    let on = Toggles::default();
    let off = Toggles::no_filter();
    let same_components = Toggles {
        bf: on.bf,
        dwell_weighting: on.dwell_weighting,
        ..no_filter.toggles
    } == full.toggles;
    if full.toggles.bf != on.bf || full.toggles.dwell_weighting != on.dwell_weighting {
        return Err(Error::Config("denoising variant must have the dual filter on".into()));
    }
    if no_filter.toggles.bf != off.bf || no_filter.toggles.dwell_weighting != off.dwell_weighting {
        return Err(Error::Config("baseline variant must have the dual filter off".into()));
    }
    let mut a = full.clone();
    let mut b = no_filter.clone();
    a.label.clear();
    b.label.clear();
    b.toggles = a.toggles;
    if !same_components || a != b {
        return Err(Error::Config("variants differ beyond the dual filter".into()));
    }
    Ok(())
}

pub fn no_filter_config(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.toggles.bf = false;
    c.toggles.dwell_weighting = false;
    c.label = "no-filter".into();
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub metric: String,
    pub variant: String,
    pub mean: f64,
    pub std: f64,
    /// Per-seed relative % change against the no-filter variant: mean, std.
    pub delta_mean: f64,
    pub delta_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseGainReport {
    pub seeds: Vec<u64>,
    pub outcomes: Vec<SeedOutcome>,
    /// One row per metric and variant.
    pub rows: Vec<GainRow>,
}

impl DenoiseGainReport {
    /// Mean scores in the ablation table layout, with the no-filter model as
    /// a variant of the full one.
    pub fn table(&self) -> AblationReport {
        let mean = |f: fn(&SeedOutcome) -> VariantScores| {
            let col = |k: usize| mean_std(&self.outcomes.iter().map(|o| f(o).values()[k]).collect::<Vec<_>>()).0;
            VariantScores {
                rouge1: col(0),
                rouge2: col(1),
                rouge_l: col(2),
                reward: col(3),
            }
        };
        AblationReport::new(mean(|o| o.full), alloc::vec![("no-filter".into(), mean(|o| o.no_filter))])
    }

    pub fn mean_rouge_l(&self) -> (f64, f64) {
        let t = self.table();
        (t.rows[0].scores.rouge_l, t.rows[1].scores.rouge_l)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tvariant\tmean\tstd\tdelta_mean_%\tdelta_std_%\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
                r.metric,
                r.variant,
                100.0 * r.mean,
                100.0 * r.std,
                r.delta_mean,
                r.delta_std
            );
        }
        s
    }
}

/// Aggregates per-seed outcomes into per-metric, per-variant rows.
pub fn denoise_gain(outcomes: &[SeedOutcome]) -> Result<DenoiseGainReport> {
    if outcomes.is_empty() {
        return Err(Error::Empty("denoise-gain outcomes"));
    }
    let mut rows = Vec::new();
    for (k, metric) in VariantScores::METRICS.iter().enumerate() {
        let deltas: Vec<f64> = outcomes
            .iter()
            .map(|o| relative_delta(o.no_filter.values()[k], o.full.values()[k]).unwrap_or(0.0))
            .collect();
        let (dm, ds) = mean_std(&deltas);
        let variants: [(&str, fn(&SeedOutcome) -> VariantScores, f64, f64); 2] =
            [("full", |o| o.full, dm, ds), ("no-filter", |o| o.no_filter, 0.0, 0.0)];
        for (name, pick, delta_mean, delta_std) in variants {
            let (mean, std) = mean_std(&outcomes.iter().map(|o| pick(o).values()[k]).collect::<Vec<_>>());
            rows.push(GainRow {
                metric: (*metric).into(),
                variant: name.into(),
                mean,
                std,
                delta_mean,
                delta_std,
            });
        }
    }
    Ok(DenoiseGainReport {
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        outcomes: outcomes.to_vec(),
        rows,
    })
}

/// Trains both variants on a fresh planted-noise corpus per seed.
pub fn run_denoise_gain<E: Executor>(cfg: &RunConfig, seeds: &[u64], exec: &E) -> Result<DenoiseGainReport> {
    if seeds.is_empty() {
        return Err(Error::Empty("seeds"));
    }
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut full_cfg = cfg.clone();
        full_cfg.seed = seed;
        full_cfg.synth.random_seed = seed;
        let base_cfg = no_filter_config(&full_cfg);
        check_denoise_pair(&full_cfg, &base_cfg)?;
        let corpus = synth_generate(&full_cfg.synth)?;
        let (_, full, _) = train_and_evaluate(&corpus, &full_cfg, exec)?;
        let (_, no_filter, _) = train_and_evaluate(&corpus, &base_cfg, exec)?;
        outcomes.push(SeedOutcome { seed, full, no_filter });
    }
    denoise_gain(&outcomes)
}
