//! Scoring and the experiment harnesses built on it.

mod harness;
mod rouge;

pub use harness::{
    ablated_config, check_denoise_pair, denoise_gain, evaluate, evaluation_cases, generate_case, no_filter_config,
    parse_toggles, relative_delta, run_ablations, run_denoise_gain, train_and_evaluate, variant_name, AblationReport,
    AblationRow, CaseOutput, DenoiseGainReport, EvalCase, GainRow, SeedOutcome, VariantScores,
};
pub use rouge::{corpus_rouge, lcs_len, rouge_l, rouge_n, RougeScore, RougeTriple};
