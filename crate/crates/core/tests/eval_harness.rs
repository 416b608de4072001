use phg_core::corpus::{synth_generate, Corpus};
use phg_core::error::Error;
use phg_core::eval::*;
use phg_core::numeric::Tape;
use phg_core::training::{build_model, Ablation, PhaseConfig, Prepared, RunConfig, Sequential};

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.synth.num_users = 20;
    cfg.synth.num_articles = 30;
    cfg.synth.clicks_per_user = 10;
    cfg.synth.reference_pairs = 4;
    cfg.beam_width = 2;
    cfg.train.phase1.epochs = 1;
    cfg.train.phase2.epochs = 1;
    cfg.train.phase2.max_examples = 16;
    cfg.train.phase3.epochs = 2;
    cfg.train.phase4 = PhaseConfig {
        epochs: 1,
        lr: 1e-3,
        batch: 2,
        max_examples: 2,
    };
    cfg.train.a2c_samples = 2;
    cfg
}

fn scores(x: f64) -> VariantScores {
    VariantScores {
        rouge1: x,
        rouge2: x / 2.0,
        rouge_l: x,
        reward: 0.5,
    }
}

#[test]
fn relative_deltas() {
    assert_eq!(relative_delta(0.5, 0.5), Some(0.0));
    assert_eq!(relative_delta(0.4, 0.3).map(|d| (d * 1e9).round() / 1e9), Some(-25.0));
    assert_eq!(relative_delta(0.0, 0.0), Some(0.0));
    assert_eq!(relative_delta(0.0, 0.1), None);
}

#[test]
fn ablation_table_layout() {
    let r = AblationReport::new(scores(0.4), vec![("-w/o SIM".into(), scores(0.3))]);
    let tsv = r.to_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "model\tROUGE-1\tROUGE-2\tROUGE-L\treward");
    assert_eq!(lines[1], "full\t40.00\t20.00\t40.00\t50.00");
    assert_eq!(lines[2], "-w/o SIM\t30.00 (-25.00%)\t15.00 (-25.00%)\t30.00 (-25.00%)\t50.00 (+0.00%)");
    assert_eq!(lines.len(), 3);
}

#[test]
fn toggle_parsing() {
    assert_eq!(parse_toggles(&["sim", "BP"]).unwrap(), vec![Ablation::Sim, Ablation::Bp]);
    assert!(matches!(parse_toggles(&["XYZ"]), Err(Error::Config(_))));
    assert!(matches!(parse_toggles(&["SIM", "sim"]), Err(Error::Config(_))));
    let c = tiny();
    assert!(matches!(run_ablations(&synth_generate(&c.synth).unwrap(), &c, &["nope"], &Sequential), Err(Error::Config(_))));
}

#[test]
fn empty_toggle_set_reports_only_full_model() {
    let c = tiny();
    let corpus = synth_generate(&c.synth).unwrap();
    let r = run_ablations::<_, &str>(&corpus, &c, &[], &Sequential).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert_eq!(r.rows[0].variant, "full");
}

#[test]
fn ablation_rows_follow_request() {
    let c = tiny();
    let corpus = synth_generate(&c.synth).unwrap();
    let r = run_ablations(&corpus, &c, &["SIM"], &Sequential).unwrap();
    let names: Vec<&str> = r.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["full", "-w/o SIM"]);
}

#[test]
fn without_sim_zeroes_exactly_that_facet() {
    let c = ablated_config(&tiny(), Ablation::Sim);
    let corpus = synth_generate(&c.synth).unwrap();
    let data = Prepared::new(&corpus, &c).unwrap();
    let model = build_model(&corpus, &c).unwrap();
    let mut tape = Tape::new();
    let enc = model
        .user
        .encode_user(&mut tape, &model.store, &model.vocab, data.history(0), &data.facets)
        .unwrap();
    assert!(tape.value(enc.facets[2]).data().iter().all(|&x| x == 0.0));
    assert!(tape.value(enc.facets[0]).data().iter().any(|&x| x != 0.0));
    assert!(tape.value(enc.facets[1]).data().iter().any(|&x| x != 0.0));
}

#[test]
fn without_bp_forces_zero_alpha() {
    let c = ablated_config(&tiny(), Ablation::Bp);
    let corpus = synth_generate(&c.synth).unwrap();
    let data = Prepared::new(&corpus, &c).unwrap();
    let model = build_model(&corpus, &c).unwrap();
    let cases = evaluation_cases(&corpus);
    assert!(!cases.is_empty());
    let (_, outputs) = evaluate(&model, &data, &c, &cases, &Sequential).unwrap();
    assert!(outputs.iter().all(|o| o.alpha == 0.0));
    let full = tiny();
    let data = Prepared::new(&corpus, &full).unwrap();
    let (_, outputs) = evaluate(&model, &data, &full, &cases, &Sequential).unwrap();
    assert!(outputs.iter().all(|o| o.alpha > 0.0));
}

#[test]
fn fallback_cases_are_heldout_clicks() {
    let c = tiny();
    let corpus = synth_generate(&c.synth).unwrap();
    let bare = Corpus::new(corpus.articles().to_vec(), corpus.histories().to_vec(), corpus.impressions().to_vec()).unwrap();
    let cases = evaluation_cases(&bare);
    assert!(!cases.is_empty());
    for case in &cases {
        let a = bare.article_index(&case.article_id).unwrap();
        assert_eq!(a % 5, 4);
        assert_eq!(case.reference, bare.articles()[a].headline);
    }
}

#[test]
fn identical_variants_show_no_gain() {
    let outcomes: Vec<SeedOutcome> = (0..5)
        .map(|s| SeedOutcome {
            seed: s,
            full: scores(0.3 + s as f64 / 100.0),
            no_filter: scores(0.3 + s as f64 / 100.0),
        })
        .collect();
    let r = denoise_gain(&outcomes).unwrap();
    assert_eq!(r.rows.len(), VariantScores::METRICS.len() * 2);
    assert!(r.rows.iter().all(|row| row.delta_mean == 0.0 && row.delta_std == 0.0));
    let t = r.table();
    assert!(t.rows[1].deltas.iter().all(|d| *d == Some(0.0)));
    assert!(matches!(denoise_gain(&[]), Err(Error::Empty(_))));
}

#[test]
fn denoise_pair_must_match() {
    let c = tiny();
    check_denoise_pair(&c, &no_filter_config(&c)).unwrap();
    let mut other = no_filter_config(&c);
    other.train.phase2.lr *= 2.0;
    assert!(matches!(check_denoise_pair(&c, &other), Err(Error::Config(_))));
    let mut other = no_filter_config(&c);
    other.toggles.sim = false;
    assert!(matches!(check_denoise_pair(&c, &other), Err(Error::Config(_))));
    assert!(matches!(check_denoise_pair(&c, &c), Err(Error::Config(_))));
}

#[test]
fn denoise_gain_runs_per_seed() {
    let r = run_denoise_gain(&tiny(), &[1, 2], &Sequential).unwrap();
    assert_eq!(r.seeds, vec![1, 2]);
    assert_eq!(r.rows.len(), 8);
    assert_eq!(r.to_tsv().lines().count(), 9);
    let (full, base) = r.mean_rouge_l();
    assert!((0.0..=1.0).contains(&full) && (0.0..=1.0).contains(&base));
}
