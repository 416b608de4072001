use std::fs;
use std::path::Path;

use phg::checkpoint;
use phg::config;
use phg::error::CliError;
use phg::io::{load_corpus, read_breaking_set, read_jsonl, save_corpus, write_breaking_set};
use phg_core::corpus::{synth_generate, NewsArticle, SynthConfig};
use phg_core::denoise::build_breaking_set;
use phg_core::numeric::{Group, ParamEntry, Tensor};
use phg_core::training::{RunConfig, TrainState};

#[test]
fn corpus_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth_generate(&SynthConfig {
        num_users: 15,
        num_articles: 25,
        ..SynthConfig::default()
    })
    .unwrap();
    save_corpus(dir.path(), &c).unwrap();
    assert_eq!(load_corpus(dir.path()).unwrap(), c);
}

#[test]
fn empty_files_give_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["articles.jsonl", "histories.jsonl", "impressions.jsonl"] {
        fs::write(dir.path().join(f), "").unwrap();
    }
    assert!(load_corpus(dir.path()).unwrap().is_empty());
}

fn write_corpus(dir: &Path, articles: &str, histories: &str) {
    fs::write(dir.join("articles.jsonl"), articles).unwrap();
    fs::write(dir.join("histories.jsonl"), histories).unwrap();
    fs::write(dir.join("impressions.jsonl"), "").unwrap();
}

const ARTICLE: &str =
    r#"{"article_id":"a1","headline":["x"],"body":["x","y"],"topic_id":0,"publish_time":0}"#;

#[test]
fn malformed_line_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &format!("{ARTICLE}\n\n{{\"article_id\": 3}}\n"), "");
    match load_corpus(dir.path()) {
        Err(CliError::Parse { line, path, .. }) => {
            assert_eq!(line, 3);
            assert!(path.ends_with("articles.jsonl"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn dangling_and_negative_records_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let h = r#"{"user_id":"u","events":[{"article_id":"zz","dwell_seconds":3,"click_time":5}]}"#;
    write_corpus(dir.path(), ARTICLE, h);
    assert!(matches!(load_corpus(dir.path()), Err(CliError::Core(phg_core::Error::Reference(_)))));
    let h = r#"{"user_id":"u","events":[{"article_id":"a1","dwell_seconds":-3,"click_time":5}]}"#;
    write_corpus(dir.path(), ARTICLE, h);
    let err = load_corpus(dir.path()).unwrap_err();
    assert!(matches!(err, CliError::Core(phg_core::Error::Validation(_))));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn breaking_set_file() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth_generate(&SynthConfig {
        num_users: 30,
        num_articles: 40,
        burst_article_count: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let set = build_breaking_set(&c, 5.0).unwrap();
    let p = dir.path().join("breaking.txt");
    write_breaking_set(&p, &set).unwrap();
    let ids = read_breaking_set(&p).unwrap();
    assert_eq!(ids, set.article_ids.iter().cloned().collect::<Vec<_>>());
}

fn entries() -> Vec<ParamEntry> {
    vec![
        ParamEntry {
            name: "a.w".into(),
            group: Group::UserEncoder,
            value: Tensor::matrix(2, 3, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 1e300, -0.0]).unwrap(),
        },
        ParamEntry {
            name: "b".into(),
            group: Group::Critic,
            value: Tensor::scalar(0.1),
        },
    ]
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let state = TrainState {
        phase: 3,
        step: 41,
        seed: 9,
    };
    let bytes = checkpoint::encode(&state, &entries());
    let text_end = bytes.windows(5).position(|w| w == b"data\n").unwrap();
    let head = std::str::from_utf8(&bytes[..text_end]).unwrap();
    assert!(head.starts_with("PHGCKPT v1\nphase 3\nstep 41\nseed 9\ntensors 2\na.w xi 2 3\nb critic 1 1\n"));
    assert_eq!(bytes.len(), text_end + 5 + 8 * 7);
    let back = checkpoint::decode(&bytes, Path::new("x")).unwrap();
    assert_eq!(back.state, state);
    for (a, b) in back.params.iter().zip(entries()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.group, b.group);
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let good = checkpoint::encode(&TrainState::new(1), &entries());
    let p = Path::new("ck");
    assert!(checkpoint::decode(&good[..good.len() - 3], p).is_err());
    let mut extra = good.clone();
    extra.push(0);
    assert!(checkpoint::decode(&extra, p).is_err());
    let mut wrong = good.clone();
    wrong[8] = b'9';
    assert!(checkpoint::decode(&wrong, p).is_err());
    let bad_group = String::from_utf8_lossy(&good).replace(" critic ", " nope ");
    assert!(checkpoint::decode(bad_group.as_bytes(), p).is_err());
}

#[test]
fn config_precedence() {
    let p = Path::new("run.toml");
    let cfg = config::resolve("", &[], p).unwrap();
    assert_eq!(cfg, RunConfig::default());
    let cfg = config::resolve("preset = \"desk\"\n", &[], p).unwrap();
    assert_eq!(cfg, RunConfig::desk());
    let text = "preset = \"desk\"\nseed = 3\n[train.phase2]\nlr = 0.5\n";
    let cfg = config::resolve(text, &["train.phase2.lr=0.25".into(), "label=abc".into()], p).unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.train.phase2.lr, 0.25);
    assert_eq!(cfg.train.phase2.epochs, RunConfig::desk().train.phase2.epochs);
    assert_eq!(cfg.label, "abc");
}

#[test]
fn config_errors() {
    let p = Path::new("run.toml");
    assert!(matches!(config::resolve("bogus = 1\n", &[], p), Err(CliError::Format { .. })));
    assert!(matches!(config::resolve("preset = \"huge\"\n", &[], p), Err(CliError::Format { .. })));
    assert!(matches!(config::resolve("", &["noequals".into()], p), Err(CliError::Usage(_))));
    let err = config::resolve("[model]\nheads = 5\n", &[], p).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn echoed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::desk();
    cfg.filter.iea_window_seconds = None;
    cfg.toggles.sim = false;
    config::echo(dir.path(), &cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(text.contains("iea_window_seconds = \"unbounded\""));
    assert_eq!(config::load(&dir.path().join("config.toml"), &[]).unwrap(), cfg);
}

#[test]
fn jsonl_records_ignore_blank_lines() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.jsonl");
    fs::write(&p, format!("\n{ARTICLE}\n   \n{ARTICLE}\n")).unwrap();
    let v: Vec<NewsArticle> = read_jsonl(&p).unwrap();
    assert_eq!(v.len(), 2);
}
