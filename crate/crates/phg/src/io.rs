//! Line-delimited JSON corpus files and small text artifacts.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use phg_core::corpus::{Corpus, HeadlineReference, ImpressionLog, NewsArticle, UserHistory};
use phg_core::denoise::BreakingSet;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const ARTICLES: &str = "articles.jsonl";
pub const HISTORIES: &str = "histories.jsonl";
pub const IMPRESSIONS: &str = "impressions.jsonl";
pub const REFERENCES: &str = "references.jsonl";

/// One record per nonblank line; errors name the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Reads the three corpus files and, when present, `references.jsonl`.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let articles: Vec<NewsArticle> = read_jsonl(&dir.join(ARTICLES))?;
    let histories: Vec<UserHistory> = read_jsonl(&dir.join(HISTORIES))?;
    let impressions: Vec<ImpressionLog> = read_jsonl(&dir.join(IMPRESSIONS))?;
    let corpus = Corpus::new(articles, histories, impressions)?;
    let refs = dir.join(REFERENCES);
    if refs.exists() {
        let references: Vec<HeadlineReference> = read_jsonl(&refs)?;
        return Ok(corpus.with_references(references)?);
    }
    Ok(corpus)
}

pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    create_dir(dir)?;
    write_jsonl(&dir.join(ARTICLES), corpus.articles())?;
    write_jsonl(&dir.join(HISTORIES), corpus.histories())?;
    write_jsonl(&dir.join(IMPRESSIONS), corpus.impressions())?;
    if !corpus.references().is_empty() {
        write_jsonl(&dir.join(REFERENCES), corpus.references())?;
    }
    Ok(())
}

/// One article id per line, sorted.
pub fn write_breaking_set(path: &Path, set: &BreakingSet) -> Result<()> {
    let mut s = String::new();
    for id in &set.article_ids {
        s.push_str(id);
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn read_breaking_set(path: &Path) -> Result<Vec<String>> {
    let s = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(s.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}
