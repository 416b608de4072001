//! News-level and time-level click filtering plus the dwell/CTR rule baseline.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{compute_ctr, Corpus, Token, UserHistory};
use crate::error::{Error, Result};

/// Default breaking threshold, in percent of the corpus.
pub const DEFAULT_BREAKING_PERCENT: f64 = 0.10;
/// Dwell above which a read is excluded from the stable-interest mean.
pub const DEFAULT_OUTLIER_CAP: f64 = 3000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakingSet {
    pub article_ids: BTreeSet<String>,
    pub threshold_percent: f64,
}

impl BreakingSet {
    pub fn empty() -> Self {
        Self {
            article_ids: BTreeSet::new(),
            threshold_percent: 0.0,
        }
    }

    pub fn contains(&self, article_id: &str) -> bool {
        self.article_ids.contains(article_id)
    }

    pub fn len(&self) -> usize {
        self.article_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.article_ids.is_empty()
    }
}

/// Number of articles selected by a top-`percent` cut over `n` articles.
pub fn breaking_count(percent: f64, n: usize) -> usize {
    let exact = percent / 100.0 * n as f64;
    // 0.1% of 2000 is 2.0000000000000004 in binary floating point
    let rounded = libm::round(exact);
    if (exact - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        libm::ceil(exact) as usize
    }
}

/// Top `ceil(percent% * N)` articles by CTR, ties broken by article id.
pub fn build_breaking_set(corpus: &Corpus, percent: f64) -> Result<BreakingSet> {
    if corpus.is_empty() {
        return Err(Error::Empty("breaking set needs a nonempty corpus"));
    }
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::Config(format!("breaking percent {percent} outside (0, 100]")));
    }
    let ctr = compute_ctr(corpus.articles(), corpus.impressions());
    let mut ranked: Vec<(&String, f64)> = ctr.iter().map(|(k, v)| (k, *v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let take = breaking_count(percent, ranked.len());
    Ok(BreakingSet {
        article_ids: ranked.into_iter().take(take).map(|(k, _)| k.clone()).collect(),
        threshold_percent: percent,
    })
}

/// Click history after news-level masking, aligned position by position
/// with the original sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredHistory {
    pub user_id: String,
    pub article_ids: Vec<String>,
    pub headlines: Vec<Vec<Token>>,
    pub dwells: Vec<f64>,
    pub click_times: Vec<i64>,
    /// Reads excluded from the stable-interest mean.
    pub outliers: Vec<bool>,
    pub original_length: usize,
}

impl FilteredHistory {
    /// Unfiltered view of a history.
    pub fn from_history(history: &UserHistory, corpus: &Corpus) -> Result<Self> {
        let mut out = Self {
            user_id: history.user_id.clone(),
            article_ids: Vec::with_capacity(history.len()),
            headlines: Vec::with_capacity(history.len()),
            dwells: Vec::with_capacity(history.len()),
            click_times: Vec::with_capacity(history.len()),
            outliers: Vec::with_capacity(history.len()),
            original_length: history.len(),
        };
        for e in &history.events {
            let a = corpus
                .article(&e.article_id)
                .ok_or_else(|| Error::Reference(format!("unknown article {}", e.article_id)))?;
            out.article_ids.push(e.article_id.clone());
            out.headlines.push(a.headline.clone());
            out.dwells.push(e.dwell_seconds);
            out.click_times.push(e.click_time);
            out.outliers.push(false);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.dwells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dwells.is_empty()
    }

    /// Flags reads longer than `cap` seconds.
    pub fn with_outlier_cap(mut self, cap: f64) -> Self {
        self.outliers = cap_outliers(&self.dwells, cap);
        self
    }

    /// Keeps only the first `n` positions.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            user_id: self.user_id.clone(),
            article_ids: self.article_ids[..n].to_vec(),
            headlines: self.headlines[..n].to_vec(),
            dwells: self.dwells[..n].to_vec(),
            click_times: self.click_times[..n].to_vec(),
            outliers: self.outliers[..n].to_vec(),
            original_length: n,
        }
    }
}

/// Masks the dwell of every click on a breaking article to 0; the headline
/// keeps its position.
pub fn news_level_filter(
    history: &UserHistory,
    corpus: &Corpus,
    breaking: &BreakingSet,
) -> Result<FilteredHistory> {
    let mut out = FilteredHistory::from_history(history, corpus)?;
    for (d, id) in out.dwells.iter_mut().zip(&out.article_ids) {
        if breaking.contains(id) {
            *d = 0.0;
        }
    }
    Ok(out)
}

/// Deletion reading of news-level filtering: breaking clicks are removed.
pub fn news_level_filter_hard(
    history: &UserHistory,
    corpus: &Corpus,
    breaking: &BreakingSet,
) -> Result<FilteredHistory> {
    let kept = UserHistory {
        user_id: history.user_id.clone(),
        events: history
            .events
            .iter()
            .filter(|e| !breaking.contains(&e.article_id))
            .cloned()
            .collect(),
        ground_truth_topics: history.ground_truth_topics.clone(),
    };
    FilteredHistory::from_history(&kept, corpus)
}

/// Drops clicks shorter than `min_dwell` and clicks on breaking articles.
pub fn rule_based_filter(history: &UserHistory, min_dwell: f64, breaking: &BreakingSet) -> UserHistory {
    UserHistory {
        user_id: history.user_id.clone(),
        events: history
            .events
            .iter()
            .filter(|e| e.dwell_seconds >= min_dwell && !breaking.contains(&e.article_id))
            .cloned()
            .collect(),
        ground_truth_topics: history.ground_truth_topics.clone(),
    }
}

pub fn cap_outliers(dwells: &[f64], cap: f64) -> Vec<bool> {
    dwells.iter().map(|&d| d > cap).collect()
}

/// Mean over unflagged entries; 0 when every entry is flagged.
pub fn capped_mean(dwells: &[f64], outliers: &[bool]) -> f64 {
    let (sum, n) = dwells
        .iter()
        .zip(outliers.iter().chain(core::iter::repeat(&false)))
        .filter(|(_, o)| !**o)
        .fold((0.0, 0usize), |(s, n), (d, _)| (s + d, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Precision and recall of a retained click set against planted provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub precision: f64,
    pub recall: f64,
    pub retained: usize,
    pub genuine: usize,
}

/// Scores `filter` output against the generator's noise flags. Clicks without
/// provenance are skipped.
pub fn recovery(original: &[UserHistory], filtered: &[UserHistory]) -> Recovery {
    let mut tp = 0usize;
    let mut retained = 0usize;
    let mut genuine = 0usize;
    for (h, f) in original.iter().zip(filtered) {
        let mut kept = f.events.iter().peekable();
        for e in &h.events {
            let Some(noise) = e.planted_noise() else { continue };
            let is_kept = kept.peek().is_some_and(|k| *k == e);
            if is_kept {
                kept.next();
                retained += 1;
                if !noise {
                    tp += 1;
                }
            }
            if !noise {
                genuine += 1;
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Recovery {
        precision: ratio(tp, retained),
        recall: ratio(tp, genuine),
        retained,
        genuine,
    }
}
