//! Splits, filtered histories and per-phase example construction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::config::RunConfig;
use crate::corpus::{is_heldout_index, Corpus, NewsArticle, UserHistory};
use crate::denoise::{build_breaking_set, news_level_filter, news_level_filter_hard, BreakingSet, FilteredHistory};
use crate::error::Result;
use crate::user_encoder::FacetConfig;

/// A corpus viewed through one run configuration.
#[derive(Debug, Clone)]
pub struct Prepared<'c> {
    pub corpus: &'c Corpus,
    /// Breaking labels; applied to histories only when the BF toggle is on.
    pub breaking: BreakingSet,
    pub facets: FacetConfig,
    histories: BTreeMap<String, FilteredHistory>,
    /// Indices into `corpus.histories()`.
    pub train_users: Vec<usize>,
    pub test_users: Vec<usize>,
    /// Indices into `corpus.articles()`.
    pub train_articles: Vec<usize>,
    pub test_articles: Vec<usize>,
    min_dwell: Option<f64>,
    drop_breaking: bool,
    hard_drop: bool,
    outlier_cap: f64,
}

/// Held-out user context plus labelled candidates.
#[derive(Debug, Clone)]
pub struct CtrExample {
    pub context: FilteredHistory,
    pub candidates: Vec<(usize, f64)>,
}

/// A user paired with an article whose headline is a training target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pair {
    pub user: usize,
    pub article: usize,
}

impl<'c> Prepared<'c> {
    pub fn new(corpus: &'c Corpus, cfg: &RunConfig) -> Result<Self> {
        let breaking = build_breaking_set(corpus, cfg.filter.breaking_percent)?;
        let mut out = Self {
            corpus,
            breaking,
            facets: cfg.facet_config(),
            histories: BTreeMap::new(),
            train_users: Vec::new(),
            test_users: Vec::new(),
            train_articles: Vec::new(),
            test_articles: Vec::new(),
            min_dwell: cfg.toggles.dwell_weighting.then_some(cfg.filter.min_dwell_seconds),
            drop_breaking: cfg.toggles.bf,
            hard_drop: cfg.filter.hard_drop,
            outlier_cap: cfg.filter.outlier_cap_seconds,
        };
        for h in corpus.histories() {
            let f = out.filter(h)?;
            out.histories.insert(h.user_id.clone(), f);
        }
        let (test_users, train_users): (Vec<usize>, Vec<usize>) =
            (0..corpus.histories().len()).partition(|&i| is_heldout_index(i));
        let (test_articles, train_articles): (Vec<usize>, Vec<usize>) =
            (0..corpus.articles().len()).partition(|&i| is_heldout_index(i));
        out.train_users = train_users;
        out.test_users = test_users;
        out.train_articles = train_articles;
        out.test_articles = test_articles;
        Ok(out)
    }

    /// News-level filtering and outlier flags for an arbitrary history.
    pub fn filter(&self, history: &UserHistory) -> Result<FilteredHistory> {
        let f = if !self.drop_breaking {
            FilteredHistory::from_history(history, self.corpus)?
        } else if self.hard_drop {
            news_level_filter_hard(history, self.corpus, &self.breaking)?
        } else {
            news_level_filter(history, self.corpus, &self.breaking)?
        };
        Ok(f.with_outlier_cap(self.outlier_cap))
    }

    pub fn history(&self, user: usize) -> &FilteredHistory {
        &self.histories[&self.corpus.histories()[user].user_id]
    }

    pub fn history_by_id(&self, user_id: &str) -> Option<&FilteredHistory> {
        self.histories.get(user_id)
    }

    pub fn article(&self, index: usize) -> &NewsArticle {
        &self.corpus.articles()[index]
    }

    /// Whether a click counts as a genuine-interest target under this
    /// configuration's filters.
    fn keeps(&self, article_id: &str, dwell: f64) -> bool {
        if self.min_dwell.is_some_and(|m| dwell < m) {
            return false;
        }
        !(self.drop_breaking && self.breaking.contains(article_id))
    }

    /// The user's last `targets` clicks become candidates (kept clicks as
    /// positives), matched one-to-one with unclicked exposures.
    pub fn ctr_example<R: Rng + ?Sized>(&self, user: usize, targets: usize, rng: &mut R) -> Option<CtrExample> {
        let history = self.corpus.histories().get(user)?;
        let n = history.len();
        let t = targets.min(n / 2);
        if t == 0 {
            return None;
        }
        let mut prefix = history.clone();
        prefix.events.truncate(n - t);
        let context = self.filter(&prefix).ok()?;
        let clicked: Vec<&str> = history.events.iter().map(|e| e.article_id.as_str()).collect();
        let mut candidates = Vec::new();
        for e in &history.events[n - t..] {
            if self.keeps(&e.article_id, e.dwell_seconds) {
                candidates.push((self.corpus.article_index(&e.article_id)?, 1.0));
            }
        }
        let positives = candidates.len();
        let mut pool: Vec<usize> = self
            .corpus
            .impressions()
            .iter()
            .filter(|l| l.user_id == history.user_id)
            .flat_map(|l| l.exposed.iter())
            .filter(|x| !x.clicked && !clicked.contains(&x.article_id.as_str()))
            .filter_map(|x| self.corpus.article_index(&x.article_id))
            .collect();
        pool.sort_unstable();
        pool.dedup();
        for &a in pool.choose_multiple(rng, positives) {
            candidates.push((a, 0.0));
        }
        if candidates.len() < 2 {
            return None;
        }
        Some(CtrExample { context, candidates })
    }

    /// Kept clicks of training users on training articles.
    pub fn headline_pairs(&self) -> Vec<Pair> {
        let train: Vec<bool> = (0..self.corpus.articles().len()).map(|i| !is_heldout_index(i)).collect();
        let mut out = Vec::new();
        for &u in &self.train_users {
            for e in &self.corpus.histories()[u].events {
                let Some(a) = self.corpus.article_index(&e.article_id) else { continue };
                if train[a] && self.keeps(&e.article_id, e.dwell_seconds) {
                    out.push(Pair { user: u, article: a });
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Random subset of at most `cap` items (all when `cap` is 0), order shuffled.
pub fn epoch_sample<T: Clone, R: Rng + ?Sized>(items: &[T], cap: usize, rng: &mut R) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(rng);
    if cap > 0 {
        v.truncate(cap);
    }
    v
}
