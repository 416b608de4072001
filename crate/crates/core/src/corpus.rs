//! Clickstream data model, validation, click-through rates and the synthetic
//! corpus generator with planted interests and planted noise.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = String;

/// Dwell below which a click is a short-dwell read.
pub const SHORT_DWELL_SECONDS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub article_id: String,
    pub headline: Vec<Token>,
    pub body: Vec<Token>,
    pub topic_id: u32,
    pub publish_time: i64,
}

/// One click. `is_noise` / `is_burst` are generator provenance and never
/// reach a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub article_id: String,
    pub dwell_seconds: f64,
    pub click_time: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_noise: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_burst: Option<bool>,
}

impl ClickEvent {
    pub fn new(article_id: impl Into<String>, dwell_seconds: f64, click_time: i64) -> Self {
        Self {
            article_id: article_id.into(),
            dwell_seconds,
            click_time,
            is_noise: None,
            is_burst: None,
        }
    }

    /// Planted noise label: short-dwell misclick or burst-driven click.
    pub fn planted_noise(&self) -> Option<bool> {
        match (self.is_noise, self.is_burst) {
            (None, None) => None,
            (n, b) => Some(n.unwrap_or(false) || b.unwrap_or(false)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    pub events: Vec<ClickEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_topics: Option<BTreeSet<u32>>,
}

impl UserHistory {
    pub fn new(user_id: impl Into<String>, events: Vec<ClickEvent>) -> Self {
        Self {
            user_id: user_id.into(),
            events,
            ground_truth_topics: None,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn dwells(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.dwell_seconds).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub article_id: String,
    pub clicked: bool,
    pub exposure_time: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionLog {
    pub user_id: String,
    pub exposed: Vec<Exposure>,
}

/// Planted personalised headline for a (user, article) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlineReference {
    pub user_id: String,
    pub article_id: String,
    pub headline: Vec<Token>,
}

/// Articles, histories and impressions with every cross-reference checked.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    articles: Vec<NewsArticle>,
    histories: Vec<UserHistory>,
    impressions: Vec<ImpressionLog>,
    references: Vec<HeadlineReference>,
    by_id: BTreeMap<String, usize>,
}

impl Corpus {
    /// Validates and indexes. Histories are stably sorted by click time.
    pub fn new(
        articles: Vec<NewsArticle>,
        mut histories: Vec<UserHistory>,
        impressions: Vec<ImpressionLog>,
    ) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, a) in articles.iter().enumerate() {
            if a.headline.is_empty() {
                return Err(Error::Validation(format!("article {} has an empty headline", a.article_id)));
            }
            if a.body.is_empty() {
                return Err(Error::Validation(format!("article {} has an empty body", a.article_id)));
            }
            if by_id.insert(a.article_id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate article_id {}", a.article_id)));
            }
        }
        for h in &mut histories {
            for e in &h.events {
                if !(e.dwell_seconds >= 0.0) || !e.dwell_seconds.is_finite() {
                    return Err(Error::Validation(format!(
                        "user {} has invalid dwell {} on {}",
                        h.user_id, e.dwell_seconds, e.article_id
                    )));
                }
                let idx = *by_id.get(&e.article_id).ok_or_else(|| {
                    Error::Reference(format!("user {} clicked unknown article {}", h.user_id, e.article_id))
                })?;
                if e.click_time < articles[idx].publish_time {
                    return Err(Error::Validation(format!(
                        "user {} clicked {} before it was published",
                        h.user_id, e.article_id
                    )));
                }
            }
            h.events.sort_by_key(|e| e.click_time);
        }
        let clicked_by: BTreeMap<&str, BTreeSet<&str>> = histories
            .iter()
            .map(|h| {
                (
                    h.user_id.as_str(),
                    h.events.iter().map(|e| e.article_id.as_str()).collect(),
                )
            })
            .collect();
        for log in &impressions {
            for x in &log.exposed {
                if !by_id.contains_key(&x.article_id) {
                    return Err(Error::Reference(format!(
                        "impression for user {} names unknown article {}",
                        log.user_id, x.article_id
                    )));
                }
                let matched = clicked_by
                    .get(log.user_id.as_str())
                    .is_some_and(|s| s.contains(x.article_id.as_str()));
                if x.clicked && !matched {
                    return Err(Error::Reference(format!(
                        "user {} has a clicked impression on {} without a click event",
                        log.user_id, x.article_id
                    )));
                }
            }
        }
        Ok(Self {
            articles,
            histories,
            impressions,
            references: Vec::new(),
            by_id,
        })
    }

    pub fn with_references(mut self, references: Vec<HeadlineReference>) -> Result<Self> {
        for r in &references {
            if !self.by_id.contains_key(&r.article_id) {
                return Err(Error::Reference(format!("reference names unknown article {}", r.article_id)));
            }
            if !self.histories.iter().any(|h| h.user_id == r.user_id) {
                return Err(Error::Reference(format!("reference names unknown user {}", r.user_id)));
            }
        }
        self.references = references;
        Ok(self)
    }

    pub fn articles(&self) -> &[NewsArticle] {
        &self.articles
    }

    pub fn histories(&self) -> &[UserHistory] {
        &self.histories
    }

    pub fn impressions(&self) -> &[ImpressionLog] {
        &self.impressions
    }

    pub fn references(&self) -> &[HeadlineReference] {
        &self.references
    }

    pub fn article(&self, id: &str) -> Option<&NewsArticle> {
        self.by_id.get(id).map(|&i| &self.articles[i])
    }

    pub fn article_index(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn history(&self, user_id: &str) -> Option<&UserHistory> {
        self.histories.iter().find(|h| h.user_id == user_id)
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn click_count(&self) -> usize {
        self.histories.iter().map(UserHistory::len).sum()
    }
}

/// Clicks over exposures per article; never-exposed articles get 0.
pub fn compute_ctr(articles: &[NewsArticle], impressions: &[ImpressionLog]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<&str, (u64, u64)> = articles
        .iter()
        .map(|a| (a.article_id.as_str(), (0, 0)))
        .collect();
    for log in impressions {
        for x in &log.exposed {
            if let Some(c) = counts.get_mut(x.article_id.as_str()) {
                c.1 += 1;
                if x.clicked {
                    c.0 += 1;
                }
            }
        }
    }
    counts
        .into_iter()
        .map(|(id, (clicks, exposures))| {
            let ctr = if exposures == 0 {
                0.0
            } else {
                clicks as f64 / exposures as f64
            };
            (id.to_string(), ctr)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_articles: usize,
    pub num_topics: usize,
    pub topics_per_user: usize,
    pub clicks_per_user: usize,
    pub short_dwell_noise_rate: f64,
    pub burst_article_count: usize,
    /// Chance that a given user clicks a given burst article.
    pub burst_click_prob: f64,
    pub interested_median_dwell: f64,
    pub interested_dwell_sigma: f64,
    pub max_dwell: f64,
    pub noise_dwell_min: f64,
    pub noise_dwell_max: f64,
    pub negatives_per_click: usize,
    pub keywords_per_topic: usize,
    pub body_len: usize,
    pub span_days: u32,
    /// Number of planted personalised references to emit.
    pub reference_pairs: usize,
    pub random_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 100,
            num_articles: 200,
            num_topics: 8,
            topics_per_user: 2,
            clicks_per_user: 20,
            short_dwell_noise_rate: 0.2808,
            burst_article_count: 1,
            burst_click_prob: 0.8,
            interested_median_dwell: 120.0,
            interested_dwell_sigma: 1.0,
            max_dwell: 3600.0,
            noise_dwell_min: 1.0,
            noise_dwell_max: 9.0,
            negatives_per_click: 4,
            keywords_per_topic: 10,
            body_len: 14,
            span_days: 28,
            reference_pairs: 40,
            random_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_users", self.num_users),
            ("num_articles", self.num_articles),
            ("num_topics", self.num_topics),
            ("topics_per_user", self.topics_per_user),
            ("clicks_per_user", self.clicks_per_user),
            ("keywords_per_topic", self.keywords_per_topic),
            ("span_days", self.span_days as usize),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.topics_per_user > self.num_topics {
            return Err(Error::Config(format!(
                "topics_per_user {} exceeds num_topics {}",
                self.topics_per_user, self.num_topics
            )));
        }
        if self.num_topics < 2 {
            return Err(Error::Config("need at least two topics".into()));
        }
        if self.keywords_per_topic < 5 {
            return Err(Error::Config("keywords_per_topic must be at least 5".into()));
        }
        if !(0.0..=1.0).contains(&self.short_dwell_noise_rate) {
            return Err(Error::Config("short_dwell_noise_rate must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.burst_click_prob) {
            return Err(Error::Config("burst_click_prob must lie in [0, 1]".into()));
        }
        if self.burst_article_count >= self.num_articles {
            return Err(Error::Config("burst_article_count must leave regular articles".into()));
        }
        if !(self.noise_dwell_min >= 0.0
            && self.noise_dwell_min <= self.noise_dwell_max
            && self.noise_dwell_max < SHORT_DWELL_SECONDS)
        {
            return Err(Error::Config("noise dwell range must lie in [0, 10) s".into()));
        }
        if !(self.interested_median_dwell >= SHORT_DWELL_SECONDS
            && self.max_dwell > self.interested_median_dwell
            && self.interested_dwell_sigma > 0.0)
        {
            return Err(Error::Config("interested dwell distribution is degenerate".into()));
        }
        if self.body_len < 8 {
            return Err(Error::Config("body_len must be at least 8".into()));
        }
        Ok(())
    }
}

const TOPIC_NAMES: [&str; 12] = [
    "politics", "sports", "finance", "health", "science", "travel", "music", "food", "tech",
    "weather", "film", "autos",
];
const FILLER: [&str; 12] = [
    "the", "a", "of", "in", "on", "to", "for", "with", "after", "as", "over", "new",
];
const BREAKING: [&str; 4] = ["breaking", "live", "urgent", "alert"];
const EPOCH_START: i64 = 1_700_000_000;
const DAY: i64 = 86_400;

/// Deterministic topic lexicon used by the generator.
pub fn topic_keyword(topic: usize, k: usize) -> String {
    match TOPIC_NAMES.get(topic) {
        Some(name) => format!("{name}{k}"),
        None => format!("topic{topic}w{k}"),
    }
}

struct Draft {
    article: NewsArticle,
    secondary: usize,
    secondary_keyword: String,
    burst: bool,
}

fn draft_article<R: Rng>(cfg: &SynthConfig, index: usize, burst: bool, rng: &mut R) -> Draft {
    let topic = rng.random_range(0..cfg.num_topics);
    let mut secondary = rng.random_range(0..cfg.num_topics - 1);
    if secondary >= topic {
        secondary += 1;
    }
    let mut kws: Vec<usize> = (0..cfg.keywords_per_topic).collect();
    kws.shuffle(rng);
    let primary: Vec<String> = kws[..5].iter().map(|&k| topic_keyword(topic, k)).collect();
    let sk = rng.random_range(0..cfg.keywords_per_topic);
    let secondary_keyword = topic_keyword(secondary, sk);
    let filler = |rng: &mut R| FILLER.choose(rng).unwrap().to_string();

    let mut headline = Vec::new();
    if burst {
        headline.push(BREAKING[0].to_string());
    }
    headline.extend([
        primary[0].clone(),
        filler(rng),
        primary[1].clone(),
        filler(rng),
        primary[2].clone(),
    ]);

    let mut rest = vec![primary[3].clone(), primary[4].clone(), secondary_keyword.clone()];
    rest.push(topic_keyword(secondary, (sk + 1) % cfg.keywords_per_topic));
    if burst {
        rest.extend(BREAKING[1..].iter().map(|s| s.to_string()));
    }
    while headline.len() + rest.len() < cfg.body_len {
        rest.push(filler(rng));
    }
    rest.shuffle(rng);
    let mut body = headline.clone();
    body.extend(rest);

    let publish_time = EPOCH_START + rng.random_range(0..(cfg.span_days as i64 - 2).max(1) * DAY);
    Draft {
        article: NewsArticle {
            article_id: format!("N{index:05}"),
            headline,
            body,
            topic_id: topic as u32,
            publish_time,
        },
        secondary,
        secondary_keyword,
        burst,
    }
}

/// Builds a corpus whose noise is known click by click.
///
/// Every click slot is a short-dwell noise read with probability
/// `short_dwell_noise_rate`; remaining slots go first to burst articles (each
/// clicked with `burst_click_prob`) and then to articles from the user's true
/// topics with a long, log-normal dwell.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.random_seed);
    let drafts: Vec<Draft> = (0..cfg.num_articles)
        .map(|i| draft_article(cfg, i, i < cfg.burst_article_count, &mut rng))
        .collect();
    let regular: Vec<usize> = (0..drafts.len()).filter(|&i| !drafts[i].burst).collect();
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); cfg.num_topics];
    for &i in &regular {
        by_topic[drafts[i].article.topic_id as usize].push(i);
    }
    let lognormal = LogNormal::new(libm::log(cfg.interested_median_dwell), cfg.interested_dwell_sigma)
        .map_err(|e| Error::Config(format!("dwell distribution: {e}")))?;

    let mut histories = Vec::with_capacity(cfg.num_users);
    let mut impressions = Vec::with_capacity(cfg.num_users);
    for u in 0..cfg.num_users {
        let user_id = format!("U{u:05}");
        let mut topics: Vec<usize> = (0..cfg.num_topics).filter(|t| !by_topic[*t].is_empty()).collect();
        if topics.len() < cfg.topics_per_user {
            return Err(Error::Config("too few articles to cover every user topic".into()));
        }
        topics.shuffle(&mut rng);
        topics.truncate(cfg.topics_per_user);
        topics.sort_unstable();
        let interested: Vec<usize> = topics.iter().flat_map(|t| by_topic[*t].iter().copied()).collect();
        let outside: Vec<usize> = regular
            .iter()
            .copied()
            .filter(|&i| !topics.contains(&(drafts[i].article.topic_id as usize)))
            .collect();

        let noise_slots: Vec<bool> = (0..cfg.clicks_per_user)
            .map(|_| rng.random_bool(cfg.short_dwell_noise_rate))
            .collect();
        let mut free = noise_slots.iter().filter(|n| !**n).count();
        let mut bursts = Vec::new();
        for b in 0..cfg.burst_article_count {
            if free > 0 && rng.random_bool(cfg.burst_click_prob) {
                bursts.push(b);
                free -= 1;
            }
        }
        let mut events = Vec::with_capacity(cfg.clicks_per_user);
        let click_at = |rng: &mut ChaCha8Rng, idx: usize| {
            drafts[idx].article.publish_time + rng.random_range(0..2 * DAY)
        };
        for &b in &bursts {
            let dwell = sample_long_dwell(cfg, &lognormal, &mut rng);
            let t = click_at(&mut rng, b);
            let mut e = ClickEvent::new(drafts[b].article.article_id.clone(), dwell, t);
            e.is_noise = Some(false);
            e.is_burst = Some(true);
            events.push(e);
        }
        let mut remaining_interest = free;
        for &is_noise in &noise_slots {
            let (idx, dwell) = if is_noise {
                let idx = *regular.choose(&mut rng).unwrap();
                (idx, rng.random_range(cfg.noise_dwell_min..=cfg.noise_dwell_max))
            } else if remaining_interest > 0 {
                remaining_interest -= 1;
                let idx = *interested.choose(&mut rng).unwrap();
                (idx, sample_long_dwell(cfg, &lognormal, &mut rng))
            } else {
                continue;
            };
            let t = click_at(&mut rng, idx);
            let mut e = ClickEvent::new(drafts[idx].article.article_id.clone(), dwell, t);
            e.is_noise = Some(is_noise);
            e.is_burst = Some(false);
            events.push(e);
        }
        events.sort_by_key(|e| e.click_time);

        let mut exposed = Vec::new();
        for e in &events {
            exposed.push(Exposure {
                article_id: e.article_id.clone(),
                clicked: true,
                exposure_time: e.click_time,
            });
            if !outside.is_empty() {
                for _ in 0..cfg.negatives_per_click {
                    let idx = *outside.choose(&mut rng).unwrap();
                    exposed.push(Exposure {
                        article_id: drafts[idx].article.article_id.clone(),
                        clicked: false,
                        exposure_time: e.click_time,
                    });
                }
            }
        }
        let last = events.last().map_or(EPOCH_START, |e| e.click_time);
        for b in 0..cfg.burst_article_count {
            if !bursts.contains(&b) {
                exposed.push(Exposure {
                    article_id: drafts[b].article.article_id.clone(),
                    clicked: false,
                    exposure_time: last.max(drafts[b].article.publish_time),
                });
            }
        }
        histories.push(UserHistory {
            user_id: user_id.clone(),
            events,
            ground_truth_topics: Some(topics.iter().map(|&t| t as u32).collect()),
        });
        impressions.push(ImpressionLog { user_id, exposed });
    }

    let references = plant_references(cfg, &drafts, &histories, &mut rng);
    let articles = drafts.into_iter().map(|d| d.article).collect();
    Corpus::new(articles, histories, impressions)?.with_references(references)
}

fn sample_long_dwell<R: Rng>(cfg: &SynthConfig, dist: &LogNormal<f64>, rng: &mut R) -> f64 {
    loop {
        let d: f64 = dist.sample(rng);
        if (SHORT_DWELL_SECONDS..=cfg.max_dwell).contains(&d) {
            // whole seconds keep the files exact
            return libm::round(d);
        }
    }
}

/// Pairs a user with a regular article whose secondary topic is one of the
/// user's true topics and whose primary topic is not. The planted headline
/// swaps the last primary keyword for the user-aligned body keyword.
fn plant_references<R: Rng>(
    cfg: &SynthConfig,
    drafts: &[Draft],
    histories: &[UserHistory],
    rng: &mut R,
) -> Vec<HeadlineReference> {
    let mut out = Vec::new();
    let held_out: Vec<&Draft> = drafts
        .iter()
        .enumerate()
        .filter(|(i, d)| !d.burst && is_heldout_index(*i))
        .map(|(_, d)| d)
        .collect();
    if held_out.is_empty() || histories.is_empty() {
        return out;
    }
    let mut attempts = 0;
    while out.len() < cfg.reference_pairs && attempts < cfg.reference_pairs * 200 {
        attempts += 1;
        let h = histories.choose(rng).unwrap();
        let d = *held_out.choose(rng).unwrap();
        let topics = h.ground_truth_topics.as_ref().unwrap();
        if topics.contains(&d.article.topic_id) || !topics.contains(&(d.secondary as u32)) {
            continue;
        }
        if out
            .iter()
            .any(|r: &HeadlineReference| r.user_id == h.user_id && r.article_id == d.article.article_id)
        {
            continue;
        }
        let mut headline = d.article.headline.clone();
        *headline.last_mut().unwrap() = d.secondary_keyword.clone();
        out.push(HeadlineReference {
            user_id: h.user_id.clone(),
            article_id: d.article.article_id.clone(),
            headline,
        });
    }
    out.sort_by(|a, b| (&a.user_id, &a.article_id).cmp(&(&b.user_id, &b.article_id)));
    out
}

/// Every fifth generated article is held out of headline training.
pub fn is_heldout_index(index: usize) -> bool {
    index % 5 == 4
}
