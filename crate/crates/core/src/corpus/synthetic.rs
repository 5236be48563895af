//! Seeded planted-signal corpus generator.
//!
//! Text is built from a fixed pseudo-Amharic lexicon of Ethiopic-syllable
//! words. Two independent channels separate fake from real articles:
//!
//! * lexical: a fake article carries one or two marker tokens with
//!   probability `lexical_signal`; real articles never do.
//! * engagement: engagement counts are Poisson with mean `6` for real
//!   articles and `6 * (1 + 3 s)` for fake ones, and inter-engagement gaps
//!   shrink by the same factor.
//!
//! With both channels at 0 the two classes are identically distributed.

use rand::prelude::*;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Exp, Normal, Poisson};

use super::{Content, Corpus, CorpusError, Domain, Engagement, Label, NewsArticle, Publisher, Sex};

/// Article counts per domain in the source dataset; used as sampling weights.
const DOMAIN_WEIGHTS: [(Domain, f64); 6] = [
    (Domain::Business, 2112.0),
    (Domain::Health, 967.0),
    (Domain::Politics, 4003.0),
    (Domain::Sport, 1285.0),
    (Domain::Religion, 2960.0),
    (Domain::Technology, 673.0),
];

/// Sensationalist tokens planted in fake articles.
pub const MARKER_TOKENS: [&str; 8] = [
    "ሰበር", "አስደንጋጭ", "ተጋለጠ", "ሚስጥር", "ያልተሰማ", "አስቸኳይ", "ጉድ", "ተአምር",
];

// Consonant rows of the Ethiopic syllabary whose first seven orders are all
// assigned code points.
const SYLLABLE_ROWS: [u32; 34] = [
    0x1200, 0x1208, 0x1210, 0x1218, 0x1220, 0x1228, 0x1230, 0x1238, 0x1240, 0x1260, 0x1268,
    0x1270, 0x1278, 0x1280, 0x1290, 0x1298, 0x12A0, 0x12A8, 0x12B8, 0x12C8, 0x12D0, 0x12D8,
    0x12E0, 0x12E8, 0x12F0, 0x1300, 0x1308, 0x1320, 0x1328, 0x1330, 0x1338, 0x1340, 0x1348, 0x1350,
];

const LEXICON_SEED: u64 = 0x00E7_410F;
const COMMON_WORDS: usize = 300;
const DOMAIN_WORDS: usize = 60;
const BASE_ENGAGEMENT_RATE: f64 = 6.0;
const BASE_GAP_SECONDS: f64 = 1800.0;
const EPOCH_WINDOW_SECONDS: u64 = 30 * 24 * 3600;
const MEAN_TEXT_CHARS: f64 = 128.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_articles: usize,
    pub fake_fraction: f64,
    /// Strength of both signal channels unless overridden below.
    pub signal_strength: f64,
    pub seed: u64,
    pub lexical_signal: Option<f64>,
    pub engagement_signal: Option<f64>,
}

impl GenConfig {
    pub fn new(n_articles: usize, fake_fraction: f64, signal_strength: f64, seed: u64) -> Self {
        GenConfig {
            n_articles,
            fake_fraction,
            signal_strength,
            seed,
            lexical_signal: None,
            engagement_signal: None,
        }
    }

    pub fn with_channels(mut self, lexical: f64, engagement: f64) -> Self {
        self.lexical_signal = Some(lexical);
        self.engagement_signal = Some(engagement);
        self
    }

    pub fn lexical(&self) -> f64 {
        self.lexical_signal.unwrap_or(self.signal_strength)
    }

    pub fn engagement(&self) -> f64 {
        self.engagement_signal.unwrap_or(self.signal_strength)
    }

    fn check(&self) -> Result<(), CorpusError> {
        let arg = |m: String| Err(CorpusError::Argument(m));
        if self.n_articles < 4 {
            return arg(format!("n_articles must be >= 4, got {}", self.n_articles));
        }
        if !(self.fake_fraction > 0.0 && self.fake_fraction < 1.0) {
            return arg(format!("fake_fraction must be in (0, 1), got {}", self.fake_fraction));
        }
        let n = self.n_articles as f64;
        if n * self.fake_fraction < 1.0 || n * (1.0 - self.fake_fraction) < 1.0 {
            return arg("degenerate config: fewer than one article of a class".into());
        }
        for (name, s) in [
            ("signal_strength", self.signal_strength),
            ("lexical_signal", self.lexical()),
            ("engagement_signal", self.engagement()),
        ] {
            if !(0.0..=1.0).contains(&s) {
                return arg(format!("{name} must be in [0, 1], got {s}"));
            }
        }
        Ok(())
    }
}

struct Lexicon {
    common: Vec<String>,
    common_weights: WeightedIndex<f64>,
    by_domain: Vec<Vec<String>>,
}

impl Lexicon {
    fn build() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(LEXICON_SEED);
        let mut seen: std::collections::HashSet<String> =
            MARKER_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut word = |rng: &mut ChaCha8Rng| loop {
            let n_syl = rng.random_range(2..=4);
            let w: String = (0..n_syl)
                .map(|_| {
                    let row = SYLLABLE_ROWS[rng.random_range(0..SYLLABLE_ROWS.len())];
                    char::from_u32(row + rng.random_range(0..7)).unwrap()
                })
                .collect();
            if seen.insert(w.clone()) {
                return w;
            }
        };
        let common: Vec<String> = (0..COMMON_WORDS).map(|_| word(&mut rng)).collect();
        let by_domain = Domain::ALL
            .iter()
            .map(|_| (0..DOMAIN_WORDS).map(|_| word(&mut rng)).collect())
            .collect();
        // Zipf-like frequency profile.
        let common_weights =
            WeightedIndex::new((0..COMMON_WORDS).map(|r| 1.0 / (r as f64 + 1.0))).unwrap();
        Lexicon {
            common,
            common_weights,
            by_domain,
        }
    }

    fn draw(&self, domain: Domain, rng: &mut ChaCha8Rng) -> &str {
        if rng.random_bool(0.6) {
            &self.common[self.common_weights.sample(rng)]
        } else {
            let words = &self.by_domain[domain_index(domain)];
            &words[rng.random_range(0..words.len())]
        }
    }
}

fn domain_index(d: Domain) -> usize {
    Domain::ALL.iter().position(|&x| x == d).unwrap()
}

/// Generates a corpus deterministically from `config`.
pub fn generate_synthetic(config: &GenConfig) -> Result<Corpus, CorpusError> {
    config.check()?;
    let lexicon = Lexicon::build();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_articles;
    let n_fake = (n as f64 * config.fake_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < n_fake { Label::Fake } else { Label::Real })
        .collect();
    labels.shuffle(&mut rng);

    let domain_dist = WeightedIndex::new(DOMAIN_WEIGHTS.iter().map(|(_, w)| *w)).unwrap();
    let length_dist = Normal::new(MEAN_TEXT_CHARS, 25.0).unwrap();
    let lexical = config.lexical();
    let engagement = config.engagement();

    let articles = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let domain = DOMAIN_WEIGHTS[domain_dist.sample(&mut rng)].0;
            let fake = label == Label::Fake;
            let planted = fake && rng.random_bool(lexical);
            let content = make_content(&lexicon, domain, planted, &length_dist, &mut rng);
            let publisher = make_publisher(&mut rng);
            let boost = if fake { 1.0 + 3.0 * engagement } else { 1.0 };
            let id = format!("a{i:05}");
            let engagements = make_engagements(&id, &publisher, boost, &mut rng);
            NewsArticle {
                id,
                domain,
                label: Some(label),
                content,
                publisher,
                engagements,
            }
        })
        .collect();
    let corpus = Corpus::new(format!("synthetic-{}", config.seed), articles);
    corpus.validate()?;
    Ok(corpus)
}

fn make_content(
    lexicon: &Lexicon,
    domain: Domain,
    planted: bool,
    length_dist: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Content {
    let n_head = rng.random_range(3..=6);
    let mut headline: Vec<String> = (0..n_head)
        .map(|_| lexicon.draw(domain, rng).to_string())
        .collect();

    let target = length_dist.sample(rng).clamp(48.0, 260.0) as usize;
    let mut words: Vec<String> = Vec::new();
    let mut chars = 0;
    while chars < target {
        let w = lexicon.draw(domain, rng);
        chars += w.chars().count() + 1;
        words.push(w.to_string());
    }
    if planted {
        let k = if rng.random_bool(0.5) { 2 } else { 1 };
        for m in sample(rng, MARKER_TOKENS.len(), k).into_iter() {
            let pos = rng.random_range(0..=words.len());
            words.insert(pos, MARKER_TOKENS[m].to_string());
        }
        if rng.random_bool(0.3) {
            headline.insert(0, MARKER_TOKENS[rng.random_range(0..MARKER_TOKENS.len())].to_string());
        }
    }
    // Sentence punctuation, stripped again by the tokenizer.
    let mut text = String::new();
    for (j, w) in words.iter().enumerate() {
        if j > 0 {
            text.push(' ');
        }
        text.push_str(w);
        if (j + 1) % 9 == 0 || j + 1 == words.len() {
            text.push('።');
        } else if rng.random_bool(0.05) {
            text.push('፣');
        }
    }
    Content {
        headline: headline.join(" "),
        text,
    }
}

fn make_publisher(rng: &mut ChaCha8Rng) -> Publisher {
    let sex = match rng.random_range(0..20) {
        0..=8 => Sex::Male,
        9..=15 => Sex::Female,
        _ => Sex::Unknown,
    };
    let age = if rng.random_bool(0.15) {
        None
    } else {
        Some(rng.random_range(18..=75))
    };
    Publisher {
        user_name: format!("pub{}", rng.random_range(0..800)),
        sex,
        age,
    }
}

fn make_engagements(
    id: &str,
    publisher: &Publisher,
    boost: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Engagement> {
    let count = Poisson::new(BASE_ENGAGEMENT_RATE * boost)
        .unwrap()
        .sample(rng) as usize;
    if count == 0 {
        // Not engaged yet: the publisher stands in, with no time.
        return vec![Engagement {
            user_id: publisher.user_name.clone(),
            post_id: id.to_string(),
            timestamp: None,
        }];
    }
    let gap = Exp::new(boost / BASE_GAP_SECONDS).unwrap();
    let mut t = rng.random_range(0..EPOCH_WINDOW_SECONDS) as f64;
    (0..count)
        .map(|k| {
            t += gap.sample(rng);
            Engagement {
                user_id: format!("u{}", rng.random_range(0..5000)),
                post_id: format!("{id}-p{k}"),
                timestamp: Some(t.round() as u64),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_counts_follow_fraction() {
        let c = generate_synthetic(&GenConfig::new(100, 0.5, 0.7, 1)).unwrap();
        assert_eq!(c.len(), 100);
        assert_eq!(c.count_label(Label::Fake), 50);
        assert_eq!(c.count_label(Label::Real), 50);
    }

    #[test]
    fn degenerate_configs_rejected() {
        assert!(generate_synthetic(&GenConfig::new(3, 0.5, 0.5, 1)).is_err());
        assert!(generate_synthetic(&GenConfig::new(10, 0.05, 0.5, 1)).is_err());
        assert!(generate_synthetic(&GenConfig::new(10, 1.0, 0.5, 1)).is_err());
        assert!(generate_synthetic(&GenConfig::new(10, 0.5, 1.5, 1)).is_err());
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = GenConfig::new(60, 0.5, 0.9, 42);
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = GenConfig::new(60, 0.5, 0.9, 43);
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn markers_only_in_fake_articles() {
        let c = generate_synthetic(&GenConfig::new(400, 0.5, 1.0, 3)).unwrap();
        for a in &c.articles {
            let doc = a.document();
            let has = MARKER_TOKENS.iter().any(|m| doc.split_whitespace().any(|w| w.trim_end_matches(['።', '፣']) == *m));
            assert_eq!(has, a.label == Some(Label::Fake), "article {}", a.id);
        }
    }

    #[test]
    fn zero_signal_has_no_markers() {
        let c = generate_synthetic(&GenConfig::new(200, 0.5, 0.0, 3)).unwrap();
        for a in &c.articles {
            for m in MARKER_TOKENS {
                assert!(!a.document().contains(m));
            }
        }
    }

    #[test]
    fn lexicon_words_are_distinct_from_markers() {
        let lex = Lexicon::build();
        let all: Vec<&String> = lex.common.iter().chain(lex.by_domain.iter().flatten()).collect();
        assert_eq!(all.len(), COMMON_WORDS + 6 * DOMAIN_WORDS);
        for m in MARKER_TOKENS {
            assert!(all.iter().all(|w| w.as_str() != m));
        }
    }

    #[test]
    fn average_text_length_near_target() {
        let c = generate_synthetic(&GenConfig::new(500, 0.5, 0.0, 5)).unwrap();
        let mean = c.articles.iter().map(|a| a.content.text.chars().count()).sum::<usize>() as f64 / 500.0;
        assert!((mean - MEAN_TEXT_CHARS).abs() < 20.0, "mean text length {mean}");
    }
}
