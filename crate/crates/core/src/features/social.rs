//! Social-context block: publisher profile plus engagement aggregates.
//!
//! The source work names publisher attributes (user name, sex, age) and the
//! engagement tuple model but never lists concrete features, so the set below
//! is a reconstruction. Engagements with a `null` timestamp are placeholders
//! for "not engaged yet" and are only counted by `untimed_engagement_count`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{NewsArticle, Sex};

pub const SOCIAL_FEATURE_NAMES: [&str; SOCIAL_DIM] = [
    "engagement_count",
    "distinct_user_count",
    "time_span",
    "mean_inter_engagement_gap",
    "has_any_engagement",
    "untimed_engagement_count",
    "publisher_age",
    "publisher_sex_male",
    "publisher_sex_female",
    "publisher_sex_unknown",
];

pub const SOCIAL_DIM: usize = 10;

/// Raw (unstandardized) social features in [`SOCIAL_FEATURE_NAMES`] order.
pub fn social_features(article: &NewsArticle) -> [f64; SOCIAL_DIM] {
    let mut times: Vec<u64> = Vec::new();
    let mut users = HashSet::new();
    let mut untimed = 0usize;
    for e in &article.engagements {
        match e.timestamp {
            Some(t) => {
                times.push(t);
                users.insert(e.user_id.as_str());
            }
            None => untimed += 1,
        }
    }
    times.sort_unstable();
    let count = times.len();
    let span = if count >= 2 {
        (times[count - 1] - times[0]) as f64
    } else {
        0.0
    };
    // mean of consecutive gaps telescopes to span / (k - 1)
    let mean_gap = if count >= 2 { span / (count - 1) as f64 } else { 0.0 };
    let age = article.publisher.age.map_or(-1.0, f64::from);
    let sex = article.publisher.sex;
    [
        count as f64,
        users.len() as f64,
        span,
        mean_gap,
        if count > 0 { 1.0 } else { 0.0 },
        untimed as f64,
        age,
        (sex == Sex::Male) as u8 as f64,
        (sex == Sex::Female) as u8 as f64,
        (sex == Sex::Unknown) as u8 as f64,
    ]
}

/// Training-set mean and population standard deviation per social feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialStats {
    pub means: Vec<f64>,
    pub stdevs: Vec<f64>,
}

impl SocialStats {
    pub fn fit<'a>(articles: impl IntoIterator<Item = &'a NewsArticle>) -> Self {
        let rows: Vec<[f64; SOCIAL_DIM]> = articles.into_iter().map(social_features).collect();
        let n = rows.len().max(1) as f64;
        let mut means = vec![0.0; SOCIAL_DIM];
        for r in &rows {
            for (m, x) in means.iter_mut().zip(r) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stdevs = vec![0.0; SOCIAL_DIM];
        for r in &rows {
            for j in 0..SOCIAL_DIM {
                stdevs[j] += (r[j] - means[j]).powi(2);
            }
        }
        for (j, s) in stdevs.iter_mut().enumerate() {
            let sd = (*s / n).sqrt();
            // a constant column can leave rounding residue in the variance
            *s = if sd <= 1e-12 * means[j].abs().max(1.0) { 0.0 } else { sd };
        }
        SocialStats { means, stdevs }
    }

    /// z-scores; zero-variance features map to 0.
    pub fn standardize(&self, raw: &[f64; SOCIAL_DIM]) -> [f64; SOCIAL_DIM] {
        let mut out = [0.0; SOCIAL_DIM];
        for j in 0..SOCIAL_DIM {
            if self.stdevs[j] > 0.0 {
                out[j] = (raw[j] - self.means[j]) / self.stdevs[j];
            }
        }
        out
    }
}
