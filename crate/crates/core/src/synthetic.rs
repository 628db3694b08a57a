//! Generated, linearly separable four-class corpora for end-to-end checks.
//!
//! Each comment mixes shared filler words with marker words that only ever
//! appear in one class, so a bag-of-words classifier can reach perfect accuracy.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::{Dataset, KcLabel, LabeledExample, Source};
use crate::error::Result;
use crate::rng;

const FILLER: &[&str] = &[
    "the", "video", "this", "really", "just", "about", "people", "think", "when", "what", "part", "watch", "time",
    "here", "that", "also", "some", "more", "channel", "comment", "thing", "know", "like", "good", "very", "been",
    "there", "into", "other", "would", "could", "first", "made", "make", "much", "many", "well", "only", "still",
    "even",
];

const MARKERS: [&[&str]; 4] = [
    &["lol", "subscribe", "haha", "bruh", "omg", "wow"],
    &["agree", "exactly", "correct", "true", "yes", "same"],
    &["why", "wonder", "curious", "question", "maybe", "explain"],
    &["however", "evidence", "disagree", "although", "counterpoint", "revise"],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub seed: u64,
    pub min_words: usize,
    pub max_words: usize,
    /// Marker words inserted per document.
    pub markers_per_doc: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_docs: 800,
            seed: 7,
            min_words: 6,
            max_words: 14,
            markers_per_doc: 2,
        }
    }
}

/// Marker vocabulary of a class.
pub fn markers(label: KcLabel) -> &'static [&'static str] {
    MARKERS[label.index()]
}

/// Balanced corpus (classes cycle NonKc, Share, Explore, Negotiate) with ids
/// `syn-00000`, `syn-00001`, ...
pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    let mut rng = rng::stream(cfg.seed, 40);
    let examples = (0..cfg.n_docs)
        .map(|i| {
            let label = KcLabel::ALL[i % 4];
            let n_words = rng.random_range(cfg.min_words..=cfg.max_words.max(cfg.min_words));
            let mut words: Vec<&str> = (0..n_words)
                .map(|_| *FILLER.choose(&mut rng).expect("non-empty"))
                .collect();
            for _ in 0..cfg.markers_per_doc {
                let at = rng.random_range(0..=words.len());
                words.insert(at, markers(label).choose(&mut rng).expect("non-empty"));
            }
            let source = if rng.random::<bool>() {
                Source::ShortVideo
            } else {
                Source::LongVideo
            };
            let mut ex = LabeledExample::new(format!("syn-{i:05}"), words.join(" "), label);
            ex.source = source;
            ex
        })
        .collect();
    Dataset::new(examples)
}
