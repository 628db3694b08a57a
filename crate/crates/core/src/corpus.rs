//! Data model, ingestion, normalization, fold planning and coder agreement.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub const NUM_CLASSES: usize = 4;

/// Knowledge-construction level of a comment, ordered by epistemic depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KcLabel {
    #[serde(rename = "nonKC")]
    NonKc = 0,
    Share = 1,
    Explore = 2,
    Negotiate = 3,
}

impl KcLabel {
    pub const ALL: [KcLabel; NUM_CLASSES] = [KcLabel::NonKc, KcLabel::Share, KcLabel::Explore, KcLabel::Negotiate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<KcLabel> {
        KcLabel::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            KcLabel::NonKc => "nonKC",
            KcLabel::Share => "Share",
            KcLabel::Explore => "Explore",
            KcLabel::Negotiate => "Negotiate",
        }
    }

    /// Codebook definition used by annotators.
    pub fn definition(self) -> &'static str {
        match self {
            KcLabel::NonKc => {
                "Comment to socialise (positive and negative reactions), with less focus on \
                 the video's content; captures sentiments."
            }
            KcLabel::Share => {
                "Ask clarifying questions, seek information or provide simple statements \
                 (personal experiences, facts or opinions) related to the video content."
            }
            KcLabel::Explore => {
                "State agreement or disagreement (including simple statements such as 'I agree'); \
                 ask questions to clarify the extent of disagreement."
            }
            KcLabel::Negotiate => {
                "Clarify concepts; propose and negotiate areas of disagreement to integrate ideas, \
                 with more extensive evidence and explanation. Also covers testing proposed \
                 syntheses against other contexts and summarising or applying new knowledge."
            }
        }
    }
}

impl fmt::Display for KcLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KcLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        KcLabel::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::validation(format!("unknown label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ShortVideo,
    LongVideo,
    #[default]
    Unknown,
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "short_video" | "short" => Ok(Source::ShortVideo),
            "long_video" | "long" => Ok(Source::LongVideo),
            "unknown" | "" => Ok(Source::Unknown),
            other => Err(Error::validation(format!("unknown source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub raw_text: String,
    pub normalized_text: String,
    pub label: KcLabel,
    pub source: Source,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>, label: KcLabel) -> Self {
        let raw_text = raw_text.into();
        LabeledExample {
            id: id.into(),
            normalized_text: normalize_text(&raw_text),
            raw_text,
            label,
            source: Source::Unknown,
        }
    }
}

/// Ordered collection of examples with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    class_counts: [usize; NUM_CLASSES],
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        let mut class_counts = [0; NUM_CLASSES];
        for (i, ex) in examples.iter().enumerate() {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::validation(format!("record {i}: duplicate id {:?}", ex.id)));
            }
            class_counts[ex.label.index()] += 1;
        }
        Ok(Dataset { examples, class_counts })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        self.class_counts
    }

    pub fn count(&self, label: KcLabel) -> usize {
        self.class_counts[label.index()]
    }

    pub fn labels(&self) -> Vec<KcLabel> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Write examples as JSONL (`id`, `text`, `normalized_text`, `label`, `source`).
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for ex in &self.examples {
            let rec = serde_json::json!({
                "id": ex.id,
                "text": ex.raw_text,
                "normalized_text": ex.normalized_text,
                "label": ex.label,
                "source": ex.source,
            });
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json" => Ok(Format::Jsonl),
            other => Err(Error::validation(format!("unknown format {other:?}"))),
        }
    }
}

impl Format {
    /// Guess from the file extension; defaults to JSONL.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(default, deserialize_with = "id_as_string")]
    id: Option<String>,
    text: String,
    label: String,
    #[serde(default)]
    source: Option<String>,
}

fn id_as_string<'de, D>(d: D) -> std::result::Result<Option<String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Str(String),
        Int(i64),
    }
    Ok(match Option::<Id>::deserialize(d)? {
        None => None,
        Some(Id::Str(s)) if s.is_empty() => None,
        Some(Id::Str(s)) => Some(s),
        Some(Id::Int(i)) => Some(i.to_string()),
    })
}

fn record_to_example(index: usize, rec: RawRecord) -> Result<LabeledExample> {
    let label = KcLabel::from_str(&rec.label)
        .map_err(|_| Error::validation(format!("record {index}: unknown label {:?}", rec.label)))?;
    let source = match rec.source.as_deref() {
        None => Source::Unknown,
        Some(s) => {
            Source::from_str(s).map_err(|_| Error::validation(format!("record {index}: unknown source {s:?}")))?
        }
    };
    Ok(LabeledExample {
        id: rec.id.unwrap_or_else(|| format!("row-{index}")),
        normalized_text: normalize_text(&rec.text),
        raw_text: rec.text,
        label,
        source,
    })
}

/// Load a dataset file. Records need `text` and `label`; `id` and `source`
/// are optional (missing ids become `row-<index>`).
pub fn ingest(path: &Path, format: Format) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    match format {
        Format::Jsonl => {
            let reader = BufReader::new(file);
            let mut index = 0;
            for line in reader.lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: RawRecord =
                    serde_json::from_str(&line).map_err(|e| Error::validation(format!("record {index}: {e}")))?;
                examples.push(record_to_example(index, rec)?);
                index += 1;
            }
        }
        Format::Csv => {
            let mut reader = csv::Reader::from_reader(file);
            for (index, rec) in reader.deserialize::<RawRecord>().enumerate() {
                let rec = rec.map_err(|e| Error::validation(format!("record {index}: {e}")))?;
                examples.push(record_to_example(index, rec)?);
            }
        }
    }
    Dataset::new(examples)
}

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[a-z][a-z0-9+.\-]*://\S*|www\.\S*").unwrap())
}

fn mention_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").unwrap())
}

/// Code points stripped as emoji: Emoticons, Miscellaneous Symbols and
/// Pictographs, Transport and Map, Supplemental Symbols and Pictographs,
/// Dingbats, variation selectors and the zero-width joiner.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F600..=0x1F64F
        | 0x1F300..=0x1F5FF
        | 0x1F680..=0x1F6FF
        | 0x1F900..=0x1F9FF
        | 0x2700..=0x27BF
        | 0xFE00..=0xFE0F
        | 0x200D)
}

/// Lowercase, strip URLs, @-mentions and emoji, collapse whitespace.
///
/// Removals repeat until nothing more matches, so the result is a fixed point
/// (`normalize_text(normalize_text(x)) == normalize_text(x)`). Punctuation and
/// non-Latin letters are kept.
pub fn normalize_text(raw: &str) -> String {
    let mut s: String = raw.to_lowercase();
    // Lowercasing is not idempotent for a handful of code points.
    loop {
        let next = s.to_lowercase();
        if next == s {
            break;
        }
        s = next;
    }
    loop {
        let mut next: String = s.chars().filter(|&c| !is_emoji(c)).collect();
        next = url_regex().replace_all(&next, "").into_owned();
        next = mention_regex().replace_all(&next, "").into_owned();
        if next == s {
            break;
        }
        s = next;
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Deterministic assignment of example ids to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    /// Indices into `data` of the held-out fold and of its complement.
    pub fn split(&self, data: &Dataset, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold >= self.n_folds {
            return Err(Error::validation(format!(
                "fold index {fold} out of range for {} folds",
                self.n_folds
            )));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, ex) in data.examples().iter().enumerate() {
            match self.fold_of(&ex.id) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => return Err(Error::validation(format!("example {:?} missing from fold plan", ex.id))),
            }
        }
        Ok((train, test))
    }

    /// Per-fold, per-class example counts.
    pub fn fold_class_counts(&self, data: &Dataset) -> Vec<[usize; NUM_CLASSES]> {
        let mut counts = vec![[0; NUM_CLASSES]; self.n_folds];
        for ex in data.examples() {
            if let Some(f) = self.fold_of(&ex.id) {
                counts[f][ex.label.index()] += 1;
            }
        }
        counts
    }

    /// SHA-256 of the canonical JSON form; runs compared pairwise must share it.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("fold plan serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FoldPlan> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Stratified K-fold plan: each class is shuffled with the seeded generator and
/// dealt round-robin into folds. The deal for each class starts where the
/// previous class stopped, so total fold sizes also differ by at most one.
///
/// Classes absent from the dataset are ignored; every present class needs at
/// least `n_folds` members.
pub fn stratified_kfold(data: &Dataset, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::validation(format!("n_folds must be >= 2, got {n_folds}")));
    }
    for label in KcLabel::ALL {
        let n = data.count(label);
        if n > 0 && n < n_folds {
            return Err(Error::validation(format!(
                "class {label} has {n} examples, fewer than n_folds = {n_folds}"
            )));
        }
    }
    let mut rng = rng::stream(seed, 0);
    let mut assignment = BTreeMap::new();
    let mut next_fold = 0;
    for label in KcLabel::ALL {
        let mut members: Vec<usize> = data
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        for i in members {
            assignment.insert(data.examples()[i].id.clone(), next_fold);
            next_fold = (next_fold + 1) % n_folds;
        }
    }
    Ok(FoldPlan {
        n_folds,
        seed,
        assignment,
    })
}

/// Cohen's kappa between two coders' label sequences.
pub fn cohens_kappa(labels_a: &[KcLabel], labels_b: &[KcLabel]) -> Result<f64> {
    if labels_a.is_empty() || labels_a.len() != labels_b.len() {
        return Err(Error::validation(format!(
            "kappa needs equal non-empty label lists (got {} and {})",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len() as f64;
    let mut agree = 0usize;
    let mut marg_a = [0usize; NUM_CLASSES];
    let mut marg_b = [0usize; NUM_CLASSES];
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        agree += usize::from(a == b);
        marg_a[a.index()] += 1;
        marg_b[b.index()] += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marg_a
        .iter()
        .zip(&marg_b)
        .map(|(&x, &y)| (x as f64 / n) * (y as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        // Both coders used one and the same label throughout.
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(labels: &[KcLabel]) -> Dataset {
        Dataset::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &l)| LabeledExample::new(format!("e{i}"), "x", l))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn labels_roundtrip_and_definitions() {
        for (i, l) in KcLabel::ALL.into_iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(KcLabel::from_index(i), Some(l));
            assert_eq!(l.name().parse::<KcLabel>().unwrap(), l);
            assert!(!l.definition().is_empty());
        }
        assert_eq!("negotiate".parse::<KcLabel>().unwrap(), KcLabel::Negotiate);
        assert_eq!("NONKC".parse::<KcLabel>().unwrap(), KcLabel::NonKc);
        assert!("Test".parse::<KcLabel>().is_err());
        assert_eq!(KcLabel::from_index(4), None);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("Check https://x.co NOW!"), "check now!");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("@bob I agree."), "i agree.");
        assert_eq!(normalize_text("see www.example.org/a?b=1 ok"), "see ok");
        assert_eq!(normalize_text("great 😀👍 video\u{2764}\u{FE0F}!"), "great video!");
        assert_eq!(normalize_text("  a \t\n b  "), "a b");
        assert_eq!(normalize_text("Größe ПРИВЕТ, 你好?"), "größe привет, 你好?");
    }

    #[test]
    fn normalize_reaches_fixed_point_on_nested_constructs() {
        for s in ["www@bob.x", "http:@a//x y", "w\u{1F600}ww.x", "@@bob", "HTTP://A.B c"] {
            let once = normalize_text(s);
            assert_eq!(normalize_text(&once), once, "input {s:?}");
        }
        assert_eq!(normalize_text("www@bob.x"), "");
    }

    #[test]
    fn dataset_counts_and_duplicates() {
        let d = ds(&[KcLabel::NonKc, KcLabel::Share, KcLabel::Share]);
        assert_eq!(d.class_counts(), [1, 2, 0, 0]);
        let dup = vec![
            LabeledExample::new("a", "x", KcLabel::NonKc),
            LabeledExample::new("a", "y", KcLabel::Share),
        ];
        let err = Dataset::new(dup).unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn kfold_two_examples_two_folds() {
        let d = ds(&[KcLabel::NonKc, KcLabel::NonKc]);
        let plan = stratified_kfold(&d, 2, 7).unwrap();
        let counts = plan.fold_class_counts(&d);
        assert_eq!(counts[0][0], 1);
        assert_eq!(counts[1][0], 1);
    }

    #[test]
    fn kfold_errors() {
        let d = ds(&[KcLabel::NonKc, KcLabel::NonKc, KcLabel::Share]);
        let err = stratified_kfold(&d, 2, 1).unwrap_err();
        assert!(err.to_string().contains("Share"));
        assert!(stratified_kfold(&d, 1, 1).is_err());
    }

    #[test]
    fn kfold_is_deterministic_and_hash_stable() {
        let labels: Vec<KcLabel> = (0..40).map(|i| KcLabel::ALL[i % 4]).collect();
        let d = ds(&labels);
        let a = stratified_kfold(&d, 5, 42).unwrap();
        let b = stratified_kfold(&d, 5, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        let c = stratified_kfold(&d, 5, 43).unwrap();
        assert_ne!(a.assignment, c.assignment);
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn kappa_examples() {
        use KcLabel::*;
        let a = [NonKc, Share, Explore, Negotiate, Share];
        assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
        let x = [NonKc, NonKc, Share, Share];
        let y = [Share, Share, NonKc, NonKc];
        assert!((cohens_kappa(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        let same = [Explore; 5];
        assert_eq!(cohens_kappa(&same, &same).unwrap(), 1.0);
        assert!(cohens_kappa(&x, &y[..3]).is_err());
        assert!(cohens_kappa(&[], &[]).is_err());
    }
}
