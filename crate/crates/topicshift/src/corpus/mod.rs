//! Corpus model and tooling for two-party topic-shift dialogues.
//!
//! The on-disk format is JSON lines: one dialogue object per line with
//! fields `id`, `domain`, `split`, optional `news`, and `turns`. Each turn
//! carries `speaker` ("A" or "B"), `text`, a binary `shift` label on every
//! turn but the first (does this turn start a new topic?), and an optional
//! `fine_label` (0–4) refining *how* the topic moved.
//!
//! Files written by [`write_corpus`] are canonical: loading and re-writing
//! such a file reproduces it byte for byte, which keeps checksums meaningful.

pub mod kappa;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Errors raised by corpus IO and analysis.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path} line {line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("annotator agreement: {0}")]
    Agreement(String),
    #[error("synthetic corpus config: {0}")]
    SynthConfig(String),
}

/// The six dialogue domains of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Domain {
    Health,
    Education,
    Technology,
    Sports,
    Games,
    Entertainment,
}

pub const ALL_DOMAINS: [Domain; 6] = [
    Domain::Health,
    Domain::Education,
    Domain::Technology,
    Domain::Sports,
    Domain::Games,
    Domain::Entertainment,
];

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Speaker {
    A,
    B,
}

/// One utterance. `shift` is absent on the first turn of a dialogue (there is
/// nothing to shift from) and 0/1 afterwards.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine_label: Option<u8>,
}

/// One dialogue: metadata plus its turn sequence. `news` preserves the source
/// article a dialogue was grounded in, when available.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dialogue {
    pub id: String,
    pub domain: Domain,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub news: Option<String>,
    pub turns: Vec<Utterance>,
}

// ── IO ──────────────────────────────────────────────────────────────────────

/// Reads a JSON-lines corpus. Malformed lines and empty `turns` arrays are
/// reported with their 1-based line number.
pub fn load_corpus(path: &Path) -> Result<Vec<Dialogue>, CorpusError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: display.clone(),
        message: e.to_string(),
    })?;
    let reader = BufReader::new(file);
    let mut dialogues = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Line {
            path: display.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        let dialogue: Dialogue = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            path: display.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        if dialogue.turns.is_empty() {
            return Err(CorpusError::Line {
                path: display.clone(),
                line: line_no,
                message: format!("dialogue '{}' has no turns", dialogue.id),
            });
        }
        dialogues.push(dialogue);
    }
    Ok(dialogues)
}

/// Writes dialogues in the canonical one-object-per-line form.
pub fn write_corpus(path: &Path, dialogues: &[Dialogue]) -> Result<(), CorpusError> {
    let display = path.display().to_string();
    let mut out = String::new();
    for d in dialogues {
        let line = serde_json::to_string(d).map_err(|e| CorpusError::Io {
            path: display.clone(),
            message: e.to_string(),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    let mut file = File::create(path).map_err(|e| CorpusError::Io {
        path: display.clone(),
        message: e.to_string(),
    })?;
    file.write_all(out.as_bytes()).map_err(|e| CorpusError::Io {
        path: display,
        message: e.to_string(),
    })
}

// ── Validation ──────────────────────────────────────────────────────────────

/// One rule violation, located by dialogue and (when turn-specific) by
/// 1-based turn index.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Violation {
    pub dialogue_id: String,
    pub turn: Option<usize>,
    pub message: String,
}

/// Output of [`validate`]: every violation found, in corpus order.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the labeling rules: speakers alternate, the first turn carries no
/// shift label, every later turn carries one, and label values are in range.
pub fn validate(dialogues: &[Dialogue]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut push = |id: &str, turn: Option<usize>, message: String| {
        report.violations.push(Violation {
            dialogue_id: id.to_string(),
            turn,
            message,
        });
    };
    for d in dialogues {
        if d.turns.is_empty() {
            push(&d.id, None, "dialogue has no turns".to_string());
            continue;
        }
        for (i, turn) in d.turns.iter().enumerate() {
            let turn_no = i + 1;
            if i == 0 {
                if turn.shift.is_some() {
                    push(
                        &d.id,
                        Some(turn_no),
                        "first turn must not carry a shift label".to_string(),
                    );
                }
            } else {
                match turn.shift {
                    None => push(&d.id, Some(turn_no), "missing shift label".to_string()),
                    Some(v) if v > 1 => {
                        push(&d.id, Some(turn_no), format!("shift label {v} is not 0 or 1"))
                    }
                    _ => {}
                }
                if d.turns[i - 1].speaker == turn.speaker {
                    push(
                        &d.id,
                        Some(turn_no),
                        "speakers must alternate between consecutive turns".to_string(),
                    );
                }
            }
            if let Some(f) = turn.fine_label {
                if f > 4 {
                    push(
                        &d.id,
                        Some(turn_no),
                        format!("fine label {f} outside the 0-4 range"),
                    );
                }
            }
        }
    }
    report
}

// ── Topic segmentation ──────────────────────────────────────────────────────

/// Contiguous topic segments of a dialogue as `(start, len)` pairs over
/// 0-based turn indices. A new topic starts at turn 0 and wherever `shift=1`.
pub fn topic_segments(dialogue: &Dialogue) -> Vec<(usize, usize)> {
    let mut starts = vec![0];
    for (i, turn) in dialogue.turns.iter().enumerate().skip(1) {
        if turn.shift == Some(1) {
            starts.push(i);
        }
    }
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let end = starts.get(k + 1).copied().unwrap_or(dialogue.turns.len());
            (s, end - s)
        })
        .collect()
}

// ── Pair extraction ─────────────────────────────────────────────────────────

/// One training/evaluation sample: everything said so far, the candidate
/// response, and whether the response starts a new topic.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Sample {
    pub dialogue_id: String,
    /// 1-based index of the response turn within its dialogue.
    pub turn: usize,
    pub context: Vec<String>,
    pub response: String,
    pub label: u8,
    /// Number of topics in the whole source dialogue.
    pub topic_count: usize,
    /// Turn length of the topic segment containing the last context turn.
    pub prev_topic_turns: usize,
}

/// Expands dialogues into per-turn samples: a k-turn dialogue yields k-1
/// samples (every turn but the first becomes a response). Pass a split to
/// keep only that slice of the corpus.
pub fn extract_pairs(dialogues: &[Dialogue], split: Option<Split>) -> Vec<Sample> {
    let mut samples = Vec::new();
    for d in dialogues {
        if let Some(s) = split {
            if d.split != s {
                continue;
            }
        }
        let segments = topic_segments(d);
        let topic_count = segments.len();
        for i in 1..d.turns.len() {
            let label = match d.turns[i].shift {
                Some(v) if v <= 1 => v,
                _ => continue, // unlabeled or out-of-range: skip, validate() reports it
            };
            let prev = i - 1;
            let prev_topic_turns = segments
                .iter()
                .find(|(start, len)| prev >= *start && prev < start + len)
                .map(|(_, len)| *len)
                .unwrap_or(0);
            samples.push(Sample {
                dialogue_id: d.id.clone(),
                turn: i + 1,
                context: d.turns[..i].iter().map(|t| t.text.clone()).collect(),
                response: d.turns[i].text.clone(),
                label,
                topic_count,
                prev_topic_turns,
            });
        }
    }
    samples
}

// ── Statistics ──────────────────────────────────────────────────────────────

/// Min / max / mean of a count distribution.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct MinMaxAvg {
    pub min: u64,
    pub max: u64,
    pub mean: f64,
}

impl MinMaxAvg {
    fn over(values: impl Iterator<Item = u64>) -> MinMaxAvg {
        let mut min = u64::MAX;
        let mut max = 0u64;
        let mut sum = 0u64;
        let mut n = 0u64;
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            n += 1;
        }
        if n == 0 {
            return MinMaxAvg::default();
        }
        MinMaxAvg {
            min,
            max,
            mean: sum as f64 / n as f64,
        }
    }
}

/// Corpus-level descriptive statistics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CorpusStats {
    pub dialogues: usize,
    pub by_split: BTreeMap<String, usize>,
    /// Dialogue counts per domain, then per split within the domain.
    pub by_domain: BTreeMap<String, BTreeMap<String, usize>>,
    pub dialogue_turns: MinMaxAvg,
    pub utterance_words: MinMaxAvg,
    pub dialogue_words: MinMaxAvg,
    pub topics_per_dialogue: MinMaxAvg,
    pub topic_turn_length: MinMaxAvg,
    /// For every 1-based turn index, how many dialogues shift at that turn.
    pub shift_counts_by_turn: Vec<(usize, usize)>,
    /// Occurrences of each fine label value 0-4.
    pub fine_label_counts: Vec<(u8, usize)>,
    /// Dialogue counts per number of topics.
    pub topic_count_histogram: Vec<(usize, usize)>,
}

/// Token count of one utterance: whitespace-separated words when the text
/// contains whitespace, individual characters otherwise (scripts without
/// word boundaries have nothing to split on).
pub fn word_count(text: &str) -> u64 {
    if text.contains(char::is_whitespace) {
        text.split_whitespace().count() as u64
    } else {
        text.chars().count() as u64
    }
}

pub fn stats(dialogues: &[Dialogue]) -> CorpusStats {
    let mut by_split: BTreeMap<String, usize> = BTreeMap::new();
    let mut by_domain: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut shift_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fine_counts: BTreeMap<u8, usize> = BTreeMap::new();
    let mut topic_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut utterance_words = Vec::new();
    let mut dialogue_words = Vec::new();
    let mut topic_lengths = Vec::new();
    let mut topics_per_dialogue = Vec::new();

    for d in dialogues {
        *by_split.entry(d.split.to_string()).or_default() += 1;
        *by_domain
            .entry(d.domain.to_string())
            .or_default()
            .entry(d.split.to_string())
            .or_default() += 1;
        let mut words_here = 0;
        for (i, turn) in d.turns.iter().enumerate() {
            let w = word_count(&turn.text);
            utterance_words.push(w);
            words_here += w;
            if i > 0 && turn.shift == Some(1) {
                *shift_counts.entry(i + 1).or_default() += 1;
            }
            if let Some(f) = turn.fine_label {
                *fine_counts.entry(f).or_default() += 1;
            }
        }
        dialogue_words.push(words_here);
        let segments = topic_segments(d);
        topics_per_dialogue.push(segments.len() as u64);
        *topic_counts.entry(segments.len()).or_default() += 1;
        for (_, len) in segments {
            topic_lengths.push(len as u64);
        }
    }

    CorpusStats {
        dialogues: dialogues.len(),
        by_split,
        by_domain,
        dialogue_turns: MinMaxAvg::over(dialogues.iter().map(|d| d.turns.len() as u64)),
        utterance_words: MinMaxAvg::over(utterance_words.into_iter()),
        dialogue_words: MinMaxAvg::over(dialogue_words.into_iter()),
        topics_per_dialogue: MinMaxAvg::over(topics_per_dialogue.into_iter()),
        topic_turn_length: MinMaxAvg::over(topic_lengths.into_iter()),
        shift_counts_by_turn: shift_counts.into_iter().collect(),
        fine_label_counts: fine_counts.into_iter().collect(),
        topic_count_histogram: topic_counts.into_iter().collect(),
    }
}

/// Renders a `(bucket, count)` table as two-column CSV.
pub fn histogram_csv<K: fmt::Display>(rows: &[(K, usize)]) -> String {
    let mut out = String::from("bucket,count\n");
    for (bucket, count) in rows {
        out.push_str(&format!("{bucket},{count}\n"));
    }
    out
}
