//! Deterministic synthetic dialogue generator.
//!
//! Each dialogue strings together a few topics. Every topic draws its words
//! from its own disjoint vocabulary, so a topic change is visible as a
//! wholesale vocabulary change. Within a topic, the last utterance consists
//! solely of that vocabulary's dedicated closing token, giving a
//! context-only cue that the topic is about to end — the turn *after* an
//! all-closer utterance is a shift (or the dialogue ends). Detectors
//! therefore have signal both in the response (new vocabulary) and in the
//! context alone (closing token just seen).

use super::{CorpusError, Dialogue, Speaker, Split, Utterance, ALL_DOMAINS};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Knobs for [`generate`]. All ranges are inclusive `(min, max)` pairs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Dialogue counts per split.
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Topics per dialogue; the max must not exceed the vocabulary count.
    pub topics_per_dialogue: (usize, usize),
    /// Turns per topic (the last one is the closing utterance).
    pub turns_per_topic: (usize, usize),
    /// Tokens per utterance.
    pub utterance_tokens: (usize, usize),
    /// Explicit topic vocabularies; element 0 of each is its closing token.
    /// When absent, `default_vocab_count` vocabularies of
    /// `default_vocab_size` tokens named `t{i}w{j}` are built.
    pub topic_vocabs: Option<Vec<Vec<String>>>,
    pub default_vocab_count: usize,
    pub default_vocab_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 200,
            val: 40,
            test: 40,
            topics_per_dialogue: (2, 5),
            turns_per_topic: (4, 7),
            utterance_tokens: (3, 6),
            topic_vocabs: None,
            default_vocab_count: 6,
            default_vocab_size: 12,
        }
    }
}

impl SynthConfig {
    /// The vocabularies generation will use (explicit or default-built).
    pub fn resolved_vocabs(&self) -> Vec<Vec<String>> {
        match &self.topic_vocabs {
            Some(v) => v.clone(),
            None => (0..self.default_vocab_count)
                .map(|t| {
                    (0..self.default_vocab_size)
                        .map(|j| format!("t{t}w{j}"))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: String| Err(CorpusError::SynthConfig(m));
        if self.train + self.val + self.test == 0 {
            return fail("all split sizes are zero".to_string());
        }
        let ranges = [
            ("topics_per_dialogue", self.topics_per_dialogue, 1),
            ("turns_per_topic", self.turns_per_topic, 2),
            ("utterance_tokens", self.utterance_tokens, 1),
        ];
        for (name, (min, max), floor) in ranges {
            if min < floor {
                return fail(format!("{name} min must be at least {floor}, got {min}"));
            }
            if min > max {
                return fail(format!("{name} range ({min}, {max}) is empty"));
            }
        }
        let vocabs = self.resolved_vocabs();
        if vocabs.len() < 2 {
            return fail(format!(
                "need at least 2 topic vocabularies, got {}",
                vocabs.len()
            ));
        }
        if self.topics_per_dialogue.1 > vocabs.len() {
            return fail(format!(
                "topics_per_dialogue max {} exceeds the {} available vocabularies",
                self.topics_per_dialogue.1,
                vocabs.len()
            ));
        }
        let mut seen: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
        for (i, vocab) in vocabs.iter().enumerate() {
            if vocab.len() < 2 {
                return fail(format!(
                    "vocabulary {i} needs a closing token plus at least one word, got {} tokens",
                    vocab.len()
                ));
            }
            for token in vocab {
                if token.is_empty() || token.contains(char::is_whitespace) {
                    return fail(format!("vocabulary {i} token '{token}' is empty or has whitespace"));
                }
                if let Some(other) = seen.insert(token.as_str(), i) {
                    return fail(format!(
                        "token '{token}' appears in vocabularies {other} and {i}; vocabularies must be disjoint"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Generates the configured corpus. Identical `(config, seed)` pairs yield
/// byte-identical corpora.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<Vec<Dialogue>, CorpusError> {
    config.validate()?;
    let vocabs = config.resolved_vocabs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = config.train + config.val + config.test;
    let mut dialogues = Vec::with_capacity(total);

    for i in 0..total {
        let split = if i < config.train {
            Split::Train
        } else if i < config.train + config.val {
            Split::Val
        } else {
            Split::Test
        };
        let n_topics = rng.gen_range(config.topics_per_dialogue.0..=config.topics_per_dialogue.1);
        let vocab_ids = rand::seq::index::sample(&mut rng, vocabs.len(), n_topics);

        let mut turns: Vec<Utterance> = Vec::new();
        for (topic_no, vocab_id) in vocab_ids.iter().enumerate() {
            let vocab = &vocabs[vocab_id];
            let closer = &vocab[0];
            let words = &vocab[1..];
            let topic_turns = rng.gen_range(config.turns_per_topic.0..=config.turns_per_topic.1);
            for j in 0..topic_turns {
                let len = rng.gen_range(config.utterance_tokens.0..=config.utterance_tokens.1);
                let tokens: Vec<&str> = if j + 1 == topic_turns {
                    std::iter::repeat_n(closer.as_str(), len).collect()
                } else {
                    (0..len)
                        .map(|_| words[rng.gen_range(0..words.len())].as_str())
                        .collect()
                };
                let global = turns.len();
                let shift = if global == 0 {
                    None
                } else if j == 0 {
                    Some(1)
                } else {
                    Some(0)
                };
                let fine_label = match shift {
                    None => None,
                    Some(1) => Some(3 + rng.gen_range(0..2u8)),
                    Some(_) => Some(rng.gen_range(0..3u8)),
                };
                turns.push(Utterance {
                    speaker: if global.is_multiple_of(2) { Speaker::A } else { Speaker::B },
                    text: tokens.join(" "),
                    shift,
                    fine_label,
                });
                let _ = topic_no;
            }
        }

        dialogues.push(Dialogue {
            id: format!("synth-{i:04}"),
            domain: ALL_DOMAINS[i % ALL_DOMAINS.len()],
            split,
            news: None,
            turns,
        });
    }
    Ok(dialogues)
}
