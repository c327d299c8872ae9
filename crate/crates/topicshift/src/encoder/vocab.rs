//! Vocabulary construction, tokenization, and text-to-id encoding.
//!
//! Four special tokens occupy fixed ids so checkpoints and corpora can rely
//! on them: `[PAD]`=0, `[UNK]`=1, `[CLS]`=2, `[SEP]`=3. Everything after
//! those is assigned in first-occurrence order over the corpus, which keeps
//! vocabulary files reproducible.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::EncoderError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// How raw text is split into tokens.
///
/// `Char` treats every non-whitespace character as a token (the right choice
/// for scripts written without word boundaries); `Whitespace` splits on
/// runs of whitespace (for space-delimited text).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum TokenizeMode {
    #[default]
    Char,
    Whitespace,
}


impl FromStr for TokenizeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(TokenizeMode::Char),
            "whitespace" => Ok(TokenizeMode::Whitespace),
            other => Err(format!("unknown tokenize mode '{other}' (expected 'char' or 'whitespace')")),
        }
    }
}

impl fmt::Display for TokenizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizeMode::Char => "char",
            TokenizeMode::Whitespace => "whitespace",
        })
    }
}

/// Splits one text into tokens under the given mode.
pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    match mode {
        TokenizeMode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
        TokenizeMode::Whitespace => text.split_whitespace().map(String::from).collect(),
    }
}

/// Token table with a fixed special prefix. Ids are dense: `0..size()`.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary over a corpus of texts in first-occurrence order.
    /// An empty corpus is refused: training on it could only ever see `[UNK]`.
    pub fn build<S: AsRef<str>>(texts: &[S], mode: TokenizeMode) -> Result<Vocab, EncoderError> {
        if texts.is_empty() {
            return Err(EncoderError::EmptyCorpus);
        }
        let mut vocab = Vocab::specials_only();
        for text in texts {
            for token in tokenize(text.as_ref(), mode) {
                vocab.intern(token);
            }
        }
        Ok(vocab)
    }

    fn specials_only() -> Vocab {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            token_to_id,
            tokens,
        }
    }

    fn intern(&mut self, token: String) {
        if !self.token_to_id.contains_key(&token) {
            self.token_to_id.insert(token.clone(), self.tokens.len());
            self.tokens.push(token);
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Id of a token; unknown tokens map to `[UNK]`.
    pub fn id_of(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Encodes a list of text segments as one id sequence:
    /// `[CLS] seg1 [SEP] seg2 [SEP] ...` — every segment is closed by `[SEP]`.
    ///
    /// When the sequence exceeds `max_len` it is truncated from the *left*,
    /// keeping `[CLS]` and the most recent `max_len - 1` tokens: for shift
    /// detection the end of the context matters far more than its start.
    pub fn encode_text<S: AsRef<str>>(
        &self,
        segments: &[S],
        mode: TokenizeMode,
        max_len: usize,
    ) -> Result<Vec<usize>, EncoderError> {
        if max_len < 2 {
            return Err(EncoderError::MaxLenTooSmall { max_len });
        }
        let mut ids = vec![CLS_ID];
        for seg in segments {
            for token in tokenize(seg.as_ref(), mode) {
                ids.push(self.id_of(&token));
            }
            ids.push(SEP_ID);
        }
        if ids.len() > max_len {
            let keep = max_len - 1;
            let tail = ids.split_off(ids.len() - keep);
            ids = Vec::with_capacity(max_len);
            ids.push(CLS_ID);
            ids.extend(tail);
        }
        Ok(ids)
    }

    /// Writes the vocabulary as plain text, one token per line; the line
    /// number (from zero) is the token id.
    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let mut out = String::new();
        for token in &self.tokens {
            out.push_str(token);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| EncoderError::VocabIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Reads a vocabulary written by [`Vocab::save`]. The special prefix must
    /// be intact and tokens must be unique, otherwise ids would be ambiguous.
    pub fn load(path: &Path) -> Result<Vocab, EncoderError> {
        let text = fs::read_to_string(path).map_err(|e| EncoderError::VocabIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut tokens = Vec::new();
        let mut token_to_id = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if token_to_id.insert(line.to_string(), i).is_some() {
                return Err(EncoderError::VocabIo {
                    path: path.display().to_string(),
                    message: format!("duplicate token '{line}' at line {}", i + 1),
                });
            }
            tokens.push(line.to_string());
        }
        for (i, special) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(EncoderError::VocabIo {
                    path: path.display().to_string(),
                    message: format!("expected special token {special} at line {}", i + 1),
                });
            }
        }
        Ok(Vocab {
            token_to_id,
            tokens,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_mode_assigns_first_occurrence_ids() {
        let vocab = Vocab::build(&["ab", "bc"], TokenizeMode::Char).unwrap();
        // 4 specials + a, b, c
        assert_eq!(vocab.size(), 7);
        assert_eq!(vocab.id_of("a"), 4);
        assert_eq!(vocab.id_of("b"), 5);
        assert_eq!(vocab.id_of("c"), 6);
        assert_eq!(vocab.id_of("z"), UNK_ID);
    }

    #[test]
    fn whitespace_mode_splits_on_runs() {
        let vocab = Vocab::build(&["hi there"], TokenizeMode::Whitespace).unwrap();
        assert_eq!(vocab.size(), 6);
        assert_eq!(tokenize("a  b\tc\n", TokenizeMode::Whitespace).len(), 3);
    }

    #[test]
    fn empty_corpus_is_refused() {
        let texts: [&str; 0] = [];
        assert!(matches!(
            Vocab::build(&texts, TokenizeMode::Char),
            Err(EncoderError::EmptyCorpus)
        ));
    }

    #[test]
    fn encode_wraps_segments_with_specials() {
        let vocab = Vocab::build(&["ab"], TokenizeMode::Char).unwrap();
        let ids = vocab.encode_text(&["ab"], TokenizeMode::Char, 16).unwrap();
        assert_eq!(ids, vec![CLS_ID, 4, 5, SEP_ID]);
    }

    #[test]
    fn over_length_input_truncates_from_the_left_keeping_cls() {
        let vocab = Vocab::build(&["abcdef"], TokenizeMode::Char).unwrap();
        let ids = vocab.encode_text(&["abcdef"], TokenizeMode::Char, 4).unwrap();
        // Full sequence is [CLS] a b c d e f [SEP]; the most recent three
        // tokens survive: e f [SEP].
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(ids[1], vocab.id_of("e"));
        assert_eq!(ids[2], vocab.id_of("f"));
        assert_eq!(ids[3], SEP_ID);
    }

    #[test]
    fn max_len_below_two_is_an_error() {
        let vocab = Vocab::build(&["ab"], TokenizeMode::Char).unwrap();
        assert!(matches!(
            vocab.encode_text(&["ab"], TokenizeMode::Char, 1),
            Err(EncoderError::MaxLenTooSmall { .. })
        ));
    }

    #[test]
    fn save_load_round_trip_preserves_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = Vocab::build(&["ab", "bc"], TokenizeMode::Char).unwrap();
        vocab.save(&path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("[PAD]")); // line number = id

        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.size(), vocab.size());
        for id in 0..vocab.size() {
            assert_eq!(loaded.token(id), vocab.token(id));
        }
    }
}
