//! Construction of contrastive mini-batches from spell-checking samples and
//! the knowledge base.
//!
//! Each mini-batch pairs one original (erroneous) sentence with one positive
//! and N negatives. For the phonetic and visual kinds, positives and
//! negatives substitute a single character at the error position; for the
//! definition kind, the positive is a definition sentence of the gold word
//! covering the error and the negatives are definitions of other words.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CscSample;
use crate::encoder::Encoder;
use crate::kb::{select_definition, span_containing, DefinitionStrategy, KbError, KnowledgeBase};

/// The three knowledge sources a contrastive objective can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KnowledgeKind {
    #[serde(rename = "P")]
    Phonetics,
    #[serde(rename = "V")]
    Vision,
    #[serde(rename = "D")]
    Definition,
}

impl std::fmt::Display for KnowledgeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            KnowledgeKind::Phonetics => "P",
            KnowledgeKind::Vision => "V",
            KnowledgeKind::Definition => "D",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for KnowledgeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "P" | "p" => Ok(KnowledgeKind::Phonetics),
            "V" | "v" => Ok(KnowledgeKind::Vision),
            "D" | "d" => Ok(KnowledgeKind::Definition),
            other => Err(format!("unknown knowledge kind `{other}` (expected P, V, or D)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum PairError {
    /// Benign: this objective has nothing to offer for this sample position;
    /// the caller drops the objective for the sample.
    #[error("no {kind} positive available for `{ch}` at position {pos}")]
    Skip {
        kind: KnowledgeKind,
        ch: char,
        pos: usize,
    },
    #[error("need {needed} negatives but only {available} candidates are available")]
    InsufficientNegatives { needed: usize, available: usize },
    #[error("dictionary has {words} words; building a batch with {negatives} negatives needs at least {}", negatives + 1)]
    DictionaryTooSmall { words: usize, negatives: usize },
    #[error("position {pos} is not an error position of sample {id}")]
    NotAnErrorPosition { id: String, pos: usize },
    #[error("negative count must be at least 1")]
    ZeroNegatives,
    #[error("malformed batch: {0}")]
    Malformed(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PairError {
    /// True for the skip signal, false for hard errors.
    pub fn is_skip(&self) -> bool {
        matches!(self, PairError::Skip { .. })
    }
}

/// One contrastive mini-batch: the original sentence, a positive, N
/// negatives, and the position metadata the metric needs.
///
/// `error_index` is the substituted position for the phonetic/visual kinds.
/// For the definition kind it is the start of the gold word span, so that
/// `error_index..=error_index+span_width` covers the word; `span_width` is 0
/// for the other kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub kind: KnowledgeKind,
    #[serde(with = "chars_as_string")]
    pub original: Vec<char>,
    #[serde(with = "chars_as_string")]
    pub positive: Vec<char>,
    #[serde(with = "char_vecs_as_strings")]
    pub negatives: Vec<Vec<char>>,
    pub error_index: usize,
    pub span_width: usize,
}

mod chars_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(chars: &[char], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&chars.iter().collect::<String>())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<char>, D::Error> {
        Ok(String::deserialize(d)?.chars().collect())
    }
}

mod char_vecs_as_strings {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(items: &[Vec<char>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(items.iter().map(|c| c.iter().collect::<String>()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<char>>, D::Error> {
        Ok(Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|s| s.chars().collect())
            .collect())
    }
}

impl ContrastiveBatch {
    /// Structural checks that do not need the knowledge base: shape, the
    /// single-substitution property for P/V, and negative distinctness.
    pub fn validate_structure(&self) -> Result<(), PairError> {
        let fail = |msg: String| Err(PairError::Malformed(msg));
        if self.negatives.is_empty() {
            return fail("no negatives".into());
        }
        for (i, a) in self.negatives.iter().enumerate() {
            if a == &self.positive {
                return fail(format!("negative {i} equals the positive"));
            }
            for b in &self.negatives[i + 1..] {
                if a == b {
                    return fail("duplicate negatives".into());
                }
            }
        }
        match self.kind {
            KnowledgeKind::Phonetics | KnowledgeKind::Vision => {
                if self.span_width != 0 {
                    return fail("span_width must be 0 for P/V".into());
                }
                if self.error_index >= self.original.len() {
                    return fail("error_index out of range".into());
                }
                for (label, sentence) in std::iter::once(("positive", &self.positive))
                    .chain(self.negatives.iter().map(|n| ("negative", n)))
                {
                    if sentence.len() != self.original.len() {
                        return fail(format!("{label} length differs from the original"));
                    }
                    let diffs: Vec<usize> = sentence
                        .iter()
                        .zip(&self.original)
                        .enumerate()
                        .filter_map(|(i, (a, b))| (a != b).then_some(i))
                        .collect();
                    if diffs != [self.error_index] {
                        return fail(format!(
                            "{label} differs from the original at {diffs:?}, expected [{}]",
                            self.error_index
                        ));
                    }
                }
            }
            KnowledgeKind::Definition => {
                if self.positive.is_empty() {
                    return fail("empty positive definition".into());
                }
                if self.error_index + self.span_width >= self.original.len() {
                    return fail("word span out of range".into());
                }
                if self.negatives.iter().any(|n| n.is_empty()) {
                    return fail("empty negative definition".into());
                }
            }
        }
        Ok(())
    }
}

fn check_common(
    sample: &CscSample,
    error_index: usize,
    n: usize,
) -> Result<char, PairError> {
    if n == 0 {
        return Err(PairError::ZeroNegatives);
    }
    if !sample.error_positions().contains(&error_index) {
        return Err(PairError::NotAnErrorPosition {
            id: sample.id().to_string(),
            pos: error_index,
        });
    }
    Ok(sample.source()[error_index])
}

/// Draws `n` distinct elements, order determined by the rng.
fn sample_distinct<T: Copy>(pool: &[T], n: usize, rng: &mut impl Rng) -> Vec<T> {
    debug_assert!(n <= pool.len());
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| pool[i]).collect()
}

fn substitute(sentence: &[char], pos: usize, c: char) -> Vec<char> {
    let mut out = sentence.to_vec();
    out[pos] = c;
    out
}

/// Builds a phonetic mini-batch: the positive substitutes a character with a
/// shared toneless syllable at the error position; each negative substitutes
/// a vocabulary character whose toneless syllables are disjoint from the
/// error character's.
pub fn build_phonetic_batch(
    sample: &CscSample,
    error_index: usize,
    n: usize,
    kb: &KnowledgeBase,
    vocab: &[char],
    rng: &mut impl Rng,
) -> Result<ContrastiveBatch, PairError> {
    let orig_char = check_common(sample, error_index, n)?;
    let positive_pool: Vec<char> = vocab
        .iter()
        .copied()
        .filter(|&c| kb.pinyin.phonetically_similar(orig_char, c))
        .collect();
    if positive_pool.is_empty() {
        return Err(PairError::Skip {
            kind: KnowledgeKind::Phonetics,
            ch: orig_char,
            pos: error_index,
        });
    }
    let negative_pool: Vec<char> = vocab
        .iter()
        .copied()
        .filter(|&c| c != orig_char && kb.pinyin.phonetically_disjoint(orig_char, c))
        .collect();
    if negative_pool.len() < n {
        return Err(PairError::InsufficientNegatives {
            needed: n,
            available: negative_pool.len(),
        });
    }
    let positive_char = positive_pool[rng.random_range(0..positive_pool.len())];
    let negative_chars = sample_distinct(&negative_pool, n, rng);
    Ok(ContrastiveBatch {
        kind: KnowledgeKind::Phonetics,
        original: sample.source().to_vec(),
        positive: substitute(sample.source(), error_index, positive_char),
        negatives: negative_chars
            .into_iter()
            .map(|c| substitute(sample.source(), error_index, c))
            .collect(),
        error_index,
        span_width: 0,
    })
}

/// Builds a visual mini-batch: the positive substitutes a member of the
/// error character's confusion set; negatives substitute vocabulary
/// characters outside that set.
pub fn build_visual_batch(
    sample: &CscSample,
    error_index: usize,
    n: usize,
    kb: &KnowledgeBase,
    vocab: &[char],
    rng: &mut impl Rng,
) -> Result<ContrastiveBatch, PairError> {
    let orig_char = check_common(sample, error_index, n)?;
    let similar = kb.confusion.similar_to(orig_char);
    let positive_pool: Vec<char> = vocab
        .iter()
        .copied()
        .filter(|c| similar.contains(c))
        .collect();
    if positive_pool.is_empty() {
        return Err(PairError::Skip {
            kind: KnowledgeKind::Vision,
            ch: orig_char,
            pos: error_index,
        });
    }
    let negative_pool: Vec<char> = vocab
        .iter()
        .copied()
        .filter(|&c| c != orig_char && !similar.contains(&c))
        .collect();
    if negative_pool.len() < n {
        return Err(PairError::InsufficientNegatives {
            needed: n,
            available: negative_pool.len(),
        });
    }
    let positive_char = positive_pool[rng.random_range(0..positive_pool.len())];
    let negative_chars = sample_distinct(&negative_pool, n, rng);
    Ok(ContrastiveBatch {
        kind: KnowledgeKind::Vision,
        original: sample.source().to_vec(),
        positive: substitute(sample.source(), error_index, positive_char),
        negatives: negative_chars
            .into_iter()
            .map(|c| substitute(sample.source(), error_index, c))
            .collect(),
        error_index,
        span_width: 0,
    })
}

/// Builds a definition mini-batch. The gold sentence is segmented, the word
/// span covering the error is looked up in the dictionary (falling back to
/// the single gold character, then skipping), and its selected definition
/// becomes the positive. Negatives are definitions of `n` other words under
/// the same selection strategy, distinct as sentences.
///
/// The emitted `error_index` is the start of the word span so that
/// `error_index..=error_index+span_width` covers the word in the original.
pub fn build_definition_batch(
    sample: &CscSample,
    error_index: usize,
    n: usize,
    kb: &KnowledgeBase,
    strategy: DefinitionStrategy,
    sim_encoder: Option<&dyn Encoder>,
    rng: &mut impl Rng,
) -> Result<ContrastiveBatch, PairError> {
    check_common(sample, error_index, n)?;
    if kb.dictionary.len() < n + 1 {
        return Err(PairError::DictionaryTooSmall {
            words: kb.dictionary.len(),
            negatives: n,
        });
    }
    let spans = kb.tokenize(sample.target());
    let span = span_containing(&spans, error_index)?;

    // the gold word, falling back to the single gold character
    let (word, span_start, span_width) = if kb.dictionary.contains_chars(span.word()) {
        (span.word().to_vec(), span.start(), span.width())
    } else {
        let gold_char = sample.target()[error_index];
        if kb.dictionary.contains(&gold_char.to_string()) {
            (vec![gold_char], error_index, 0)
        } else {
            return Err(PairError::Skip {
                kind: KnowledgeKind::Definition,
                ch: gold_char,
                pos: error_index,
            });
        }
    };
    let word_str: String = word.iter().collect();
    let positive = select_definition(
        &word,
        sample.target(),
        &kb.dictionary,
        strategy,
        sim_encoder,
        rng,
    )?;

    let candidates: Vec<&str> = kb
        .dictionary
        .words()
        .filter(|w| **w != *word_str)
        .collect();
    let order = sample_distinct(&candidates, candidates.len(), rng);
    let mut negatives: Vec<Vec<char>> = Vec::with_capacity(n);
    for other in order {
        if negatives.len() == n {
            break;
        }
        let other_chars: Vec<char> = other.chars().collect();
        let definition = select_definition(
            &other_chars,
            sample.target(),
            &kb.dictionary,
            strategy,
            sim_encoder,
            rng,
        )?;
        if definition != positive && !negatives.contains(&definition) {
            negatives.push(definition);
        }
    }
    if negatives.len() < n {
        return Err(PairError::InsufficientNegatives {
            needed: n,
            available: negatives.len(),
        });
    }
    Ok(ContrastiveBatch {
        kind: KnowledgeKind::Definition,
        original: sample.source().to_vec(),
        positive,
        negatives,
        error_index: span_start,
        span_width,
    })
}

/// Writes batches as JSON lines, one batch per line.
pub fn write_batches(path: impl AsRef<Path>, batches: &[ContrastiveBatch]) -> Result<(), PairError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for batch in batches {
        let line = serde_json::to_string(batch).expect("batches serialize");
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a JSON-lines batch file, validating structure.
pub fn read_batches(path: impl AsRef<Path>) -> Result<Vec<ContrastiveBatch>, PairError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut batches = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let batch: ContrastiveBatch =
            serde_json::from_str(&line).map_err(|e| PairError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        batch.validate_structure().map_err(|e| PairError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        batches.push(batch);
    }
    Ok(batches)
}
