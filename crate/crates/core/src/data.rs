//! Corpus loading, charset normalization, and summary statistics.
//!
//! The interchange format is UTF-8 TSV, one sample per line:
//! `id<TAB>source<TAB>target`, no header. JSON lines with keys
//! `id`/`source`/`target` are accepted as an alternative. Positions are
//! Unicode code-point indices throughout.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("sample {id}: source has {source_len} characters, target has {target_len}")]
    LengthMismatch {
        id: String,
        source_len: usize,
        target_len: usize,
    },
    #[error("sample {id}: {msg}")]
    InvalidSample { id: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Corpus file format accepted by [`load_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    JsonLines,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::JsonLines),
            other => Err(format!("unknown corpus format `{other}` (expected tsv or jsonl)")),
        }
    }
}

/// One spell-checking sample: a possibly-erroneous sentence, its corrected
/// form of equal length, and the positions where they differ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CscSample {
    id: String,
    source: Vec<char>,
    target: Vec<char>,
    error_positions: Vec<usize>,
}

impl CscSample {
    pub fn new(id: impl Into<String>, source: &str, target: &str) -> Result<Self, DataError> {
        Self::from_chars(
            id,
            source.chars().collect(),
            target.chars().collect(),
        )
    }

    pub fn from_chars(
        id: impl Into<String>,
        source: Vec<char>,
        target: Vec<char>,
    ) -> Result<Self, DataError> {
        let id = id.into();
        if source.len() != target.len() {
            return Err(DataError::LengthMismatch {
                id,
                source_len: source.len(),
                target_len: target.len(),
            });
        }
        let error_positions = diff_positions(&source, &target);
        Ok(CscSample {
            id,
            source,
            target,
            error_positions,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &[char] {
        &self.source
    }

    pub fn target(&self) -> &[char] {
        &self.target
    }

    pub fn source_string(&self) -> String {
        self.source.iter().collect()
    }

    pub fn target_string(&self) -> String {
        self.target.iter().collect()
    }

    /// Sorted, duplicate-free positions where source and target differ.
    pub fn error_positions(&self) -> &[usize] {
        &self.error_positions
    }

    pub fn is_erroneous(&self) -> bool {
        !self.error_positions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

fn diff_positions(source: &[char], target: &[char]) -> Vec<usize> {
    source
        .iter()
        .zip(target)
        .enumerate()
        .filter_map(|(i, (s, t))| (s != t).then_some(i))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    source: String,
    target: String,
}

impl Serialize for CscSample {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawRecord {
            id: self.id.clone(),
            source: self.source_string(),
            target: self.target_string(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CscSample {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawRecord::deserialize(deserializer)?;
        CscSample::new(raw.id, &raw.source, &raw.target).map_err(D::Error::custom)
    }
}

/// Traditional-to-simplified character table. Strictly one code point to one
/// code point; multi-character conversion rules are out of scope.
#[derive(Debug, Clone, Default)]
pub struct CharMap {
    mapping: HashMap<char, char>,
}

impl CharMap {
    pub fn new(mapping: HashMap<char, char>) -> Self {
        CharMap { mapping }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (char, char)>) -> Self {
        CharMap {
            mapping: pairs.into_iter().collect(),
        }
    }

    /// Loads a `traditional<TAB>simplified` table. Each side must be exactly
    /// one character; a key mapped to two different values is an error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut mapping = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let parse_err = |msg: String| DataError::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg,
            };
            let mut fields = line.split('\t');
            let (from, to) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => return Err(parse_err("expected two tab-separated fields".into())),
            };
            let from = single_char(from)
                .ok_or_else(|| parse_err(format!("key `{from}` is not a single character")))?;
            let to = single_char(to)
                .ok_or_else(|| parse_err(format!("value `{to}` is not a single character")))?;
            if let Some(prev) = mapping.insert(from, to) {
                if prev != to {
                    return Err(parse_err(format!(
                        "character `{from}` mapped to both `{prev}` and `{to}`"
                    )));
                }
            }
        }
        Ok(CharMap { mapping })
    }

    pub fn get(&self, c: char) -> Option<char> {
        self.mapping.get(&c).copied()
    }

    pub fn apply(&self, c: char) -> char {
        self.get(c).unwrap_or(c)
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

fn single_char(s: &str) -> Option<char> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

/// Applies the character table to both sentences and recomputes the error
/// positions. Lengths are preserved, so this cannot fail.
pub fn convert_charset(sample: &CscSample, map: &CharMap) -> CscSample {
    let source: Vec<char> = sample.source.iter().map(|&c| map.apply(c)).collect();
    let target: Vec<char> = sample.target.iter().map(|&c| map.apply(c)).collect();
    CscSample::from_chars(sample.id.clone(), source, target)
        .expect("per-character mapping preserves lengths")
}

/// Aggregate corpus counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentence_count: usize,
    /// Average source length in characters; 0 for an empty corpus.
    pub avg_length: f64,
    /// Total number of character-level errors.
    pub error_count: usize,
}

pub fn corpus_stats(samples: &[CscSample]) -> CorpusStats {
    let sentence_count = samples.len();
    let total_chars: usize = samples.iter().map(|s| s.len()).sum();
    let error_count: usize = samples.iter().map(|s| s.error_positions.len()).sum();
    let avg_length = if sentence_count == 0 {
        0.0
    } else {
        total_chars as f64 / sentence_count as f64
    };
    CorpusStats {
        sentence_count,
        avg_length,
        error_count,
    }
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<CscSample>, DataError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    load_corpus_from(reader, format, &path.display().to_string())
}

pub fn load_corpus_from(
    reader: impl BufRead,
    format: CorpusFormat,
    path_label: &str,
) -> Result<Vec<CscSample>, DataError> {
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let sample = match format {
            CorpusFormat::Tsv => parse_tsv_line(line, path_label, lineno)?,
            CorpusFormat::JsonLines => {
                serde_json::from_str::<CscSample>(line).map_err(|e| DataError::Parse {
                    path: path_label.to_string(),
                    line: lineno,
                    msg: e.to_string(),
                })?
            }
        };
        samples.push(sample);
    }
    Ok(samples)
}

fn parse_tsv_line(line: &str, path_label: &str, lineno: usize) -> Result<CscSample, DataError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(DataError::Parse {
            path: path_label.to_string(),
            line: lineno,
            msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
        });
    }
    if fields[0].is_empty() {
        return Err(DataError::Parse {
            path: path_label.to_string(),
            line: lineno,
            msg: "empty sample id".into(),
        });
    }
    CscSample::new(fields[0], fields[1], fields[2])
}

/// Writes the canonical TSV form. Rejects samples containing tab or newline
/// characters, which the format cannot represent.
pub fn save_corpus_tsv(samples: &[CscSample], path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_corpus_tsv(samples, &mut writer)?;
    writer.flush()?;
    Ok(())
}

pub fn write_corpus_tsv(samples: &[CscSample], writer: &mut impl Write) -> Result<(), DataError> {
    for sample in samples {
        let unrepresentable = |c: &char| matches!(c, '\t' | '\n' | '\r');
        if sample.id.contains(['\t', '\n', '\r'])
            || sample.source.iter().any(unrepresentable)
            || sample.target.iter().any(unrepresentable)
        {
            return Err(DataError::InvalidSample {
                id: sample.id.clone(),
                msg: "contains tab or newline, unrepresentable in TSV".into(),
            });
        }
        writeln!(
            writer,
            "{}\t{}\t{}",
            sample.id,
            sample.source_string(),
            sample.target_string()
        )?;
    }
    Ok(())
}

pub fn save_corpus_jsonl(samples: &[CscSample], path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for sample in samples {
        let line = serde_json::to_string(sample).expect("corpus records serialize");
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    Ok(())
}
