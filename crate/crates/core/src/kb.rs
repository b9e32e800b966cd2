//! Read-only knowledge sources: pinyin readings, a visual confusion set, and
//! a definition dictionary, plus word segmentation over that dictionary.
//!
//! File formats:
//! - pinyin table: `char<TAB>syllable1,syllable2,...` where a syllable is
//!   toneless letters followed by one tone digit (`qi3`)
//! - confusion set: `char<TAB>string-of-similar-characters`
//! - dictionary: JSON lines `{"word": ..., "definitions": [...]}` with
//!   definition order significant

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use thiserror::Error;

use crate::encoder::{Encoder, ModelError};
use crate::math::cosine;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid syllable `{0}`: expected letters followed by one tone digit 0-4")]
    InvalidSyllable(String),
    #[error("word `{0}` not found in the dictionary")]
    WordNotFound(String),
    #[error("position {pos} is outside the sentence (length {len})")]
    PositionOutOfRange { pos: usize, len: usize },
    #[error("definition strategy `similar` requires a similarity encoder")]
    MissingSimilarityEncoder,
    #[error(transparent)]
    Encoder(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One pinyin reading: toneless letters plus a tone digit (0 = neutral).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Syllable {
    sound: String,
    tone: u8,
}

impl Syllable {
    pub fn new(sound: impl Into<String>, tone: u8) -> Result<Self, KbError> {
        let sound = sound.into();
        if sound.is_empty() || tone > 4 {
            return Err(KbError::InvalidSyllable(format!("{sound}{tone}")));
        }
        Ok(Syllable { sound, tone })
    }

    /// Parses strings like `qi3` or `lü4`.
    pub fn parse(s: &str) -> Result<Self, KbError> {
        let mut chars: Vec<char> = s.chars().collect();
        let tone = match chars.pop() {
            Some(d) if d.is_ascii_digit() => d as u8 - b'0',
            _ => return Err(KbError::InvalidSyllable(s.to_string())),
        };
        let sound: String = chars.into_iter().collect();
        if sound.is_empty() || sound.chars().any(|c| c.is_ascii_digit()) {
            return Err(KbError::InvalidSyllable(s.to_string()));
        }
        Syllable::new(sound, tone)
    }

    pub fn sound(&self) -> &str {
        &self.sound
    }

    pub fn tone(&self) -> u8 {
        self.tone
    }
}

impl std::fmt::Display for Syllable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.sound, self.tone)
    }
}

fn empty_readings() -> &'static BTreeSet<Syllable> {
    static EMPTY: OnceLock<BTreeSet<Syllable>> = OnceLock::new();
    EMPTY.get_or_init(BTreeSet::new)
}

/// Character-to-readings table. A character may have several readings; all of
/// them participate in similarity checks so polyphones never produce false
/// negatives.
#[derive(Debug, Clone, Default)]
pub struct PinyinTable {
    readings: HashMap<char, BTreeSet<Syllable>>,
}

impl PinyinTable {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (char, Vec<Syllable>)>,
    ) -> Result<Self, KbError> {
        let mut readings: HashMap<char, BTreeSet<Syllable>> = HashMap::new();
        for (c, syls) in entries {
            readings.entry(c).or_default().extend(syls);
        }
        readings.retain(|_, v| !v.is_empty());
        Ok(PinyinTable { readings })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut readings: HashMap<char, BTreeSet<Syllable>> = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let parse_err = |msg: String| KbError::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg,
            };
            let mut fields = line.split('\t');
            let (ch, syls) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => return Err(parse_err("expected two tab-separated fields".into())),
            };
            let ch = single_char(ch)
                .ok_or_else(|| parse_err(format!("`{ch}` is not a single character")))?;
            let entry = readings.entry(ch).or_default();
            for part in syls.split(',') {
                let syl = Syllable::parse(part.trim())
                    .map_err(|e| parse_err(e.to_string()))?;
                entry.insert(syl);
            }
            if entry.is_empty() {
                return Err(parse_err(format!("character `{ch}` has no readings")));
            }
        }
        Ok(PinyinTable { readings })
    }

    /// Reading set of `c`; empty when the character is absent.
    pub fn pinyin_of(&self, c: char) -> &BTreeSet<Syllable> {
        self.readings.get(&c).unwrap_or_else(|| empty_readings())
    }

    /// Toneless sounds of `c`.
    pub fn toneless(&self, c: char) -> BTreeSet<&str> {
        self.pinyin_of(c).iter().map(|s| s.sound()).collect()
    }

    /// True iff `a != b` and the two characters share a toneless syllable.
    pub fn phonetically_similar(&self, a: char, b: char) -> bool {
        if a == b {
            return false;
        }
        let ta = self.toneless(a);
        if ta.is_empty() {
            return false;
        }
        self.toneless(b).iter().any(|s| ta.contains(s))
    }

    /// True iff the toneless syllable sets of `a` and `b` are disjoint.
    /// Characters without readings are disjoint from everything.
    pub fn phonetically_disjoint(&self, a: char, b: char) -> bool {
        let ta = self.toneless(a);
        self.toneless(b).iter().all(|s| !ta.contains(s))
    }

    pub fn contains(&self, c: char) -> bool {
        self.readings.contains_key(&c)
    }

    /// Characters present in the table, sorted by code point.
    pub fn chars(&self) -> Vec<char> {
        let mut out: Vec<char> = self.readings.keys().copied().collect();
        out.sort_unstable();
        out
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

fn empty_chars() -> &'static BTreeSet<char> {
    static EMPTY: OnceLock<BTreeSet<char>> = OnceLock::new();
    EMPTY.get_or_init(BTreeSet::new)
}

/// Map from a character to the characters easily confused with it visually.
/// Self-references in the source file are dropped so that no character is in
/// its own set.
#[derive(Debug, Clone, Default)]
pub struct VisualConfusionSet {
    similar: HashMap<char, BTreeSet<char>>,
}

impl VisualConfusionSet {
    pub fn from_entries(entries: impl IntoIterator<Item = (char, Vec<char>)>) -> Self {
        let mut similar: HashMap<char, BTreeSet<char>> = HashMap::new();
        for (c, set) in entries {
            let entry = similar.entry(c).or_default();
            entry.extend(set);
            entry.remove(&c);
        }
        similar.retain(|_, v| !v.is_empty());
        VisualConfusionSet { similar }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut similar: HashMap<char, BTreeSet<char>> = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let parse_err = |msg: String| KbError::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg,
            };
            let mut fields = line.split('\t');
            let (ch, rest) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => return Err(parse_err("expected two tab-separated fields".into())),
            };
            let ch = single_char(ch)
                .ok_or_else(|| parse_err(format!("`{ch}` is not a single character")))?;
            let entry = similar.entry(ch).or_default();
            entry.extend(rest.chars());
            entry.remove(&ch);
        }
        similar.retain(|_, v| !v.is_empty());
        Ok(VisualConfusionSet { similar })
    }

    /// Characters visually similar to `c`; empty when `c` is absent.
    pub fn similar_to(&self, c: char) -> &BTreeSet<char> {
        self.similar.get(&c).unwrap_or_else(|| empty_chars())
    }

    /// True iff `b` is in the confusion set of `a`.
    pub fn visually_similar(&self, a: char, b: char) -> bool {
        self.similar_to(a).contains(&b)
    }

    /// All characters mentioned as keys or members, sorted by code point.
    pub fn chars(&self) -> Vec<char> {
        let mut set: BTreeSet<char> = self.similar.keys().copied().collect();
        for members in self.similar.values() {
            set.extend(members);
        }
        set.into_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.similar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.similar.is_empty()
    }
}

/// Word dictionary with ordered definition sentences.
#[derive(Debug, Clone, Default)]
pub struct Dictionary {
    entries: BTreeMap<String, Vec<String>>,
    max_word_chars: usize,
}

impl Dictionary {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, Vec<String>)>,
    ) -> Result<Self, KbError> {
        let mut dict = Dictionary::default();
        for (word, definitions) in entries {
            dict.insert(word, definitions)?;
        }
        Ok(dict)
    }

    fn insert(&mut self, word: String, definitions: Vec<String>) -> Result<(), KbError> {
        if word.is_empty() {
            return Err(KbError::WordNotFound("<empty>".into()));
        }
        if definitions.is_empty() || definitions.iter().any(|d| d.is_empty()) {
            return Err(KbError::Parse {
                path: "<dictionary>".into(),
                line: 0,
                msg: format!("word `{word}` has an empty definition list or definition"),
            });
        }
        self.max_word_chars = self.max_word_chars.max(word.chars().count());
        self.entries.insert(word, definitions);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        #[derive(serde::Deserialize)]
        struct Entry {
            word: String,
            definitions: Vec<String>,
        }
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut dict = Dictionary::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let parse_err = |msg: String| KbError::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg,
            };
            let entry: Entry =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if entry.word.is_empty() {
                return Err(parse_err("empty word".into()));
            }
            if entry.definitions.is_empty() {
                return Err(parse_err(format!("word `{}` has no definitions", entry.word)));
            }
            if entry.definitions.iter().any(|d| d.is_empty()) {
                return Err(parse_err(format!("word `{}` has an empty definition", entry.word)));
            }
            if dict.entries.contains_key(&entry.word) {
                return Err(parse_err(format!("duplicate word `{}`", entry.word)));
            }
            dict.max_word_chars = dict.max_word_chars.max(entry.word.chars().count());
            dict.entries.insert(entry.word, entry.definitions);
        }
        Ok(dict)
    }

    pub fn definitions(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(|v| v.as_slice())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn contains_chars(&self, word: &[char]) -> bool {
        self.contains(&word.iter().collect::<String>())
    }

    /// Words in sorted order (deterministic for sampling).
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn max_word_chars(&self) -> usize {
        self.max_word_chars
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A word occurrence inside a sentence: positions `start..=start+width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    start: usize,
    width: usize,
    word: Vec<char>,
}

impl WordSpan {
    /// Builds a span over `sentence`, checking that it stays in bounds; the
    /// span's word is the covered slice.
    pub fn new(sentence: &[char], start: usize, width: usize) -> Result<Self, KbError> {
        let end = start + width;
        if end >= sentence.len() {
            return Err(KbError::PositionOutOfRange {
                pos: end,
                len: sentence.len(),
            });
        }
        Ok(WordSpan {
            start,
            width,
            word: sentence[start..=end].to_vec(),
        })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Width in the inclusive sense: the span covers `start..=start+width`,
    /// so a single character has width 0.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn end(&self) -> usize {
        self.start + self.width
    }

    pub fn word(&self) -> &[char] {
        &self.word
    }

    pub fn word_string(&self) -> String {
        self.word.iter().collect()
    }

    pub fn covers(&self, pos: usize) -> bool {
        pos >= self.start && pos <= self.end()
    }
}

/// Segmentation strategy over a sentence. The default is forward maximum
/// matching against the dictionary; statistical segmenters can be plugged in
/// behind the same interface.
pub trait Tokenizer {
    fn tokenize(&self, sentence: &[char]) -> Vec<WordSpan>;
}

/// Forward maximum matching: at each position, take the longest dictionary
/// word starting there; fall back to a single-character span.
pub struct MaxMatchTokenizer<'a> {
    dict: &'a Dictionary,
}

impl<'a> MaxMatchTokenizer<'a> {
    pub fn new(dict: &'a Dictionary) -> Self {
        MaxMatchTokenizer { dict }
    }
}

impl Tokenizer for MaxMatchTokenizer<'_> {
    fn tokenize(&self, sentence: &[char]) -> Vec<WordSpan> {
        let mut spans = Vec::new();
        let n = sentence.len();
        let max_len = self.dict.max_word_chars().max(1);
        let mut i = 0;
        while i < n {
            let mut span_len = 1;
            let upper = max_len.min(n - i);
            for len in (2..=upper).rev() {
                let candidate: String = sentence[i..i + len].iter().collect();
                if self.dict.contains(&candidate) {
                    span_len = len;
                    break;
                }
            }
            spans.push(
                WordSpan::new(sentence, i, span_len - 1)
                    .expect("in-bounds by construction"),
            );
            i += span_len;
        }
        spans
    }
}

/// Returns the unique span whose range contains `pos`.
pub fn span_containing(spans: &[WordSpan], pos: usize) -> Result<&WordSpan, KbError> {
    spans
        .iter()
        .find(|s| s.covers(pos))
        .ok_or(KbError::PositionOutOfRange {
            pos,
            len: spans.last().map(|s| s.end() + 1).unwrap_or(0),
        })
}

/// Rule for choosing one definition among a polysemous word's list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefinitionStrategy {
    Random,
    First,
    Similar,
}

impl std::str::FromStr for DefinitionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(DefinitionStrategy::Random),
            "first" => Ok(DefinitionStrategy::First),
            "similar" => Ok(DefinitionStrategy::Similar),
            other => Err(format!(
                "unknown definition strategy `{other}` (expected random, first, or similar)"
            )),
        }
    }
}

impl std::fmt::Display for DefinitionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DefinitionStrategy::Random => "random",
            DefinitionStrategy::First => "first",
            DefinitionStrategy::Similar => "similar",
        };
        f.write_str(s)
    }
}

/// Selects one definition of `word`.
///
/// - `Random`: uniform choice using `rng`
/// - `First`: the first (most common) definition
/// - `Similar`: the definition whose mean-pooled encoding is closest in
///   cosine to the encoded `context`, ties broken by lowest index
pub fn select_definition(
    word: &[char],
    context: &[char],
    dict: &Dictionary,
    strategy: DefinitionStrategy,
    sim_encoder: Option<&dyn Encoder>,
    rng: &mut impl Rng,
) -> Result<Vec<char>, KbError> {
    let word_str: String = word.iter().collect();
    let defs = dict
        .definitions(&word_str)
        .ok_or_else(|| KbError::WordNotFound(word_str.clone()))?;
    let idx = match strategy {
        DefinitionStrategy::First => 0,
        DefinitionStrategy::Random => rng.random_range(0..defs.len()),
        DefinitionStrategy::Similar => {
            let encoder = sim_encoder.ok_or(KbError::MissingSimilarityEncoder)?;
            let context_rep = encoder.encode(context)?;
            let context_pooled = context_rep.mean_pool_valid()?;
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (i, def) in defs.iter().enumerate() {
                let def_chars: Vec<char> = def.chars().collect();
                let rep = encoder.encode(&def_chars)?;
                let pooled = rep.mean_pool_valid()?;
                let score = cosine(&context_pooled, &pooled).unwrap_or(f64::NEG_INFINITY);
                if score > best_score {
                    best_score = score;
                    best = i;
                }
            }
            best
        }
    };
    Ok(defs[idx].chars().collect())
}

/// The three read-only knowledge sources bundled together.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    pub pinyin: PinyinTable,
    pub confusion: VisualConfusionSet,
    pub dictionary: Dictionary,
}

impl KnowledgeBase {
    pub fn new(pinyin: PinyinTable, confusion: VisualConfusionSet, dictionary: Dictionary) -> Self {
        KnowledgeBase {
            pinyin,
            confusion,
            dictionary,
        }
    }

    /// Loads `pinyin.tsv`, `confusion.tsv`, and `dictionary.jsonl` from a
    /// directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, KbError> {
        let dir = dir.as_ref();
        Ok(KnowledgeBase {
            pinyin: PinyinTable::load(dir.join("pinyin.tsv"))?,
            confusion: VisualConfusionSet::load(dir.join("confusion.tsv"))?,
            dictionary: Dictionary::load(dir.join("dictionary.jsonl"))?,
        })
    }

    /// Segments with the default maximum-matching tokenizer.
    pub fn tokenize(&self, sentence: &[char]) -> Vec<WordSpan> {
        MaxMatchTokenizer::new(&self.dictionary).tokenize(sentence)
    }

    /// Every character mentioned anywhere in the knowledge base (pinyin keys,
    /// confusion members, dictionary words and definitions), sorted.
    pub fn char_inventory(&self) -> BTreeSet<char> {
        let mut set: BTreeSet<char> = self.pinyin.chars().into_iter().collect();
        set.extend(self.confusion.chars());
        for word in self.dictionary.words() {
            set.extend(word.chars());
            if let Some(defs) = self.dictionary.definitions(word) {
                for def in defs {
                    set.extend(def.chars());
                }
            }
        }
        set
    }
}

fn single_char(s: &str) -> Option<char> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::LookupEncoder;
    use crate::math::Mat;
    use crate::rng::stream;

    fn table() -> PinyinTable {
        PinyinTable::from_entries([
            ('起', vec![Syllable::parse("qi3").unwrap()]),
            ('奇', vec![Syllable::parse("qi2").unwrap()]),
            ('色', vec![Syllable::parse("se4").unwrap()]),
            ('行', vec![Syllable::parse("xing2").unwrap(), Syllable::parse("hang2").unwrap()]),
            ('航', vec![Syllable::parse("hang2").unwrap()]),
        ])
        .unwrap()
    }

    #[test]
    fn pinyin_of_known_characters() {
        let t = table();
        let qi = t.pinyin_of('起');
        assert_eq!(qi.len(), 1);
        let s = qi.iter().next().unwrap();
        assert_eq!((s.sound(), s.tone()), ("qi", 3));
        let se = t.pinyin_of('色');
        let s = se.iter().next().unwrap();
        assert_eq!((s.sound(), s.tone()), ("se", 4));
        assert!(t.pinyin_of('無').is_empty());
    }

    #[test]
    fn phonetic_similarity_matches_definition() {
        let t = table();
        assert!(t.phonetically_similar('起', '奇'));
        assert!(!t.phonetically_similar('起', '色'));
        assert!(!t.phonetically_similar('起', '起'));
        // polyphone: 行(hang2) shares a sound with 航
        assert!(t.phonetically_similar('行', '航'));
        assert!(!t.phonetically_disjoint('行', '航'));
        assert!(t.phonetically_disjoint('起', '色'));
        // missing characters have no readings and are never similar
        assert!(!t.phonetically_similar('無', '起'));
        assert!(t.phonetically_disjoint('無', '起'));
    }

    #[test]
    fn symmetry_and_irreflexivity() {
        let t = table();
        let chars = ['起', '奇', '色', '行', '航', '無'];
        for &a in &chars {
            assert!(!t.phonetically_similar(a, a));
            for &b in &chars {
                assert_eq!(t.phonetically_similar(a, b), t.phonetically_similar(b, a));
            }
        }
    }

    #[test]
    fn confusion_set_membership() {
        let cs = VisualConfusionSet::from_entries([('晒', vec!['栖', '洒', '晒'])]);
        assert!(cs.visually_similar('晒', '栖'));
        assert!(!cs.visually_similar('晒', '晒'), "self reference must be dropped");
        assert!(!cs.visually_similar('水', '晒'));
        assert!(cs.similar_to('水').is_empty());
    }

    fn dict() -> Dictionary {
        Dictionary::from_entries([
            ("举办".to_string(), vec!["举行活动".to_string()]),
            ("一个".to_string(), vec!["数量为一".to_string()]),
            (
                "舞会".to_string(),
                vec!["跳舞的集会".to_string(), "以跳舞为主的聚会".to_string()],
            ),
            ("会".to_string(), vec!["聚合".to_string(), "懂得".to_string()]),
        ])
        .unwrap()
    }

    #[test]
    fn max_match_segments_dictionary_words() {
        let d = dict();
        let sentence: Vec<char> = "举办一个舞会".chars().collect();
        let spans = d_tokenize(&d, &sentence);
        let words: Vec<String> = spans.iter().map(|s| s.word_string()).collect();
        assert_eq!(words, ["举办", "一个", "舞会"]);
        assert_eq!(spans[2].start(), 4);
        assert_eq!(spans[2].width(), 1);
    }

    fn d_tokenize(d: &Dictionary, sentence: &[char]) -> Vec<WordSpan> {
        MaxMatchTokenizer::new(d).tokenize(sentence)
    }

    #[test]
    fn tokenize_edge_cases() {
        let d = dict();
        assert!(d_tokenize(&d, &[]).is_empty());
        let no_words: Vec<char> = "天天天".chars().collect();
        let spans = d_tokenize(&d, &no_words);
        assert_eq!(spans.len(), 3);
        assert!(spans.iter().all(|s| s.width() == 0));
    }

    #[test]
    fn tokenize_partitions_sentence() {
        let d = dict();
        for text in ["举办一个舞会", "天举办舞会了", "会舞会一个个"] {
            let sentence: Vec<char> = text.chars().collect();
            let spans = d_tokenize(&d, &sentence);
            let mut next = 0;
            for span in &spans {
                assert_eq!(span.start(), next);
                next = span.end() + 1;
            }
            assert_eq!(next, sentence.len());
            let joined: String = spans.iter().map(|s| s.word_string()).collect();
            assert_eq!(joined, text);
        }
    }

    #[test]
    fn span_containing_positions() {
        let d = dict();
        let sentence: Vec<char> = "举办一个舞会".chars().collect();
        let spans = d_tokenize(&d, &sentence);
        let span = span_containing(&spans, 4).unwrap();
        assert_eq!(span.word_string(), "舞会");
        assert_eq!((span.start(), span.width()), (4, 1));
        let span5 = span_containing(&spans, 5).unwrap();
        assert_eq!(span5.word_string(), "舞会");
        assert!(matches!(
            span_containing(&spans, 6),
            Err(KbError::PositionOutOfRange { pos: 6, .. })
        ));
        // every position maps to exactly one span
        for pos in 0..sentence.len() {
            assert_eq!(spans.iter().filter(|s| s.covers(pos)).count(), 1);
        }
    }

    #[test]
    fn select_first_and_single_definition() {
        let d = dict();
        let mut rng = stream(1, "test");
        let word: Vec<char> = "舞会".chars().collect();
        let def = select_definition(&word, &[], &d, DefinitionStrategy::First, None, &mut rng)
            .unwrap();
        assert_eq!(def.iter().collect::<String>(), "跳舞的集会");

        let single: Vec<char> = "举办".chars().collect();
        for strategy in [DefinitionStrategy::First, DefinitionStrategy::Random] {
            let def = select_definition(&single, &[], &d, strategy, None, &mut rng).unwrap();
            assert_eq!(def.iter().collect::<String>(), "举行活动");
        }
    }

    #[test]
    fn select_random_is_seed_reproducible() {
        let d = dict();
        let word: Vec<char> = "舞会".chars().collect();
        let a = select_definition(
            &word,
            &[],
            &d,
            DefinitionStrategy::Random,
            None,
            &mut stream(9, "def"),
        )
        .unwrap();
        let b = select_definition(
            &word,
            &[],
            &d,
            DefinitionStrategy::Random,
            None,
            &mut stream(9, "def"),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn select_similar_matches_brute_force_cosine() {
        // two definitions built from distinct characters; a hand-built lookup
        // encoder gives each character a fixed row, so the expected winner is
        // computable by exhaustive cosine
        let d = Dictionary::from_entries([(
            "会".to_string(),
            vec!["甲乙".to_string(), "丙丁".to_string()],
        )])
        .unwrap();
        let vocab: Vec<char> = "会甲乙丙丁戊".chars().collect();
        let rows = vec![
            vec![1.0, 0.0],  // 会
            vec![1.0, 0.2],  // 甲
            vec![0.9, -0.1], // 乙
            vec![0.0, 1.0],  // 丙
            vec![0.1, 0.9],  // 丁
            vec![1.0, 0.1],  // 戊
        ];
        let encoder = LookupEncoder::new(vocab.clone(), Mat::from_rows(&rows), 16).unwrap();

        // brute-force oracle over both candidates
        let pooled = |text: &str| -> Vec<f64> {
            let ids: Vec<usize> = text
                .chars()
                .map(|c| vocab.iter().position(|&v| v == c).unwrap())
                .collect();
            let mut acc = [0.0; 2];
            for id in &ids {
                for (a, b) in acc.iter_mut().zip(&rows[*id]) {
                    *a += b;
                }
            }
            acc.iter().map(|v| v / ids.len() as f64).collect()
        };
        let context = "戊";
        let ctx = pooled(context);
        let c0 = cosine(&ctx, &pooled("甲乙")).unwrap();
        let c1 = cosine(&ctx, &pooled("丙丁")).unwrap();
        assert!(c0 > c1, "fixture must discriminate: {c0} vs {c1}");

        let word: Vec<char> = "会".chars().collect();
        let context_chars: Vec<char> = context.chars().collect();
        let mut rng = stream(3, "sim");
        let def = select_definition(
            &word,
            &context_chars,
            &d,
            DefinitionStrategy::Similar,
            Some(&encoder),
            &mut rng,
        )
        .unwrap();
        assert_eq!(def.iter().collect::<String>(), "甲乙");
    }

    #[test]
    fn select_similar_requires_encoder_and_word_presence() {
        let d = dict();
        let mut rng = stream(0, "x");
        let word: Vec<char> = "舞会".chars().collect();
        let err = select_definition(&word, &[], &d, DefinitionStrategy::Similar, None, &mut rng)
            .unwrap_err();
        assert!(matches!(err, KbError::MissingSimilarityEncoder));

        let missing: Vec<char> = "不存".chars().collect();
        let err = select_definition(&missing, &[], &d, DefinitionStrategy::First, None, &mut rng)
            .unwrap_err();
        assert!(matches!(err, KbError::WordNotFound(w) if w == "不存"));
    }

    #[test]
    fn knowledge_structures_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<PinyinTable>();
        assert_send_sync::<VisualConfusionSet>();
        assert_send_sync::<Dictionary>();
        assert_send_sync::<KnowledgeBase>();
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        const POOL: &str = "举办一个舞会天水好上街正在晒栖误武们门我你";

        fn pool_char() -> impl Strategy<Value = char> {
            prop::sample::select(POOL.chars().collect::<Vec<_>>())
        }

        fn random_dict() -> impl Strategy<Value = Dictionary> {
            prop::collection::btree_set(
                prop::collection::vec(pool_char(), 1..4),
                0..12,
            )
            .prop_map(|words| {
                Dictionary::from_entries(words.into_iter().map(|chars| {
                    (
                        chars.iter().collect::<String>(),
                        vec!["定义".to_string()],
                    )
                }))
                .unwrap()
            })
        }

        proptest! {
            #[test]
            fn tokenize_always_partitions(
                dict in random_dict(),
                sentence in prop::collection::vec(pool_char(), 0..24)
            ) {
                let spans = MaxMatchTokenizer::new(&dict).tokenize(&sentence);
                let mut next = 0usize;
                for span in &spans {
                    prop_assert_eq!(span.start(), next);
                    prop_assert_eq!(span.word(), &sentence[span.start()..=span.end()]);
                    if span.width() > 0 {
                        prop_assert!(dict.contains_chars(span.word()));
                    }
                    next = span.end() + 1;
                }
                prop_assert_eq!(next, sentence.len());
                // every position is covered by exactly one span
                for pos in 0..sentence.len() {
                    prop_assert_eq!(spans.iter().filter(|s| s.covers(pos)).count(), 1);
                    let found = span_containing(&spans, pos).unwrap();
                    prop_assert!(found.covers(pos));
                }
            }
        }
    }

    #[test]
    fn similar_is_stable_under_reordering_up_to_tie_breaking() {
        let d1 = Dictionary::from_entries([(
            "会".to_string(),
            vec!["甲乙".to_string(), "丙丁".to_string()],
        )])
        .unwrap();
        let d2 = Dictionary::from_entries([(
            "会".to_string(),
            vec!["丙丁".to_string(), "甲乙".to_string()],
        )])
        .unwrap();
        let vocab: Vec<char> = "会甲乙丙丁戊".chars().collect();
        let rows = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.2],
            vec![0.9, -0.1],
            vec![0.0, 1.0],
            vec![0.1, 0.9],
            vec![1.0, 0.1],
        ];
        let encoder = LookupEncoder::new(vocab, Mat::from_rows(&rows), 16).unwrap();
        let word: Vec<char> = "会".chars().collect();
        let ctx: Vec<char> = "戊".chars().collect();
        let mut rng = stream(0, "x");
        let a = select_definition(&word, &ctx, &d1, DefinitionStrategy::Similar, Some(&encoder), &mut rng).unwrap();
        let b = select_definition(&word, &ctx, &d2, DefinitionStrategy::Similar, Some(&encoder), &mut rng).unwrap();
        assert_eq!(a, b);
    }
}
