//! Synthetic corpora and knowledge bases for tests and benchmarks.
//!
//! Everything here is deterministic under the given seed. The fixtures are
//! deliberately small: class structure (shared pinyin, confusion clusters,
//! polysemous dictionary entries) is planted so that downstream checks can
//! measure whether training recovered it.

use rand::Rng;

use crate::data::CscSample;
use crate::eval::Prediction;
use crate::kb::{Dictionary, KnowledgeBase, PinyinTable, Syllable, VisualConfusionSet};
use crate::rng::stream;

/// Two character classes plus neutral fillers, with a knowledge base whose
/// relations separate the classes.
pub struct TwoClassFixture {
    pub kb: KnowledgeBase,
    pub class_a: Vec<char>,
    pub class_b: Vec<char>,
    pub fillers: Vec<char>,
}

impl TwoClassFixture {
    pub fn all_chars(&self) -> Vec<char> {
        let mut out = self.class_a.clone();
        out.extend(&self.class_b);
        out.extend(&self.fillers);
        out
    }
}

const FILLERS: &str = "天上大人水火山好月风云丁口手边东南西北中";
const FILLER_SOUNDS: [&str; 21] = [
    "tian", "shang", "da", "ren", "shui", "huo", "shan", "hao", "yue", "feng", "yun", "ding",
    "kou", "shou", "bian", "dong", "nan", "xi", "bei", "zhong", "zuo",
];

fn filler_pinyin_entries() -> Vec<(char, Vec<Syllable>)> {
    FILLERS
        .chars()
        .enumerate()
        .map(|(i, c)| {
            let tone = (i % 4 + 1) as u8;
            (c, vec![Syllable::new(FILLER_SOUNDS[i], tone).unwrap()])
        })
        .collect()
}

/// Classes that share a toneless syllable: every `ji` character is
/// phonetically similar to every other, disjoint from the `zhi` class and
/// the fillers.
pub fn pinyin_two_class() -> TwoClassFixture {
    let class_a: Vec<char> = "机鸡级极及即急集几己".chars().collect();
    let class_b: Vec<char> = "之支知直值职止只指纸".chars().collect();
    let mut entries = filler_pinyin_entries();
    for (i, &c) in class_a.iter().enumerate() {
        entries.push((c, vec![Syllable::new("ji", (i % 4 + 1) as u8).unwrap()]));
    }
    for (i, &c) in class_b.iter().enumerate() {
        entries.push((c, vec![Syllable::new("zhi", (i % 4 + 1) as u8).unwrap()]));
    }
    TwoClassFixture {
        kb: KnowledgeBase::new(
            PinyinTable::from_entries(entries).unwrap(),
            VisualConfusionSet::default(),
            Dictionary::default(),
        ),
        class_a,
        class_b,
        fillers: FILLERS.chars().collect(),
    }
}

/// Classes defined by confusion-set membership: each cluster character lists
/// the rest of its cluster as visually similar.
pub fn confusion_two_cluster() -> TwoClassFixture {
    let class_a: Vec<char> = "末未木本术朱米来采禾".chars().collect();
    let class_b: Vec<char> = "日目旦白百自田甲由申".chars().collect();
    let cluster_entries = |cluster: &[char]| {
        cluster
            .iter()
            .map(|&c| {
                (
                    c,
                    cluster.iter().copied().filter(|&o| o != c).collect::<Vec<_>>(),
                )
            })
            .collect::<Vec<_>>()
    };
    let mut entries = cluster_entries(&class_a);
    entries.extend(cluster_entries(&class_b));
    TwoClassFixture {
        kb: KnowledgeBase::new(
            PinyinTable::default(),
            VisualConfusionSet::from_entries(entries),
            Dictionary::default(),
        ),
        class_a,
        class_b,
        fillers: FILLERS.chars().collect(),
    }
}

/// Sentences of length 1-3 whose single error substitutes within one of the
/// fixture's classes (the gold character and the error character share a
/// class). Error positions vary, including position 0.
pub fn two_class_corpus(fixture: &TwoClassFixture, n: usize, seed: u64) -> Vec<CscSample> {
    let mut rng = stream(seed, "two-class-corpus");
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let class = if rng.random_range(0..2) == 0 {
            &fixture.class_a
        } else {
            &fixture.class_b
        };
        let len = rng.random_range(1..=3);
        let pos = rng.random_range(0..len);
        let err_idx = rng.random_range(0..class.len());
        let mut gold_idx = rng.random_range(0..class.len() - 1);
        if gold_idx >= err_idx {
            gold_idx += 1;
        }
        let mut source = Vec::with_capacity(len);
        let mut target = Vec::with_capacity(len);
        for p in 0..len {
            if p == pos {
                source.push(class[err_idx]);
                target.push(class[gold_idx]);
            } else {
                let filler = fixture.fillers[rng.random_range(0..fixture.fillers.len())];
                source.push(filler);
                target.push(filler);
            }
        }
        samples.push(CscSample::from_chars(format!("tc{i}"), source, target).unwrap());
    }
    samples
}

/// A memorization corpus: unique sentences over a small filler alphabet,
/// most carrying one or two substitution errors.
pub fn overfit_corpus(n: usize, seed: u64) -> Vec<CscSample> {
    let pool: Vec<char> = FILLERS.chars().collect();
    let mut rng = stream(seed, "overfit-corpus");
    let mut seen = std::collections::HashSet::new();
    let mut samples = Vec::with_capacity(n);
    while samples.len() < n {
        let len = rng.random_range(4..=8);
        let target: Vec<char> = (0..len)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect();
        let mut source = target.clone();
        let errors = match samples.len() % 5 {
            0 => 0,
            1..=3 => 1,
            _ => 2,
        };
        let mut positions: Vec<usize> = (0..len).collect();
        for e in 0..errors {
            let j = rng.random_range(e..positions.len());
            positions.swap(e, j);
            let pos = positions[e];
            let mut replacement = pool[rng.random_range(0..pool.len())];
            while replacement == target[pos] {
                replacement = pool[rng.random_range(0..pool.len())];
            }
            source[pos] = replacement;
        }
        if !seen.insert(source.iter().collect::<String>()) {
            continue;
        }
        let id = format!("ov{}", samples.len());
        samples.push(CscSample::from_chars(id, source, target).unwrap());
    }
    samples
}

/// A randomized knowledge base over a fixed character pool, for soundness
/// sweeps: random readings from a small syllable inventory, random confusion
/// clusters, and a random dictionary of one- and two-character words.
pub fn random_kb(seed: u64) -> (KnowledgeBase, Vec<char>) {
    let pool: Vec<char> = "天上大人水火山好月风云丁口手边东南西北中起奇色晒栖误舞会举办个门们我你他字词语文团圆圈园元原远院员".chars().collect();
    let sounds = [
        "qi", "se", "tian", "shang", "hao", "shui", "huo", "men", "wu", "hui", "yuan", "zi",
    ];
    let mut rng = stream(seed, "random-kb");
    let mut pinyin_entries = Vec::new();
    for &c in &pool {
        let count = 1 + usize::from(rng.random_range(0..5) == 0);
        let syls: Vec<Syllable> = (0..count)
            .map(|_| {
                Syllable::new(
                    sounds[rng.random_range(0..sounds.len())],
                    rng.random_range(0..5) as u8,
                )
                .unwrap()
            })
            .collect();
        pinyin_entries.push((c, syls));
    }
    let mut confusion_entries = Vec::new();
    let mut shuffled = pool.clone();
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut rng);
    for cluster in shuffled.chunks(5) {
        for &c in cluster {
            confusion_entries.push((
                c,
                cluster.iter().copied().filter(|&o| o != c).collect::<Vec<_>>(),
            ));
        }
    }
    let mut dict_entries = Vec::new();
    let mut used_words = std::collections::HashSet::new();
    while dict_entries.len() < 20 {
        let word: String = if rng.random_range(0..3) == 0 {
            pool[rng.random_range(0..pool.len())].to_string()
        } else {
            let a = pool[rng.random_range(0..pool.len())];
            let b = pool[rng.random_range(0..pool.len())];
            format!("{a}{b}")
        };
        if !used_words.insert(word.clone()) {
            continue;
        }
        let def_count = rng.random_range(1..=3);
        let defs: Vec<String> = (0..def_count)
            .map(|d| {
                let len = rng.random_range(2..=6);
                let mut def: String = (0..len)
                    .map(|_| pool[rng.random_range(0..pool.len())])
                    .collect();
                // make definitions of one word distinct
                def.push_str(&format!("{}", d));
                def
            })
            .collect();
        dict_entries.push((word, defs));
    }
    let kb = KnowledgeBase::new(
        PinyinTable::from_entries(pinyin_entries).unwrap(),
        VisualConfusionSet::from_entries(confusion_entries),
        Dictionary::from_entries(dict_entries).unwrap(),
    );
    (kb, pool)
}

/// Random substitution-error samples over a character pool.
pub fn random_corpus(pool: &[char], n: usize, seed: u64) -> Vec<CscSample> {
    let mut rng = stream(seed, "random-corpus");
    (0..n)
        .map(|i| {
            let len = rng.random_range(2..=10);
            let target: Vec<char> = (0..len)
                .map(|_| pool[rng.random_range(0..pool.len())])
                .collect();
            let mut source = target.clone();
            let errors = rng.random_range(0..=3.min(len));
            let mut positions: Vec<usize> = (0..len).collect();
            for e in 0..errors {
                let j = rng.random_range(e..positions.len());
                positions.swap(e, j);
                let pos = positions[e];
                let mut replacement = pool[rng.random_range(0..pool.len())];
                while replacement == target[pos] {
                    replacement = pool[rng.random_range(0..pool.len())];
                }
                source[pos] = replacement;
            }
            CscSample::from_chars(format!("r{i}"), source, target).unwrap()
        })
        .collect()
}

/// Random gold samples with predictions that exactly fix, ignore, partially
/// fix, or spuriously edit each sentence, for scorer cross-checks.
pub fn random_eval_suite(seed: u64, n: usize) -> (Vec<CscSample>, Vec<Prediction>) {
    let pool: Vec<char> = FILLERS.chars().collect();
    let gold = random_corpus(&pool, n, seed);
    let mut rng = stream(seed, "random-eval-predictions");
    let preds = gold
        .iter()
        .map(|sample| {
            let mut output = match rng.random_range(0..4) {
                0 => sample.target().to_vec(), // exact fix
                1 => sample.source().to_vec(), // no change
                2 => {
                    // fix a prefix of the error positions
                    let mut out = sample.source().to_vec();
                    let keep = rng.random_range(0..=sample.error_positions().len());
                    for &pos in sample.error_positions().iter().take(keep) {
                        out[pos] = sample.target()[pos];
                    }
                    out
                }
                _ => sample.source().to_vec(), // spurious edit added below
            };
            if rng.random_range(0..3) == 0 && !output.is_empty() {
                let pos = rng.random_range(0..output.len());
                let mut c = pool[rng.random_range(0..pool.len())];
                while c == output[pos] {
                    c = pool[rng.random_range(0..pool.len())];
                }
                output[pos] = c;
            }
            Prediction::new(sample.id(), sample.source().to_vec(), output).unwrap()
        })
        .collect();
    (gold, preds)
}

/// Polysemous-dictionary dataset for comparing definition-selection
/// strategies.
///
/// Words come in families sharing a first character, so when the second
/// character is the corrupted one, only the two context characters identify
/// the gold word. Each word's definition list holds a context-matching
/// definition (its own topic characters plus the word), a near-generic
/// definition that is almost identical across words, and a misleading one
/// built from the sibling word's topics. Context similarity always finds
/// the matching definition; taking the first finds it for two thirds of the
/// families; random choice sometimes lands on the misleading sense.
pub struct StrategyDataset {
    pub kb: KnowledgeBase,
    pub train: Vec<CscSample>,
    pub test: Vec<CscSample>,
}

const STRATEGY_FAMILIES: usize = 8;

pub fn strategy_dataset(seed: u64) -> StrategyDataset {
    // 8 families x (1 shared first char + 2 distinct second chars)
    let family_chars: Vec<char> = "把北本比边便标表".chars().collect();
    let second_chars: Vec<char> = "别兵布步才曾产长常厂场车城成处船".chars().collect();
    // 2 topic characters per word, all distinct
    let topic_chars: Vec<char> =
        "打代带单当到道得地点电调定东动都对多而发法分风干高个给工公共关管"
            .chars()
            .collect();
    let generic_chars: Vec<char> = "规国果过还".chars().collect();
    let error_chars: Vec<char> = "海好和很后呼".chars().collect();

    struct Word {
        chars: [char; 2],
        topics: [char; 2],
    }
    let mut words: Vec<Word> = Vec::new();
    for (f, &family_char) in family_chars.iter().enumerate().take(STRATEGY_FAMILIES) {
        for k in 0..2 {
            let i = 2 * f + k;
            words.push(Word {
                chars: [family_char, second_chars[i]],
                topics: [topic_chars[2 * i], topic_chars[2 * i + 1]],
            });
        }
    }

    let mut dict_entries = Vec::new();
    for (i, word) in words.iter().enumerate() {
        let sibling = &words[i ^ 1];
        let d_match: String = [word.topics[0], word.topics[1], word.chars[0], word.chars[1]]
            .iter()
            .collect();
        let mut d_gen: String = generic_chars.iter().collect();
        d_gen.push(word.chars[1]);
        let d_off: String = [
            sibling.topics[0],
            sibling.topics[1],
            word.chars[0],
            word.chars[1],
        ]
        .iter()
        .collect();
        let family = i / 2;
        let defs = if family % 3 != 2 {
            vec![d_match, d_gen, d_off] // context-matching definition first
        } else {
            vec![d_gen, d_match, d_off] // near-generic definition first
        };
        dict_entries.push((word.chars.iter().collect::<String>(), defs));
    }
    let kb = KnowledgeBase::new(
        PinyinTable::default(),
        VisualConfusionSet::default(),
        Dictionary::from_entries(dict_entries).unwrap(),
    );

    let mut rng = stream(seed, "strategy-corpus");
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut id = 0usize;
    for (i, word) in words.iter().enumerate() {
        let family = i / 2;
        let contexts = [
            [word.topics[0], word.topics[1]],
            [word.topics[1], word.topics[0]],
        ];
        // rotate which error characters are held out per family so every
        // error character is seen in training somewhere
        for (e_idx, &err_char) in error_chars.iter().enumerate() {
            let held_out = (e_idx + family) % 3 == 2;
            for (c_idx, ctx) in contexts.iter().enumerate() {
                let target = vec![ctx[0], ctx[1], word.chars[0], word.chars[1]];
                let mut source = target.clone();
                source[3] = err_char; // corrupt the disambiguating character
                let sample = CscSample::from_chars(format!("sd{id}"), source, target).unwrap();
                id += 1;
                if held_out {
                    if c_idx == 0 {
                        test.push(sample);
                    }
                } else {
                    train.push(sample);
                }
            }
        }
    }
    // deterministic shuffle of the training order
    use rand::seq::SliceRandom;
    train.shuffle(&mut rng);
    StrategyDataset { kb, train, test }
}
