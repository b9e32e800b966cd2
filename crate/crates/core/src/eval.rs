//! Greedy correction inference and strict sentence-level metrics.
//!
//! A sample counts toward detection only when the set of changed positions
//! exactly equals the gold error positions, and toward correction only when
//! the output equals the gold sentence. Precision divides by predicted
//! positives (output != source), recall by gold positives (source != target);
//! zero denominators yield 0.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CscSample;
use crate::encoder::{CscModel, ModelError};

/// Auxiliary characters whose mixed usage is neutralized in SIGHAN13-style
/// scoring.
pub const SIGHAN13_AUXILIARY: [char; 3] = ['的', '地', '得'];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction {id} has no matching gold sample")]
    MissingGold { id: String },
    #[error("duplicate id {id}")]
    DuplicateId { id: String },
    #[error("{preds} predictions but {gold} gold samples")]
    CountMismatch { preds: usize, gold: usize },
    #[error("sample {id}: prediction length {pred_len} differs from gold length {gold_len}")]
    LengthMismatch {
        id: String,
        pred_len: usize,
        gold_len: usize,
    },
    #[error("sample {id}: prediction source differs from gold source")]
    SourceMismatch { id: String },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A model output for one sentence; output length always equals source
/// length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    id: String,
    source: Vec<char>,
    output: Vec<char>,
}

impl Prediction {
    pub fn new(
        id: impl Into<String>,
        source: Vec<char>,
        output: Vec<char>,
    ) -> Result<Self, EvalError> {
        let id = id.into();
        if source.len() != output.len() {
            return Err(EvalError::LengthMismatch {
                id,
                pred_len: output.len(),
                gold_len: source.len(),
            });
        }
        Ok(Prediction { id, source, output })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &[char] {
        &self.source
    }

    pub fn output(&self) -> &[char] {
        &self.output
    }

    /// Positions where the prediction changed the source.
    pub fn changed_positions(&self) -> Vec<usize> {
        self.source
            .iter()
            .zip(&self.output)
            .enumerate()
            .filter_map(|(i, (s, o))| (s != o).then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub gold_positive: usize,
    pub predicted_positive: usize,
    pub det_tp: usize,
    pub cor_tp: usize,
}

/// Sentence-level detection and correction scores with the raw counts they
/// were computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection: ScoreSet,
    pub correction: ScoreSet,
    pub counts: EvalCounts,
}

fn prf(tp: usize, predicted: usize, gold: usize) -> ScoreSet {
    let precision = if predicted == 0 {
        0.0
    } else {
        tp as f64 / predicted as f64
    };
    let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ScoreSet {
        precision,
        recall,
        f1,
    }
}

/// Runs the model's argmax decoder over one sentence.
pub fn predict(model: &CscModel, id: &str, sentence: &[char]) -> Result<Prediction, ModelError> {
    let output = model.predict_chars(sentence)?;
    Ok(Prediction {
        id: id.to_string(),
        source: sentence.to_vec(),
        output,
    })
}

/// Runs the model over a whole corpus, predicting from each sample's source.
pub fn predict_corpus(model: &CscModel, samples: &[CscSample]) -> Result<Vec<Prediction>, ModelError> {
    samples
        .iter()
        .map(|s| predict(model, s.id(), s.source()))
        .collect()
}

/// Neutralizes auxiliary-character positions: wherever the source, the
/// prediction, or the gold carries one of 的/地/得, both the prediction and
/// the gold are reset to the source character, excluding the position from
/// scoring.
pub fn sighan13_filter(pred: &Prediction, gold: &CscSample) -> (Prediction, CscSample) {
    let mut output = pred.output.to_vec();
    let mut target = gold.target().to_vec();
    for (i, &src) in pred.source.iter().enumerate() {
        let involved = SIGHAN13_AUXILIARY.contains(&src)
            || SIGHAN13_AUXILIARY.contains(&output[i])
            || SIGHAN13_AUXILIARY.contains(&target[i]);
        if involved {
            output[i] = src;
            target[i] = src;
        }
    }
    let filtered_pred = Prediction {
        id: pred.id.clone(),
        source: pred.source.clone(),
        output,
    };
    let filtered_gold = CscSample::from_chars(gold.id().to_string(), pred.source.to_vec(), target)
        .expect("filter preserves lengths");
    (filtered_pred, filtered_gold)
}

/// Scores predictions against gold samples, aligned by id.
pub fn evaluate(
    preds: &[Prediction],
    gold: &[CscSample],
    sighan13_mode: bool,
) -> Result<EvalReport, EvalError> {
    if preds.len() != gold.len() {
        return Err(EvalError::CountMismatch {
            preds: preds.len(),
            gold: gold.len(),
        });
    }
    let mut by_id: HashMap<&str, &CscSample> = HashMap::with_capacity(gold.len());
    for sample in gold {
        if by_id.insert(sample.id(), sample).is_some() {
            return Err(EvalError::DuplicateId {
                id: sample.id().to_string(),
            });
        }
    }

    let mut counts = EvalCounts {
        gold_positive: 0,
        predicted_positive: 0,
        det_tp: 0,
        cor_tp: 0,
    };
    let mut seen: HashMap<&str, ()> = HashMap::with_capacity(preds.len());
    for pred in preds {
        if seen.insert(pred.id(), ()).is_some() {
            return Err(EvalError::DuplicateId {
                id: pred.id().to_string(),
            });
        }
        let sample = by_id.get(pred.id()).ok_or_else(|| EvalError::MissingGold {
            id: pred.id().to_string(),
        })?;
        if pred.source.len() != sample.len() {
            return Err(EvalError::LengthMismatch {
                id: pred.id().to_string(),
                pred_len: pred.source.len(),
                gold_len: sample.len(),
            });
        }
        if pred.source() != sample.source() {
            return Err(EvalError::SourceMismatch {
                id: pred.id().to_string(),
            });
        }
        let (pred, sample) = if sighan13_mode {
            sighan13_filter(pred, sample)
        } else {
            (pred.clone(), (*sample).clone())
        };

        let gold_positive = sample.is_erroneous();
        let changed = pred.changed_positions();
        let predicted_positive = !changed.is_empty();
        counts.gold_positive += usize::from(gold_positive);
        counts.predicted_positive += usize::from(predicted_positive);
        if predicted_positive && changed == sample.error_positions() {
            counts.det_tp += 1;
        }
        if predicted_positive && pred.output() == sample.target() {
            counts.cor_tp += 1;
        }
    }

    Ok(EvalReport {
        detection: prf(counts.det_tp, counts.predicted_positive, counts.gold_positive),
        correction: prf(counts.cor_tp, counts.predicted_positive, counts.gold_positive),
        counts,
    })
}

/// Loads predictions from `id<TAB>source<TAB>output` lines.
pub fn load_predictions_tsv(path: impl AsRef<Path>) -> Result<Vec<Prediction>, EvalError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut preds = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(EvalError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        preds.push(Prediction::new(
            fields[0],
            fields[1].chars().collect(),
            fields[2].chars().collect(),
        )?);
    }
    Ok(preds)
}

pub fn save_predictions_tsv(
    preds: &[Prediction],
    path: impl AsRef<Path>,
) -> Result<(), EvalError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for pred in preds {
        writeln!(
            writer,
            "{}\t{}\t{}",
            pred.id,
            pred.source.iter().collect::<String>(),
            pred.output.iter().collect::<String>()
        )?;
    }
    writer.flush()?;
    Ok(())
}

/// Renders the report as an aligned text table.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>9} {:>9} {:>9}\n",
        "level", "precision", "recall", "f1"
    ));
    for (label, scores) in [
        ("detection", report.detection),
        ("correction", report.correction),
    ] {
        out.push_str(&format!(
            "{:<12} {:>9.4} {:>9.4} {:>9.4}\n",
            label, scores.precision, scores.recall, scores.f1
        ));
    }
    out.push_str(&format!(
        "counts: gold_positive={} predicted_positive={} det_tp={} cor_tp={}\n",
        report.counts.gold_positive,
        report.counts.predicted_positive,
        report.counts.det_tp,
        report.counts.cor_tp
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, source: &str, target: &str) -> CscSample {
        CscSample::new(id, source, target).unwrap()
    }

    fn prediction(id: &str, source: &str, output: &str) -> Prediction {
        Prediction::new(id, source.chars().collect(), output.chars().collect()).unwrap()
    }

    /// The hand-scored three-sentence suite: one exact fix, one false alarm,
    /// one partial fix. Detection and correction both come out P=1/3, R=1/2,
    /// F1=0.4.
    #[test]
    fn three_sentence_suite_matches_manual_enumeration() {
        let gold = vec![
            sample("s1", "我们门好", "我们们好"),
            sample("s2", "天天向上", "天天向上"),
            sample("s3", "一人山水", "一丁山氺"),
        ];
        let preds = vec![
            prediction("s1", "我们门好", "我们们好"), // fixes pos 2 exactly
            prediction("s2", "天天向上", "天明向上"), // false alarm
            prediction("s3", "一人山水", "一丁山水"), // fixes pos 1, misses pos 3
        ];
        let report = evaluate(&preds, &gold, false).unwrap();
        assert_eq!(report.counts.gold_positive, 2);
        assert_eq!(report.counts.predicted_positive, 3);
        assert_eq!(report.counts.det_tp, 1);
        assert_eq!(report.counts.cor_tp, 1);
        for scores in [report.detection, report.correction] {
            assert!((scores.precision - 1.0 / 3.0).abs() < 1e-12);
            assert!((scores.recall - 0.5).abs() < 1e-12);
            assert!((scores.f1 - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gold = vec![sample("a", "我门", "我们"), sample("b", "好好", "好好")];
        let preds = vec![prediction("a", "我门", "我们"), prediction("b", "好好", "好好")];
        let report = evaluate(&preds, &gold, false).unwrap();
        assert_eq!(report.detection.f1, 1.0);
        assert_eq!(report.correction.f1, 1.0);
        assert_eq!(report.detection.precision, 1.0);
        assert_eq!(report.correction.recall, 1.0);
    }

    #[test]
    fn no_changes_on_erroneous_suite_scores_zero() {
        let gold = vec![sample("a", "我门", "我们"), sample("b", "大门", "大们")];
        let preds = vec![prediction("a", "我门", "我门"), prediction("b", "大门", "大门")];
        let report = evaluate(&preds, &gold, false).unwrap();
        assert_eq!(report.counts.predicted_positive, 0);
        assert_eq!(report.detection.precision, 0.0);
        assert_eq!(report.detection.recall, 0.0);
        assert_eq!(report.detection.f1, 0.0);
        assert_eq!(report.correction.f1, 0.0);
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let gold = vec![
            sample("a", "我门", "我们"),
            sample("b", "天向", "天同"),
            sample("c", "好好", "好好"),
        ];
        let preds = vec![
            prediction("a", "我门", "我们"),
            prediction("b", "天向", "天向"),
            prediction("c", "好好", "好水"),
        ];
        let forward = evaluate(&preds, &gold, false).unwrap();
        let mut shuffled_preds = preds.clone();
        shuffled_preds.reverse();
        let mut shuffled_gold = gold.clone();
        shuffled_gold.rotate_left(1);
        let shuffled = evaluate(&shuffled_preds, &shuffled_gold, false).unwrap();
        assert_eq!(forward, shuffled);
    }

    #[test]
    fn alignment_errors() {
        let gold = vec![sample("a", "我门", "我们")];
        let wrong_id = vec![prediction("x", "我门", "我们")];
        assert!(matches!(
            evaluate(&wrong_id, &gold, false),
            Err(EvalError::MissingGold { .. })
        ));

        let wrong_len = vec![prediction("a", "我门好", "我们好")];
        assert!(matches!(
            evaluate(&wrong_len, &gold, false),
            Err(EvalError::LengthMismatch { .. })
        ));

        let wrong_source = vec![prediction("a", "他门", "他们")];
        assert!(matches!(
            evaluate(&wrong_source, &gold, false),
            Err(EvalError::SourceMismatch { .. })
        ));

        assert!(matches!(
            evaluate(&[], &gold, false),
            Err(EvalError::CountMismatch { preds: 0, gold: 1 })
        ));

        let dup_gold = vec![sample("a", "我门", "我们"), sample("a", "我门", "我们")];
        let two = vec![prediction("a", "我门", "我们"), prediction("a", "我门", "我们")];
        assert!(matches!(
            evaluate(&two, &dup_gold, false),
            Err(EvalError::DuplicateId { .. })
        ));
    }

    #[test]
    fn sighan13_filter_neutralizes_auxiliary_positions() {
        // prediction changes 的 -> 地, gold agrees: the position is
        // neutralized and the pair becomes error-free
        let gold = sample("f1", "高兴的说", "高兴地说");
        let pred = prediction("f1", "高兴的说", "高兴地说");
        let (fp, fg) = sighan13_filter(&pred, &gold);
        assert_eq!(fp.output(), fp.source());
        assert!(!fg.is_erroneous());

        // no auxiliary characters: unchanged
        let gold = sample("f2", "我门好", "我们好");
        let pred = prediction("f2", "我门好", "我们好");
        let (fp, fg) = sighan13_filter(&pred, &gold);
        assert_eq!(fp, pred);
        assert_eq!(fg, gold);
    }

    #[test]
    fn sighan13_only_auxiliary_error_becomes_gold_negative() {
        // the sentence's only gold error is 的 -> 得
        let gold = sample("f3", "跑的很快", "跑得很快");
        let pred = prediction("f3", "跑的很快", "跑的很快");
        let report = evaluate(&[pred], &[gold], true).unwrap();
        assert_eq!(report.counts.gold_positive, 0);
        assert_eq!(report.counts.predicted_positive, 0);
    }

    #[test]
    fn correction_never_exceeds_detection() {
        // correction TP requires output == target, which forces the changed
        // set to equal the gold set; spot-check on a mixed suite
        let gold = vec![
            sample("a", "我门好", "我们好"),
            sample("b", "天大", "天太"),
            sample("c", "山水", "山水"),
        ];
        let preds = vec![
            prediction("a", "我门好", "我们好"),
            prediction("b", "天大", "明大"),
            prediction("c", "山水", "山氺"),
        ];
        let report = evaluate(&preds, &gold, false).unwrap();
        assert!(report.counts.cor_tp <= report.counts.det_tp);
        assert!(report.correction.precision <= report.detection.precision);
        assert!(report.correction.recall <= report.detection.recall);
        assert!(report.correction.f1 <= report.detection.f1);
    }

    /// A model fine-tuned to copy its input acts as an identity decoder:
    /// predict returns the source unchanged, twice in a row.
    #[test]
    fn identity_model_predicts_its_input() {
        use crate::encoder::EncoderConfig;
        use crate::objectives::LossWeights;
        use crate::trainer::{train, FrozenEncoders, PairSource, TrainConfig};

        let texts = ["我门好", "天天向上", "山水", "向上好", "门门门", "水天"];
        let samples: Vec<CscSample> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| CscSample::new(format!("id{i}"), t, t).unwrap())
            .collect();
        let vocab = crate::trainer::build_vocab(&samples, None);
        let enc_config = EncoderConfig {
            vocab,
            hidden_size: 16,
            layers: 1,
            heads: 2,
            max_length: 8,
        };
        let config = TrainConfig {
            epochs: 20,
            batch_size: 3,
            learning_rate: 5e-3,
            warmup_steps: Some(0),
            max_length: 8,
            weights: LossWeights {
                csc: 1.0,
                phonetics: 0.0,
                vision: 0.0,
                definition: 0.0,
            },
            seed: 2,
            ..TrainConfig::default()
        };
        let model = crate::encoder::CscModel::new(enc_config.clone(), 2).unwrap();
        let frozen = FrozenEncoders::random_defaults(&enc_config, 2).unwrap();
        let kb = crate::kb::KnowledgeBase::default();
        let out = train(
            &config,
            &samples,
            model,
            &frozen,
            &PairSource::Online { kb: &kb },
            None,
        )
        .unwrap();
        for sample in &samples {
            let pred = predict(&out.model, sample.id(), sample.source()).unwrap();
            assert_eq!(pred.output(), sample.source(), "{}", sample.id());
            let again = predict(&out.model, sample.id(), sample.source()).unwrap();
            assert_eq!(pred, again, "prediction must be deterministic");
        }
    }

    #[test]
    fn prediction_tsv_round_trip() {
        let preds = vec![
            prediction("a", "我门", "我们"),
            prediction("b", "天向", "天向"),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.tsv");
        save_predictions_tsv(&preds, &path).unwrap();
        let reloaded = load_predictions_tsv(&path).unwrap();
        assert_eq!(reloaded, preds);
    }

    #[test]
    fn f1_properties() {
        let s = prf(1, 2, 2);
        assert!((s.f1 - 0.5).abs() < 1e-12); // P == R == 0.5 -> F1 == 0.5
        let t = prf(0, 0, 0);
        assert_eq!((t.precision, t.recall, t.f1), (0.0, 0.0, 0.0));
    }
}
