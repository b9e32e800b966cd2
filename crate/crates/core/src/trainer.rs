//! The fine-tuning loop: batch assembly, the combined objective, the frozen
//! encoder contract, and the warmup/decay learning-rate schedule.
//!
//! One optimizer step consumes one batch of spell-checking samples plus up
//! to `batch_size` contrastive mini-batches per knowledge kind (one per
//! sampled error position). Contrastive losses are averaged within a kind
//! before weighting. Only the spell-checking model receives gradients; the
//! three knowledge encoders are frozen by construction.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CscSample;
use crate::encoder::{
    CscModel, Encoder, EncoderConfig, FrozenEncoder, ModelError, ModelGrads, ParamSet,
    RepSequence, TransformerEncoder,
};
use crate::kb::{DefinitionStrategy, KnowledgeBase};
use crate::objectives::{
    combined_loss, cosine_span_info_nce_with_grad, csc_loss_with_grad, dot_info_nce_with_grad,
    DefinitionScoreMode, LossWeights, ObjectiveError,
};
use crate::pairs::{
    build_definition_batch, build_phonetic_batch, build_visual_batch, ContrastiveBatch,
    KnowledgeKind, PairError,
};
use crate::rng;

const MAX_GRAD_NORM: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("encoder vocabularies are inconsistent: {0}")]
    VocabMismatch(String),
    #[error("non-finite loss in the {objective} objective at step {step}")]
    NonFiniteLoss { objective: &'static str, step: u64 },
    #[error("sample {id}: target character `{ch}` is outside the model vocabulary")]
    TargetOutsideVocab { id: String, ch: char },
    #[error("sample {id}: length {len} exceeds the model maximum {max}")]
    SampleTooLong { id: String, len: usize, max: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which positions the spell-checking cross-entropy averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    AllPositions,
    ErrorPositionsOnly,
}

impl std::str::FromStr for LossScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_positions" => Ok(LossScope::AllPositions),
            "error_positions_only" => Ok(LossScope::ErrorPositionsOnly),
            other => Err(format!(
                "unknown loss scope `{other}` (expected all_positions or error_positions_only)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives per contrastive mini-batch.
    pub negatives: usize,
    /// Peak learning rate.
    pub learning_rate: f64,
    /// Linear warmup length; `None` resolves to 5% of the total steps.
    pub warmup_steps: Option<usize>,
    pub max_length: usize,
    pub weights: LossWeights,
    pub definition_strategy: DefinitionStrategy,
    pub definition_score_mode: DefinitionScoreMode,
    pub seed: u64,
    /// Error positions used per sample for pair building; 0 means all.
    pub per_sample_error_cap: usize,
    /// Contrastive objectives run on steps where `step % interval == 0`.
    pub contrastive_interval: usize,
    pub csc_loss_scope: LossScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            negatives: 8,
            learning_rate: 5e-5,
            warmup_steps: None,
            max_length: 128,
            weights: LossWeights::default(),
            definition_strategy: DefinitionStrategy::First,
            definition_score_mode: DefinitionScoreMode::default(),
            seed: 42,
            per_sample_error_cap: 0,
            contrastive_interval: 1,
            csc_loss_scope: LossScope::AllPositions,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.negatives == 0 {
            return Err(TrainError::Config("negatives must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.contrastive_interval == 0 {
            return Err(TrainError::Config("contrastive_interval must be at least 1".into()));
        }
        if self.max_length == 0 {
            return Err(TrainError::Config("max_length must be at least 1".into()));
        }
        self.weights
            .validate()
            .map_err(|_| TrainError::Config("loss weights must be non-negative".into()))?;
        Ok(())
    }

    fn resolved_warmup(&self, total_steps: usize) -> usize {
        self.warmup_steps.unwrap_or(total_steps / 20)
    }
}

/// Linear warmup from 0 to the peak over the warmup span, then linear decay
/// to 0 at `total_steps`. Continuous and piecewise-linear; the maximum over
/// steps equals the peak exactly.
pub fn lr_schedule(step: usize, total_steps: usize, config: &TrainConfig) -> Result<f64, TrainError> {
    let warmup = config.resolved_warmup(total_steps);
    if total_steps <= warmup {
        return Err(TrainError::Config(format!(
            "total steps {total_steps} must exceed warmup steps {warmup}"
        )));
    }
    if step > total_steps {
        return Err(TrainError::Config(format!(
            "step {step} is past total steps {total_steps}"
        )));
    }
    let peak = config.learning_rate;
    let lr = if step <= warmup && warmup > 0 {
        peak * step as f64 / warmup as f64
    } else {
        peak * (total_steps - step) as f64 / (total_steps - warmup) as f64
    };
    Ok(lr)
}

/// Decoupled-weight-decay adaptive moment estimation.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    moments: HashMap<String, (crate::math::Mat, crate::math::Mat)>,
}

impl AdamW {
    pub fn new() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            t: 0,
            moments: HashMap::new(),
        }
    }

    /// Applies one update to every `(params, grads)` set. Parameter values
    /// are snapped back to the f32 grid after the update.
    pub fn step(&mut self, lr: f64, sets: &mut [(&mut ParamSet, &ParamSet)]) {
        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        for (params, grads) in sets.iter_mut() {
            for name in params.names().to_vec() {
                let grad = grads.get(&name);
                let (m, v) = self
                    .moments
                    .entry(name.clone())
                    .or_insert_with(|| {
                        (
                            crate::math::Mat::zeros(grad.rows(), grad.cols()),
                            crate::math::Mat::zeros(grad.rows(), grad.cols()),
                        )
                    });
                let p = params.get_mut(&name);
                for i in 0..p.data().len() {
                    let g = grad.data()[i];
                    let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                    let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                    m.data_mut()[i] = mi;
                    v.data_mut()[i] = vi;
                    let m_hat = mi / bias1;
                    let v_hat = vi / bias2;
                    let old = p.data()[i];
                    let updated =
                        old - lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * old);
                    p.data_mut()[i] = crate::encoder::canon_f32(updated);
                }
            }
        }
    }
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new()
    }
}

/// The three frozen knowledge encoders.
pub struct FrozenEncoders {
    pub phonetics: FrozenEncoder,
    pub vision: FrozenEncoder,
    pub definition: FrozenEncoder,
}

impl FrozenEncoders {
    /// Default configuration: the phonetic and definition encoders are
    /// frozen copies of one randomly initialized encoder; the vision encoder
    /// gets an independent init (it stands in for a separately pre-trained
    /// glyph model, replaceable via checkpoints).
    pub fn random_defaults(config: &EncoderConfig, seed: u64) -> Result<Self, TrainError> {
        let shared =
            TransformerEncoder::new(config.clone(), rng::derive_seed(seed, "knowledge-encoder"))?;
        let vision =
            TransformerEncoder::new(config.clone(), rng::derive_seed(seed, "vision-encoder"))?;
        Ok(FrozenEncoders {
            phonetics: crate::encoder::freeze(shared.clone()),
            definition: crate::encoder::freeze(shared),
            vision: crate::encoder::freeze(vision),
        })
    }

    fn by_kind(&self, kind: KnowledgeKind) -> &FrozenEncoder {
        match kind {
            KnowledgeKind::Phonetics => &self.phonetics,
            KnowledgeKind::Vision => &self.vision,
            KnowledgeKind::Definition => &self.definition,
        }
    }
}

/// Contrastive mini-batches feeding one optimizer step, grouped by kind.
#[derive(Debug, Clone, Default)]
pub struct ContrastiveSet {
    pub phonetics: Vec<ContrastiveBatch>,
    pub vision: Vec<ContrastiveBatch>,
    pub definition: Vec<ContrastiveBatch>,
}

impl ContrastiveSet {
    pub fn is_empty(&self) -> bool {
        self.phonetics.is_empty() && self.vision.is_empty() && self.definition.is_empty()
    }
}

/// Per-objective losses for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub csc: f64,
    pub phonetics: f64,
    pub vision: f64,
    pub definition: f64,
    pub total: f64,
}

/// One training-log record; serialized as JSON lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub l_csc: f64,
    pub l_p: f64,
    pub l_v: f64,
    pub l_d: f64,
    pub total: f64,
}

/// Where contrastive mini-batches come from: built online against the
/// knowledge base, or replayed from precomputed pools (cycled in order).
pub enum PairSource<'a> {
    Online { kb: &'a KnowledgeBase },
    Offline(ContrastiveSet),
}

/// Applies one combined-objective update to the model. Knowledge encoders
/// receive no gradients. When every weight is zero there is nothing to
/// optimize and parameters are left untouched.
pub fn training_step(
    model: &mut CscModel,
    batch: &[&CscSample],
    contrastive: &ContrastiveSet,
    frozen: &FrozenEncoders,
    optimizer: &mut AdamW,
    lr: f64,
    config: &TrainConfig,
) -> Result<StepLosses, TrainError> {
    let weights = &config.weights;
    let step = model.steps();
    let mut grads = ModelGrads::zeros_like(model);

    let l_csc = if weights.csc > 0.0 && !batch.is_empty() {
        let scale = weights.csc / batch.len() as f64;
        let mut total = 0.0;
        for sample in batch {
            let target_ids: Vec<usize> = sample
                .target()
                .iter()
                .map(|&c| {
                    model.vocab_index(c).ok_or_else(|| TrainError::TargetOutsideVocab {
                        id: sample.id().to_string(),
                        ch: c,
                    })
                })
                .collect::<Result<_, _>>()?;
            let mask: Vec<usize> = match config.csc_loss_scope {
                LossScope::AllPositions => (0..sample.len()).collect(),
                LossScope::ErrorPositionsOnly => sample.error_positions().to_vec(),
            };
            let (_, logits, trace) = model.forward_with_trace(sample.source())?;
            let (loss, mut d_logits) = csc_loss_with_grad(&logits, &target_ids, &mask)?;
            total += loss;
            d_logits.scale(scale);
            model.backward(&trace, None, Some(&d_logits), &mut grads);
        }
        total / batch.len() as f64
    } else {
        0.0
    };
    if !l_csc.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            objective: "csc",
            step,
        });
    }

    let run_kind = |kind: KnowledgeKind,
                        batches: &[ContrastiveBatch],
                        weight: f64,
                        grads: &mut ModelGrads|
     -> Result<f64, TrainError> {
        if weight == 0.0 || batches.is_empty() {
            return Ok(0.0);
        }
        let scale = weight / batches.len() as f64;
        let mut total = 0.0;
        for cb in batches {
            let (rep_o, trace) = model.encoder().encode_with_trace(&cb.original)?;
            let enc = frozen.by_kind(kind);
            let rep_pos = enc.encode(&cb.positive)?;
            let rep_negs: Vec<RepSequence> = cb
                .negatives
                .iter()
                .map(|n| enc.encode(n))
                .collect::<Result<_, _>>()?;
            let out = match kind {
                KnowledgeKind::Phonetics | KnowledgeKind::Vision => {
                    dot_info_nce_with_grad(&rep_o, &rep_pos, &rep_negs, cb.error_index)?
                }
                KnowledgeKind::Definition => cosine_span_info_nce_with_grad(
                    &rep_o,
                    &rep_pos,
                    &rep_negs,
                    cb.error_index,
                    cb.span_width,
                    config.definition_score_mode,
                )?,
            };
            total += out.loss;
            let mut d_rep = out.grad_original;
            d_rep.scale(scale);
            model.encoder().backward(&trace, &d_rep, &mut grads.encoder);
        }
        Ok(total / batches.len() as f64)
    };

    let l_p = run_kind(
        KnowledgeKind::Phonetics,
        &contrastive.phonetics,
        weights.phonetics,
        &mut grads,
    )?;
    let l_v = run_kind(
        KnowledgeKind::Vision,
        &contrastive.vision,
        weights.vision,
        &mut grads,
    )?;
    let l_d = run_kind(
        KnowledgeKind::Definition,
        &contrastive.definition,
        weights.definition,
        &mut grads,
    )?;
    for (objective, value) in [("phonetics", l_p), ("vision", l_v), ("definition", l_d)] {
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                objective: match objective {
                    "phonetics" => "phonetics",
                    "vision" => "vision",
                    _ => "definition",
                },
                step,
            });
        }
    }

    let total = combined_loss(l_csc, l_p, l_v, l_d, weights);
    if !total.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            objective: "combined",
            step,
        });
    }

    let losses = StepLosses {
        csc: l_csc,
        phonetics: l_p,
        vision: l_v,
        definition: l_d,
        total,
    };

    let active = weights.csc > 0.0
        || weights.phonetics > 0.0
        || weights.vision > 0.0
        || weights.definition > 0.0;
    if active {
        let norm = grads.sq_sum().sqrt();
        if norm > MAX_GRAD_NORM {
            grads.scale_all(MAX_GRAD_NORM / norm);
        }
        let (encoder_params, head_params) = model.trainable_mut();
        optimizer.step(
            lr,
            &mut [
                (encoder_params, &grads.encoder),
                (head_params, &grads.head),
            ],
        );
    }
    model.record_step();
    Ok(losses)
}

/// Everything `train` produces: the fine-tuned model, the per-step log, and
/// the paths of any checkpoints written.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: CscModel,
    pub log: Vec<StepLog>,
    pub checkpoints: Vec<PathBuf>,
}

/// Builds a vocabulary from the corpus characters plus the knowledge base's
/// character inventory, sorted by code point.
pub fn build_vocab(samples: &[CscSample], kb: Option<&KnowledgeBase>) -> Vec<char> {
    let mut set: std::collections::BTreeSet<char> = std::collections::BTreeSet::new();
    for sample in samples {
        set.extend(sample.source().iter().copied());
        set.extend(sample.target().iter().copied());
    }
    if let Some(kb) = kb {
        set.extend(kb.char_inventory());
    }
    set.into_iter().collect()
}

/// Runs the full fine-tuning loop. With an output directory, a checkpoint is
/// written after every epoch (atomically); the final model is also returned.
pub fn train(
    config: &TrainConfig,
    samples: &[CscSample],
    mut model: CscModel,
    frozen: &FrozenEncoders,
    pair_source: &PairSource,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let max_len = model.config().max_length;
    for sample in samples {
        if sample.len() > max_len {
            return Err(TrainError::SampleTooLong {
                id: sample.id().to_string(),
                len: sample.len(),
                max: max_len,
            });
        }
    }
    for (label, encoder) in [
        ("phonetics", &frozen.phonetics),
        ("vision", &frozen.vision),
        ("definition", &frozen.definition),
    ] {
        if encoder.vocab() != model.vocab() {
            return Err(TrainError::VocabMismatch(format!(
                "{label} encoder vocabulary differs from the model's"
            )));
        }
        if encoder.hidden_size() != model.config().hidden_size {
            return Err(TrainError::VocabMismatch(format!(
                "{label} encoder hidden size {} differs from the model's {}",
                encoder.hidden_size(),
                model.config().hidden_size
            )));
        }
    }

    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    // fail fast on a degenerate schedule
    lr_schedule(0, total_steps, config)?;

    let mut optimizer = AdamW::new();
    let mut log = Vec::with_capacity(total_steps);
    let mut checkpoints = Vec::new();
    let mut step_index: usize = 0;
    let mut cursors = [0usize; 3];

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, &format!("shuffle:{epoch}")));
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&CscSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let contrastive = if step_index.is_multiple_of(config.contrastive_interval) {
                gather_contrastive(
                    &batch,
                    config,
                    frozen,
                    pair_source,
                    &mut cursors,
                    model.vocab(),
                    epoch,
                )?
            } else {
                ContrastiveSet::default()
            };
            let lr = lr_schedule(step_index, total_steps, config)?;
            let losses = training_step(
                &mut model,
                &batch,
                &contrastive,
                frozen,
                &mut optimizer,
                lr,
                config,
            )?;
            log.push(StepLog {
                step: step_index as u64,
                lr,
                l_csc: losses.csc,
                l_p: losses.phonetics,
                l_v: losses.vision,
                l_d: losses.definition,
                total: losses.total,
            });
            step_index += 1;
        }
        if let Some(dir) = out_dir {
            let path = dir.join(format!("epoch_{epoch}"));
            model.save(&path, config.seed)?;
            checkpoints.push(path);
        }
    }

    Ok(TrainOutcome {
        model,
        log,
        checkpoints,
    })
}

fn gather_contrastive(
    batch: &[&CscSample],
    config: &TrainConfig,
    frozen: &FrozenEncoders,
    pair_source: &PairSource,
    cursors: &mut [usize; 3],
    vocab: &[char],
    epoch: usize,
) -> Result<ContrastiveSet, TrainError> {
    match pair_source {
        PairSource::Offline(pools) => {
            let want = batch.len();
            Ok(ContrastiveSet {
                phonetics: take_cycled(&pools.phonetics, &mut cursors[0], want),
                vision: take_cycled(&pools.vision, &mut cursors[1], want),
                definition: take_cycled(&pools.definition, &mut cursors[2], want),
            })
        }
        PairSource::Online { kb } => {
            let mut set = ContrastiveSet::default();
            let weights = &config.weights;
            for sample in batch {
                let positions = sample.error_positions();
                let capped = if config.per_sample_error_cap > 0 {
                    &positions[..positions.len().min(config.per_sample_error_cap)]
                } else {
                    positions
                };
                for &pos in capped {
                    let stream_for = |kind: &str| {
                        rng::stream(
                            config.seed,
                            &format!("pair:{kind}:{epoch}:{}:{pos}", sample.id()),
                        )
                    };
                    if weights.phonetics > 0.0 && set.phonetics.len() < config.batch_size {
                        match build_phonetic_batch(
                            sample,
                            pos,
                            config.negatives,
                            kb,
                            vocab,
                            &mut stream_for("P"),
                        ) {
                            Ok(b) => set.phonetics.push(b),
                            Err(e) if e.is_skip() => {}
                            Err(e) => return Err(e.into()),
                        }
                    }
                    if weights.vision > 0.0 && set.vision.len() < config.batch_size {
                        match build_visual_batch(
                            sample,
                            pos,
                            config.negatives,
                            kb,
                            vocab,
                            &mut stream_for("V"),
                        ) {
                            Ok(b) => set.vision.push(b),
                            Err(e) if e.is_skip() => {}
                            Err(e) => return Err(e.into()),
                        }
                    }
                    if weights.definition > 0.0 && set.definition.len() < config.batch_size {
                        let sim_encoder: Option<&dyn Encoder> =
                            match config.definition_strategy {
                                DefinitionStrategy::Similar => Some(&frozen.definition),
                                _ => None,
                            };
                        match build_definition_batch(
                            sample,
                            pos,
                            config.negatives,
                            kb,
                            config.definition_strategy,
                            sim_encoder,
                            &mut stream_for("D"),
                        ) {
                            Ok(b) => set.definition.push(b),
                            Err(e) if e.is_skip() => {}
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
            }
            Ok(set)
        }
    }
}

fn take_cycled(
    pool: &[ContrastiveBatch],
    cursor: &mut usize,
    count: usize,
) -> Vec<ContrastiveBatch> {
    if pool.is_empty() {
        return Vec::new();
    }
    (0..count.min(pool.len()))
        .map(|_| {
            let batch = pool[*cursor].clone();
            *cursor = (*cursor + 1) % pool.len();
            batch
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{Dictionary, PinyinTable, Syllable, VisualConfusionSet};

    fn small_kb() -> KnowledgeBase {
        let pinyin = PinyinTable::from_entries([
            ('起', vec![Syllable::parse("qi3").unwrap()]),
            ('奇', vec![Syllable::parse("qi2").unwrap()]),
            ('栖', vec![Syllable::parse("qi1").unwrap()]),
            ('色', vec![Syllable::parse("se4").unwrap()]),
            ('天', vec![Syllable::parse("tian1").unwrap()]),
            ('好', vec![Syllable::parse("hao3").unwrap()]),
            ('水', vec![Syllable::parse("shui3").unwrap()]),
            ('山', vec![Syllable::parse("shan1").unwrap()]),
        ])
        .unwrap();
        let confusion = VisualConfusionSet::from_entries([
            ('起', vec!['超']),
            ('水', vec!['氺']),
        ]);
        let dictionary = Dictionary::from_entries([
            ("天".into(), vec!["头顶上方".into()]),
            ("好".into(), vec!["令人满意".into()]),
            ("水".into(), vec!["无色液体".into()]),
            ("山".into(), vec!["地面隆起".into()]),
        ])
        .unwrap();
        KnowledgeBase::new(pinyin, confusion, dictionary)
    }

    fn corpus() -> Vec<CscSample> {
        vec![
            CscSample::new("t1", "天起好", "天气好").unwrap(),
            CscSample::new("t2", "山水好", "山水好").unwrap(),
            CscSample::new("t3", "好起水", "好奇水").unwrap(),
            CscSample::new("t4", "水山天", "水山天").unwrap(),
        ]
    }

    fn setup(seed: u64) -> (TrainConfig, Vec<CscSample>, CscModel, FrozenEncoders, KnowledgeBase) {
        let kb = small_kb();
        let samples = corpus();
        let vocab = build_vocab(&samples, Some(&kb));
        let enc_config = EncoderConfig {
            vocab,
            hidden_size: 8,
            layers: 1,
            heads: 2,
            max_length: 16,
        };
        let config = TrainConfig {
            epochs: 2,
            batch_size: 2,
            negatives: 2,
            learning_rate: 1e-3,
            warmup_steps: Some(0),
            max_length: 16,
            seed,
            ..TrainConfig::default()
        };
        let model = CscModel::new(enc_config.clone(), seed).unwrap();
        let frozen = FrozenEncoders::random_defaults(&enc_config, seed).unwrap();
        (config, samples, model, frozen, kb)
    }

    #[test]
    fn default_config_matches_documented_values() {
        let config = TrainConfig::default();
        assert_eq!(config.epochs, 10);
        assert_eq!(config.batch_size, 32);
        assert_eq!(config.negatives, 8);
        assert_eq!(config.learning_rate, 5e-5);
        assert_eq!(config.max_length, 128);
        assert_eq!(config.weights, LossWeights::default());
        assert_eq!(config.weights.csc, 1.0);
        assert_eq!(config.weights.phonetics, 1.0);
        assert_eq!(config.weights.vision, 1.0);
        assert_eq!(config.weights.definition, 1.0);
        assert_eq!(config.contrastive_interval, 1);
        assert_eq!(config.csc_loss_scope, LossScope::AllPositions);
    }

    #[test]
    fn error_positions_only_scope_changes_the_loss() {
        let (mut config, samples, model, frozen, kb) = setup(12);
        config.weights = LossWeights {
            csc: 1.0,
            phonetics: 0.0,
            vision: 0.0,
            definition: 0.0,
        };
        config.epochs = 1;
        let all = train(
            &config,
            &samples,
            model.clone(),
            &frozen,
            &PairSource::Online { kb: &kb },
            None,
        )
        .unwrap();
        config.csc_loss_scope = LossScope::ErrorPositionsOnly;
        let errors_only = train(
            &config,
            &samples,
            model,
            &frozen,
            &PairSource::Online { kb: &kb },
            None,
        )
        .unwrap();
        // error-free sentences contribute nothing under the narrow scope, so
        // the recorded losses differ
        assert_ne!(all.log[0].l_csc, errors_only.log[0].l_csc);
        assert!(errors_only.log.iter().all(|r| r.l_csc.is_finite()));
    }

    #[test]
    fn contrastive_interval_skips_intermediate_steps() {
        let (mut config, samples, model, frozen, kb) = setup(13);
        config.contrastive_interval = 2;
        let out = train(
            &config,
            &samples,
            model,
            &frozen,
            &PairSource::Online { kb: &kb },
            None,
        )
        .unwrap();
        for record in &out.log {
            if record.step % 2 == 1 {
                assert_eq!(record.l_p, 0.0);
                assert_eq!(record.l_v, 0.0);
                assert_eq!(record.l_d, 0.0);
            }
        }
        assert!(out.log.iter().any(|r| r.step % 2 == 0 && r.l_p > 0.0));
    }

    #[test]
    fn lr_schedule_shape() {
        let config = TrainConfig {
            learning_rate: 5e-5,
            warmup_steps: Some(10),
            ..TrainConfig::default()
        };
        assert_eq!(lr_schedule(0, 100, &config).unwrap(), 0.0);
        assert_eq!(lr_schedule(10, 100, &config).unwrap(), 5e-5);
        assert_eq!(lr_schedule(100, 100, &config).unwrap(), 0.0);
        // piecewise linear, max at the warmup boundary
        let mut max = 0.0f64;
        for step in 0..=100 {
            let lr = lr_schedule(step, 100, &config).unwrap();
            assert!(lr >= 0.0);
            max = max.max(lr);
        }
        assert_eq!(max, 5e-5);
        // halfway up the ramp and halfway down the decay
        assert!((lr_schedule(5, 100, &config).unwrap() - 2.5e-5).abs() < 1e-20);
        assert!((lr_schedule(55, 100, &config).unwrap() - 2.5e-5).abs() < 1e-20);
    }

    #[test]
    fn lr_schedule_rejects_degenerate_totals() {
        let config = TrainConfig {
            warmup_steps: Some(10),
            ..TrainConfig::default()
        };
        assert!(lr_schedule(0, 10, &config).is_err());
        assert!(lr_schedule(0, 5, &config).is_err());
    }

    #[test]
    fn train_is_deterministic_and_freezes_knowledge_encoders() {
        let (config, samples, model, frozen, kb) = setup(7);
        let snapshot_p = frozen.phonetics.params().clone();
        let snapshot_v = frozen.vision.params().clone();
        let snapshot_d = frozen.definition.params().clone();

        let run = |model: CscModel, frozen: &FrozenEncoders| {
            train(
                &config,
                &samples,
                model,
                frozen,
                &PairSource::Online { kb: &kb },
                None,
            )
            .unwrap()
        };
        let out1 = run(model.clone(), &frozen);
        let out2 = run(model, &frozen);
        assert!(out1
            .model
            .encoder()
            .params()
            .bitwise_eq(out2.model.encoder().params()));
        assert!(out1.model.head().bitwise_eq(out2.model.head()));
        assert_eq!(out1.log, out2.log);

        assert!(frozen.phonetics.params().bitwise_eq(&snapshot_p));
        assert!(frozen.vision.params().bitwise_eq(&snapshot_v));
        assert!(frozen.definition.params().bitwise_eq(&snapshot_d));
    }

    #[test]
    fn total_loss_is_weighted_sum_of_components() {
        let (config, samples, model, frozen, kb) = setup(3);
        let out = train(
            &config,
            &samples,
            model,
            &frozen,
            &PairSource::Online { kb: &kb },
            None,
        )
        .unwrap();
        for record in &out.log {
            let expected = combined_loss(
                record.l_csc,
                record.l_p,
                record.l_v,
                record.l_d,
                &config.weights,
            );
            assert!((record.total - expected).abs() < 1e-9);
        }
        assert_eq!(out.log.len(), 4); // 2 epochs x ceil(4/2)
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let (mut config, samples, model, frozen, kb) = setup(5);
        config.weights = LossWeights {
            csc: 0.0,
            phonetics: 0.0,
            vision: 0.0,
            definition: 0.0,
        };
        let before_encoder = model.encoder().params().clone();
        let before_head = model.head().clone();
        let out = train(
            &config,
            &samples,
            model,
            &frozen,
            &PairSource::Online { kb: &kb },
            None,
        )
        .unwrap();
        assert!(out.model.encoder().params().bitwise_eq(&before_encoder));
        assert!(out.model.head().bitwise_eq(&before_head));
        for record in &out.log {
            assert_eq!(record.total, 0.0);
        }
    }

    #[test]
    fn csc_only_config_logs_zero_contrastive_losses() {
        let (mut config, samples, model, frozen, kb) = setup(6);
        config.weights = LossWeights {
            csc: 1.0,
            phonetics: 0.0,
            vision: 0.0,
            definition: 0.0,
        };
        let out = train(
            &config,
            &samples,
            model,
            &frozen,
            &PairSource::Online { kb: &kb },
            None,
        )
        .unwrap();
        for record in &out.log {
            assert_eq!(record.l_p, 0.0);
            assert_eq!(record.l_v, 0.0);
            assert_eq!(record.l_d, 0.0);
            assert!(record.l_csc > 0.0);
        }
    }

    #[test]
    fn csc_only_and_full_config_diverge() {
        let (config, samples, model, frozen, kb) = setup(8);
        let mut csc_only = config.clone();
        csc_only.weights = LossWeights {
            csc: 1.0,
            phonetics: 0.0,
            vision: 0.0,
            definition: 0.0,
        };
        let full = train(
            &config,
            &samples,
            model.clone(),
            &frozen,
            &PairSource::Online { kb: &kb },
            None,
        )
        .unwrap();
        let baseline = train(
            &csc_only,
            &samples,
            model,
            &frozen,
            &PairSource::Online { kb: &kb },
            None,
        )
        .unwrap();
        assert!(!full
            .model
            .encoder()
            .params()
            .bitwise_eq(baseline.model.encoder().params()));
    }

    #[test]
    fn epochs_zero_is_a_config_error() {
        let (mut config, samples, model, frozen, kb) = setup(1);
        config.epochs = 0;
        let err = train(
            &config,
            &samples,
            model,
            &frozen,
            &PairSource::Online { kb: &kb },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::Config(_)));
    }

    #[test]
    fn offline_pairs_drive_training() {
        let (config, samples, model, frozen, kb) = setup(9);
        // precompute one pool per kind from the same corpus
        let vocab = model.vocab().to_vec();
        let mut pools = ContrastiveSet::default();
        for sample in &samples {
            for &pos in sample.error_positions() {
                let mut rng = rng::stream(11, &format!("off:{}:{pos}", sample.id()));
                if let Ok(b) =
                    build_phonetic_batch(sample, pos, config.negatives, &kb, &vocab, &mut rng)
                {
                    pools.phonetics.push(b);
                }
            }
        }
        assert!(!pools.phonetics.is_empty());
        let out = train(
            &config,
            &samples,
            model,
            &frozen,
            &PairSource::Offline(pools),
            None,
        )
        .unwrap();
        assert!(out.log.iter().any(|r| r.l_p > 0.0));
        // no offline pools for V/D were provided
        assert!(out.log.iter().all(|r| r.l_v == 0.0 && r.l_d == 0.0));
    }

    #[test]
    fn per_epoch_checkpoints_are_written() {
        let (config, samples, model, frozen, kb) = setup(10);
        let dir = tempfile::tempdir().unwrap();
        let out = train(
            &config,
            &samples,
            model,
            &frozen,
            &PairSource::Online { kb: &kb },
            Some(dir.path()),
        )
        .unwrap();
        assert_eq!(out.checkpoints.len(), config.epochs);
        for path in &out.checkpoints {
            let (loaded, _) = CscModel::load(path).unwrap();
            assert_eq!(loaded.vocab(), out.model.vocab());
        }
        // the final epoch checkpoint equals the returned model
        let (last, _) = CscModel::load(out.checkpoints.last().unwrap()).unwrap();
        assert!(last.encoder().params().bitwise_eq(out.model.encoder().params()));
    }
}
