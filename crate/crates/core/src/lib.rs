//! Contrastive fine-tuning toolkit for Chinese spell checking.
//!
//! A spell-checking model (a trainable encoder plus a per-position
//! classification head) is fine-tuned with up to four objectives at once:
//! the usual cross-entropy over corrected sentences, and three contrastive
//! objectives that pull the model's representations toward frozen reference
//! encoders along phonetic, visual, and word-definition relations drawn from
//! dictionary-style resources.
//!
//! Modules follow the pipeline: [`data`] loads corpora, [`kb`] holds the
//! lookup resources, [`pairs`] builds contrastive mini-batches, [`encoder`]
//! and [`objectives`] provide the model and losses, [`trainer`] runs
//! fine-tuning, and [`eval`] scores predictions with strict sentence-level
//! metrics.

pub mod data;
pub mod encoder;
pub mod eval;
pub mod kb;
pub mod math;
pub mod objectives;
pub mod pairs;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use data::{convert_charset, corpus_stats, CharMap, CorpusFormat, CorpusStats, CscSample};
pub use encoder::{
    freeze, CscModel, Encoder, EncoderConfig, FrozenEncoder, LookupEncoder, RepSequence,
    TransformerEncoder,
};
pub use eval::{evaluate, predict, sighan13_filter, EvalReport, Prediction};
pub use kb::{
    select_definition, span_containing, DefinitionStrategy, Dictionary, KnowledgeBase,
    MaxMatchTokenizer, PinyinTable, Syllable, Tokenizer, VisualConfusionSet, WordSpan,
};
pub use objectives::{
    combined_loss, csc_loss, info_nce, metric_cosine_span, metric_dot, LossWeights, MetricScores,
};
pub use pairs::{
    build_definition_batch, build_phonetic_batch, build_visual_batch, ContrastiveBatch,
    KnowledgeKind,
};
pub use trainer::{lr_schedule, train, FrozenEncoders, TrainConfig, TrainOutcome};
