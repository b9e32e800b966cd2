//! Shared fixtures for the criterion benchmarks.

use lead_core::data::CscSample;
use lead_core::encoder::EncoderConfig;
use lead_core::synth::{random_corpus, random_kb};
use lead_core::trainer::build_vocab;
use lead_core::{CscModel, KnowledgeBase};

pub fn bench_kb() -> (KnowledgeBase, Vec<char>) {
    random_kb(1816)
}

pub fn bench_corpus(n: usize) -> Vec<CscSample> {
    let (_, pool) = bench_kb();
    random_corpus(&pool, n, 1816)
}

pub fn bench_model(hidden_size: usize, layers: usize) -> CscModel {
    let (kb, _) = bench_kb();
    let samples = bench_corpus(64);
    let config = EncoderConfig {
        vocab: build_vocab(&samples, Some(&kb)),
        hidden_size,
        layers,
        heads: 2,
        max_length: 32,
    };
    CscModel::new(config, 1816).unwrap()
}
