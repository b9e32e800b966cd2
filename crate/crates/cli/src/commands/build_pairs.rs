//! `lead build-pairs`: precompute contrastive mini-batches offline, one JSON
//! line per batch, deterministic under the seed.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use lead_core::data::{load_corpus, CorpusFormat};
use lead_core::encoder::Encoder;
use lead_core::kb::{DefinitionStrategy, KnowledgeBase};
use lead_core::pairs::{
    build_definition_batch, build_phonetic_batch, build_visual_batch, write_batches,
    ContrastiveBatch, KnowledgeKind,
};
use lead_core::rng::stream;
use lead_core::trainer::build_vocab;

use crate::commands::load_any_encoder;
use crate::manifest::{with_suffix, ManifestBuilder};

#[derive(Args, Debug)]
pub struct BuildPairsArgs {
    /// Canonical TSV corpus
    #[arg(long)]
    pub corpus: PathBuf,
    /// Knowledge kind: P, V, or D
    #[arg(long, value_parser = parse_kind)]
    pub knowledge: KnowledgeKind,
    /// Negatives per mini-batch
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Definition-selection strategy (D only)
    #[arg(long, default_value = "first", value_parser = parse_strategy)]
    pub strategy: DefinitionStrategy,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Knowledge-base directory (pinyin.tsv, confusion.tsv, dictionary.jsonl)
    #[arg(long, env = "LEAD_KB_DIR")]
    pub kb_dir: PathBuf,
    /// Frozen encoder checkpoint for the `similar` strategy
    #[arg(long)]
    pub sim_checkpoint: Option<PathBuf>,
    /// Error positions used per sample; 0 means all
    #[arg(long, default_value_t = 0)]
    pub per_sample_cap: usize,
    /// Output JSON-lines file
    #[arg(long)]
    pub output: PathBuf,
}

fn parse_kind(s: &str) -> Result<KnowledgeKind, String> {
    s.parse()
}

fn parse_strategy(s: &str) -> Result<DefinitionStrategy, String> {
    s.parse()
}

pub fn run(args: &BuildPairsArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("build-pairs");
    manifest.seed(args.seed).input(&args.corpus)?.input(&args.kb_dir)?;

    let samples = load_corpus(&args.corpus, CorpusFormat::Tsv)
        .with_context(|| format!("loading {}", args.corpus.display()))?;
    let kb = KnowledgeBase::load_dir(&args.kb_dir)
        .with_context(|| format!("loading knowledge base from {}", args.kb_dir.display()))?;
    let vocab = build_vocab(&samples, Some(&kb));
    let n = args.n as usize;

    let sim_encoder = match (args.knowledge, args.strategy, &args.sim_checkpoint) {
        (KnowledgeKind::Definition, DefinitionStrategy::Similar, Some(path)) => {
            manifest.input(path)?;
            Some(load_any_encoder(path)?)
        }
        (KnowledgeKind::Definition, DefinitionStrategy::Similar, None) => {
            bail!("--strategy similar requires --sim-checkpoint");
        }
        _ => None,
    };

    let mut batches: Vec<ContrastiveBatch> = Vec::new();
    let mut skipped = 0usize;
    for sample in &samples {
        let positions = sample.error_positions();
        let capped = if args.per_sample_cap > 0 {
            &positions[..positions.len().min(args.per_sample_cap)]
        } else {
            positions
        };
        for &pos in capped {
            let mut rng = stream(
                args.seed,
                &format!("pair:{}:{}:{pos}", args.knowledge, sample.id()),
            );
            let built = match args.knowledge {
                KnowledgeKind::Phonetics => {
                    build_phonetic_batch(sample, pos, n, &kb, &vocab, &mut rng)
                }
                KnowledgeKind::Vision => {
                    build_visual_batch(sample, pos, n, &kb, &vocab, &mut rng)
                }
                KnowledgeKind::Definition => build_definition_batch(
                    sample,
                    pos,
                    n,
                    &kb,
                    args.strategy,
                    sim_encoder.as_ref().map(|e| e as &dyn Encoder),
                    &mut rng,
                ),
            };
            match built {
                Ok(batch) => batches.push(batch),
                Err(e) if e.is_skip() => skipped += 1,
                Err(e) => {
                    return Err(e).with_context(|| {
                        format!("sample {} position {pos}", sample.id())
                    })
                }
            }
        }
    }
    write_batches(&args.output, &batches)
        .with_context(|| format!("writing {}", args.output.display()))?;
    eprintln!(
        "built {} {} mini-batches ({} positions skipped) -> {}",
        batches.len(),
        args.knowledge,
        skipped,
        args.output.display()
    );

    manifest
        .config(serde_json::json!({
            "knowledge": args.knowledge.to_string(),
            "n": n,
            "strategy": args.strategy.to_string(),
            "per_sample_cap": args.per_sample_cap,
            "batches": batches.len(),
            "skipped_positions": skipped,
        }))
        .output(&args.output);
    manifest.write(with_suffix(&args.output, ".manifest.json"))?;
    Ok(())
}
