//! `lead train`: fine-tune the spell-checking model, writing per-epoch
//! checkpoints, a JSON-lines training log, and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use lead_core::data::{load_corpus, CorpusFormat};
use lead_core::encoder::{freeze, load_checkpoint, EncoderConfig, FrozenEncoder};
use lead_core::kb::KnowledgeBase;
use lead_core::pairs::read_batches;
use lead_core::rng::derive_seed;
use lead_core::trainer::{build_vocab, train, ContrastiveSet, FrozenEncoders, PairSource};
use lead_core::{CscModel, TransformerEncoder};

use crate::config::{config_json, load_config};
use crate::manifest::ManifestBuilder;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training config file
    #[arg(long)]
    pub config: PathBuf,
    /// Canonical TSV training corpus
    #[arg(long)]
    pub train: PathBuf,
    /// Knowledge-base directory (pinyin.tsv, confusion.tsv, dictionary.jsonl)
    #[arg(long, env = "LEAD_KB_DIR")]
    pub kb_dir: PathBuf,
    /// Output directory for checkpoints, the log, and the manifest
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Replay precomputed mini-batches (pairs_P.jsonl / pairs_V.jsonl /
    /// pairs_D.jsonl) instead of building pairs online
    #[arg(long)]
    pub pairs_dir: Option<PathBuf>,
    /// Checkpoint for the frozen phonetic encoder (default: random init)
    #[arg(long)]
    pub ep_checkpoint: Option<PathBuf>,
    /// Checkpoint for the frozen vision encoder (default: random init)
    #[arg(long)]
    pub ev_checkpoint: Option<PathBuf>,
    /// Checkpoint for the frozen definition encoder (default: random init)
    #[arg(long)]
    pub ed_checkpoint: Option<PathBuf>,
}

fn frozen_from(
    flag: &Option<PathBuf>,
    default: FrozenEncoder,
    enc_config: &EncoderConfig,
    manifest: &mut ManifestBuilder,
) -> Result<FrozenEncoder> {
    match flag {
        Some(path) => {
            manifest.input(path)?;
            let encoder: TransformerEncoder = load_checkpoint(path, enc_config)
                .with_context(|| format!("loading frozen encoder {}", path.display()))?;
            Ok(freeze(encoder))
        }
        None => Ok(default),
    }
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("train");
    manifest.input(&args.config)?.input(&args.train)?.input(&args.kb_dir)?;

    let file_config = load_config(&args.config)?;
    let train_config = file_config.train.clone();
    manifest.seed(train_config.seed).config(config_json(&file_config));

    let samples = load_corpus(&args.train, CorpusFormat::Tsv)
        .with_context(|| format!("loading {}", args.train.display()))?;
    let kb = KnowledgeBase::load_dir(&args.kb_dir)
        .with_context(|| format!("loading knowledge base from {}", args.kb_dir.display()))?;
    let vocab = build_vocab(&samples, Some(&kb));
    let enc_config = EncoderConfig {
        vocab,
        hidden_size: file_config.model.hidden_size,
        layers: file_config.model.layers,
        heads: file_config.model.heads,
        max_length: train_config.max_length,
    };
    let model = CscModel::new(enc_config.clone(), train_config.seed)?;
    let defaults = FrozenEncoders::random_defaults(&enc_config, train_config.seed)?;
    let frozen = FrozenEncoders {
        phonetics: frozen_from(&args.ep_checkpoint, defaults.phonetics, &enc_config, &mut manifest)?,
        vision: frozen_from(&args.ev_checkpoint, defaults.vision, &enc_config, &mut manifest)?,
        definition: frozen_from(&args.ed_checkpoint, defaults.definition, &enc_config, &mut manifest)?,
    };

    let pair_source = match &args.pairs_dir {
        Some(dir) => {
            manifest.input(dir)?;
            PairSource::Offline(load_pair_pools(dir)?)
        }
        None => PairSource::Online { kb: &kb },
    };

    std::fs::create_dir_all(&args.out_dir)?;
    let outcome = train(
        &train_config,
        &samples,
        model,
        &frozen,
        &pair_source,
        Some(&args.out_dir),
    )?;

    let log_path = args.out_dir.join("train_log.jsonl");
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    for record in &outcome.log {
        writeln!(log_file, "{}", serde_json::to_string(record)?)?;
    }
    log_file.flush()?;

    // the frozen encoders are part of the run's reproducible state; export
    // them so later runs (or pair building) can reuse them
    let frozen_dir = args.out_dir.join("frozen");
    std::fs::create_dir_all(&frozen_dir)?;
    frozen
        .phonetics
        .save(frozen_dir.join("phonetics"), derive_seed(train_config.seed, "knowledge-encoder"))?;
    frozen
        .vision
        .save(frozen_dir.join("vision"), derive_seed(train_config.seed, "vision-encoder"))?;
    frozen
        .definition
        .save(frozen_dir.join("definition"), derive_seed(train_config.seed, "knowledge-encoder"))?;

    if let Some(last) = outcome.log.last() {
        eprintln!(
            "trained {} steps; final losses: csc {:.4}, p {:.4}, v {:.4}, d {:.4}, total {:.4}",
            outcome.log.len(),
            last.l_csc,
            last.l_p,
            last.l_v,
            last.l_d,
            last.total
        );
    }
    for path in &outcome.checkpoints {
        manifest.output(path);
    }
    manifest.output(&log_path);
    manifest.write(args.out_dir.join("manifest.json"))?;
    Ok(())
}

fn load_pair_pools(dir: &Path) -> Result<ContrastiveSet> {
    let mut pools = ContrastiveSet::default();
    for (name, target) in [
        ("pairs_P.jsonl", &mut pools.phonetics),
        ("pairs_V.jsonl", &mut pools.vision),
        ("pairs_D.jsonl", &mut pools.definition),
    ] {
        let path = dir.join(name);
        if path.exists() {
            *target = read_batches(&path)
                .with_context(|| format!("loading {}", path.display()))?;
        } else {
            eprintln!("note: {} not found; that objective gets no offline pairs", path.display());
        }
    }
    Ok(pools)
}
