//! `lead prepare`: load a corpus, optionally convert its charset, validate,
//! and write the canonical TSV plus a statistics report.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use lead_core::data::{
    convert_charset, corpus_stats, load_corpus, save_corpus_tsv, CharMap, CorpusFormat,
};

use crate::manifest::{with_suffix, ManifestBuilder};

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Input corpus file
    #[arg(long)]
    pub input: PathBuf,
    /// Input format
    #[arg(long, default_value = "tsv", value_parser = parse_format)]
    pub format: CorpusFormat,
    /// Traditional-to-simplified table; omit to skip conversion
    #[arg(long)]
    pub charmap: Option<PathBuf>,
    /// Canonical TSV output path
    #[arg(long)]
    pub output: PathBuf,
}

fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    s.parse()
}

pub fn run(args: &PrepareArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("prepare");
    manifest.input(&args.input)?;
    let samples = load_corpus(&args.input, args.format)
        .with_context(|| format!("loading {}", args.input.display()))?;
    let samples = match &args.charmap {
        Some(charmap_path) => {
            manifest.input(charmap_path)?;
            let map = CharMap::load(charmap_path)
                .with_context(|| format!("loading char map {}", charmap_path.display()))?;
            samples.iter().map(|s| convert_charset(s, &map)).collect()
        }
        None => samples,
    };
    save_corpus_tsv(&samples, &args.output)
        .with_context(|| format!("writing {}", args.output.display()))?;

    let stats = corpus_stats(&samples);
    let stats_path = with_suffix(&args.output, ".stats.json");
    std::fs::write(&stats_path, serde_json::to_string_pretty(&stats)? + "\n")?;
    eprintln!(
        "prepared {} sentences (avg length {:.2}, {} errors) -> {}",
        stats.sentence_count,
        stats.avg_length,
        stats.error_count,
        args.output.display()
    );

    manifest
        .config(serde_json::json!({
            "format": match args.format { CorpusFormat::Tsv => "tsv", CorpusFormat::JsonLines => "jsonl" },
            "charmap": args.charmap.as_ref().map(|p| p.display().to_string()),
        }))
        .output(&args.output)
        .output(&stats_path);
    manifest.write(with_suffix(&args.output, ".manifest.json"))?;
    Ok(())
}
