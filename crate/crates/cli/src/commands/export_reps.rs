//! `lead export-reps`: encode listed characters in isolation and write their
//! representation vectors, optionally with a deterministic two-component
//! principal-component projection.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use lead_core::math::{pca2, pca2_project, Mat};
use lead_core::Encoder;

use crate::commands::load_any_encoder;
use crate::manifest::{with_suffix, ManifestBuilder};

#[derive(Args, Debug)]
pub struct ExportRepsArgs {
    /// Encoder or model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Characters to encode, one per line
    #[arg(long)]
    pub chars_file: PathBuf,
    /// Output TSV: character followed by its vector entries
    #[arg(long)]
    pub output: PathBuf,
    /// Also write a 2-component principal-component projection
    #[arg(long)]
    pub pca2d: bool,
}

pub fn run(args: &ExportRepsArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("export-reps");
    manifest.input(&args.checkpoint)?.input(&args.chars_file)?;

    let encoder = load_any_encoder(&args.checkpoint)?;
    let text = std::fs::read_to_string(&args.chars_file)
        .with_context(|| format!("reading {}", args.chars_file.display()))?;
    let mut chars = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => chars.push(c),
            _ => anyhow::bail!(
                "{}:{}: expected one character per line, found `{line}`",
                args.chars_file.display(),
                idx + 1
            ),
        }
    }

    let vocab: std::collections::HashSet<char> = encoder.vocab().iter().copied().collect();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for c in chars {
        if !vocab.contains(&c) {
            skipped.push(c);
            continue;
        }
        let rep = encoder.encode(&[c])?;
        rows.push(rep.row(0).to_vec());
        kept.push(c);
    }

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.output)?);
    for (c, row) in kept.iter().zip(&rows) {
        write!(out, "{c}")?;
        for v in row {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    manifest.output(&args.output);

    if args.pca2d {
        let points = Mat::from_rows(&rows);
        let pca = pca2(&points);
        let projected = pca2_project(&points, &pca);
        let pca_path = with_suffix(&args.output, ".pca2d.tsv");
        let mut out = std::io::BufWriter::new(std::fs::File::create(&pca_path)?);
        for (i, c) in kept.iter().enumerate() {
            writeln!(out, "{c}\t{}\t{}", projected.get(i, 0), projected.get(i, 1))?;
        }
        out.flush()?;
        manifest.output(&pca_path);
    }

    if !skipped.is_empty() {
        eprintln!(
            "skipped {} characters outside the vocabulary: {}",
            skipped.len(),
            skipped.iter().collect::<String>()
        );
    }
    eprintln!(
        "exported {} representations (h = {}) -> {}",
        kept.len(),
        encoder.hidden_size(),
        args.output.display()
    );

    manifest
        .config(serde_json::json!({
            "pca2d": args.pca2d,
            "exported": kept.len(),
        }))
        .skipped_chars(&skipped);
    manifest.write(with_suffix(&args.output, ".manifest.json"))?;
    Ok(())
}
