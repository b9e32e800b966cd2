//! `lead evaluate`: decode a checkpoint over a test corpus (or take a
//! prediction file) and report strict sentence-level metrics.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use lead_core::data::{load_corpus, CorpusFormat};
use lead_core::eval::{
    evaluate, load_predictions_tsv, predict_corpus, render_table, save_predictions_tsv,
};
use lead_core::CscModel;

use crate::manifest::{with_suffix, ManifestBuilder};

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Model checkpoint to decode with
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Score an existing prediction file instead of decoding
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Gold test corpus (canonical TSV)
    #[arg(long)]
    pub test: PathBuf,
    /// Neutralize mixed 的/地/得 usage before scoring
    #[arg(long)]
    pub sighan13: bool,
    /// Report output path (JSON)
    #[arg(long)]
    pub report: PathBuf,
    /// Also write the decoded predictions as TSV
    #[arg(long)]
    pub dump_predictions: Option<PathBuf>,
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("evaluate");
    manifest.input(&args.test)?;
    let gold = load_corpus(&args.test, CorpusFormat::Tsv)
        .with_context(|| format!("loading {}", args.test.display()))?;

    let preds = match (&args.checkpoint, &args.predictions) {
        (Some(checkpoint), None) => {
            manifest.input(checkpoint)?;
            let (model, _) = CscModel::load(checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            predict_corpus(&model, &gold).context("decoding the test corpus")?
        }
        (None, Some(path)) => {
            manifest.input(path)?;
            load_predictions_tsv(path)
                .with_context(|| format!("loading predictions {}", path.display()))?
        }
        _ => bail!("exactly one of --checkpoint or --predictions is required"),
    };
    if let Some(dump) = &args.dump_predictions {
        save_predictions_tsv(&preds, dump)?;
        manifest.output(dump);
    }

    let report = evaluate(&preds, &gold, args.sighan13)?;
    std::fs::write(&args.report, serde_json::to_string_pretty(&report)? + "\n")?;
    eprint!("{}", render_table(&report));

    manifest
        .config(serde_json::json!({
            "sighan13": args.sighan13,
            "sentences": gold.len(),
        }))
        .output(&args.report);
    manifest.write(with_suffix(&args.report, ".manifest.json"))?;
    Ok(())
}
