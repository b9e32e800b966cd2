pub mod build_pairs;
pub mod evaluate;
pub mod export_reps;
pub mod prepare;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use lead_core::encoder::{load_checkpoint_auto, read_checkpoint_meta, ModelKind};
use lead_core::{CscModel, TransformerEncoder};

/// Loads the encoder from either checkpoint kind: a bare encoder directly,
/// or the encoder inside a full model checkpoint.
pub fn load_any_encoder(path: &Path) -> Result<TransformerEncoder> {
    let meta = read_checkpoint_meta(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    match meta.kind {
        ModelKind::Encoder => Ok(load_checkpoint_auto(path)?.0),
        ModelKind::CscModel => Ok(CscModel::load(path)?.0.into_encoder()),
    }
}
