//! Checkpoint directory format.
//!
//! A checkpoint is a directory holding:
//! - `manifest.txt`: `key = value` lines (version, kind, seed, step, the
//!   architecture fields) followed by one `param = <name> <rows>x<cols>`
//!   line per array, in order
//! - `vocab.txt`: one character per line, in vocabulary order
//! - `params/<name>.bin`: magic `LARR`, a little-endian u32 format version,
//!   u64 rows, u64 cols, then row-major little-endian f32 values
//!
//! Writes build a temporary sibling directory and rename it into place, so a
//! partial checkpoint is never left behind under the target name.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::transformer::{CscModel, ParamSet, TransformerEncoder};
use super::{EncoderConfig, ModelError};
use crate::math::Mat;

const FORMAT_VERSION: u32 = 1;
const ARRAY_MAGIC: &[u8; 4] = b"LARR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Encoder,
    CscModel,
}

impl ModelKind {
    fn as_str(self) -> &'static str {
        match self {
            ModelKind::Encoder => "encoder",
            ModelKind::CscModel => "csc_model",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "encoder" => Some(ModelKind::Encoder),
            "csc_model" => Some(ModelKind::CscModel),
            _ => None,
        }
    }
}

/// Everything the manifest records besides the arrays themselves.
#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub version: u32,
    pub kind: ModelKind,
    pub seed: u64,
    pub step: u64,
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_length: usize,
    pub vocab: Vec<char>,
    /// Parameter names and shapes in manifest order.
    pub params: Vec<(String, (usize, usize))>,
}

impl CheckpointMeta {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            vocab: self.vocab.clone(),
            hidden_size: self.hidden_size,
            layers: self.layers,
            heads: self.heads,
            max_length: self.max_length,
        }
    }
}

fn ck_err(path: &Path, msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Saves a bare encoder.
pub fn save_checkpoint(
    encoder: &TransformerEncoder,
    path: impl AsRef<Path>,
    seed: u64,
    step: u64,
) -> Result<(), ModelError> {
    write_checkpoint(
        path.as_ref(),
        ModelKind::Encoder,
        encoder.config(),
        seed,
        step,
        &[encoder.params()],
    )
}

/// Loads a bare encoder, requiring the stored config to match `config`
/// exactly (vocabulary included).
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    config: &EncoderConfig,
) -> Result<TransformerEncoder, ModelError> {
    let path = path.as_ref();
    let (encoder, meta) = load_checkpoint_auto(path)?;
    let stored = meta.encoder_config();
    if stored != *config {
        let field = if stored.vocab != config.vocab {
            "vocab"
        } else if stored.hidden_size != config.hidden_size {
            "hidden_size"
        } else if stored.layers != config.layers {
            "layers"
        } else if stored.heads != config.heads {
            "heads"
        } else {
            "max_length"
        };
        return Err(ck_err(
            path,
            format!("stored config does not match the requested config (field `{field}`)"),
        ));
    }
    Ok(encoder)
}

/// Loads a bare encoder using the config recorded in the manifest.
pub fn load_checkpoint_auto(
    path: impl AsRef<Path>,
) -> Result<(TransformerEncoder, CheckpointMeta), ModelError> {
    let path = path.as_ref();
    let meta = read_checkpoint_meta(path)?;
    if meta.kind != ModelKind::Encoder {
        return Err(ck_err(
            path,
            format!("expected an encoder checkpoint, found kind `{}`", meta.kind.as_str()),
        ));
    }
    let params = read_params(path, &meta)?;
    let encoder = TransformerEncoder::from_parts(meta.encoder_config(), params, meta.seed)?;
    Ok((encoder, meta))
}

impl CscModel {
    /// Saves the full model (encoder and head) as one checkpoint.
    pub fn save(&self, path: impl AsRef<Path>, seed: u64) -> Result<(), ModelError> {
        write_checkpoint(
            path.as_ref(),
            ModelKind::CscModel,
            self.config(),
            seed,
            self.steps(),
            &[self.encoder().params(), self.head()],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(CscModel, CheckpointMeta), ModelError> {
        let path = path.as_ref();
        let meta = read_checkpoint_meta(path)?;
        if meta.kind != ModelKind::CscModel {
            return Err(ck_err(
                path,
                format!("expected a model checkpoint, found kind `{}`", meta.kind.as_str()),
            ));
        }
        let all = read_params(path, &meta)?;
        let mut encoder_params = ParamSet::new();
        let mut head_params = ParamSet::new();
        for (name, mat) in all.iter() {
            if name.starts_with("head.") {
                head_params.insert(name, mat.clone());
            } else {
                encoder_params.insert(name, mat.clone());
            }
        }
        let encoder =
            TransformerEncoder::from_parts(meta.encoder_config(), encoder_params, meta.seed)?;
        let model = CscModel::from_parts(encoder, head_params, meta.step)?;
        Ok((model, meta))
    }
}

fn write_checkpoint(
    path: &Path,
    kind: ModelKind,
    config: &EncoderConfig,
    seed: u64,
    step: u64,
    param_sets: &[&ParamSet],
) -> Result<(), ModelError> {
    if config.vocab.iter().any(|c| c.is_control()) {
        return Err(ck_err(
            path,
            "vocabulary contains control characters, unrepresentable in vocab.txt",
        ));
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| ck_err(path, "checkpoint path has no file name"))?;
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let tmp: PathBuf = path.with_file_name(format!(
        "{}.tmp-{}-{}",
        file_name.to_string_lossy(),
        std::process::id(),
        nanos
    ));
    fs::create_dir_all(tmp.join("params"))?;

    let mut manifest = BufWriter::new(File::create(tmp.join("manifest.txt"))?);
    writeln!(manifest, "version = {FORMAT_VERSION}")?;
    writeln!(manifest, "kind = {}", kind.as_str())?;
    writeln!(manifest, "seed = {seed}")?;
    writeln!(manifest, "step = {step}")?;
    writeln!(manifest, "hidden_size = {}", config.hidden_size)?;
    writeln!(manifest, "layers = {}", config.layers)?;
    writeln!(manifest, "heads = {}", config.heads)?;
    writeln!(manifest, "max_length = {}", config.max_length)?;
    writeln!(manifest, "vocab_size = {}", config.vocab.len())?;
    for set in param_sets {
        for (name, mat) in set.iter() {
            writeln!(manifest, "param = {name} {}x{}", mat.rows(), mat.cols())?;
            write_array(&tmp.join("params").join(format!("{name}.bin")), mat)?;
        }
    }
    manifest.flush()?;
    drop(manifest);

    let mut vocab_file = BufWriter::new(File::create(tmp.join("vocab.txt"))?);
    for &c in &config.vocab {
        writeln!(vocab_file, "{c}")?;
    }
    vocab_file.flush()?;
    drop(vocab_file);

    if path.exists() {
        fs::remove_dir_all(path)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_array(path: &Path, mat: &Mat) -> Result<(), ModelError> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(ARRAY_MAGIC)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes())?;
    file.write_all(&(mat.rows() as u64).to_le_bytes())?;
    file.write_all(&(mat.cols() as u64).to_le_bytes())?;
    for &v in mat.data() {
        file.write_all(&(v as f32).to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_checkpoint_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta, ModelError> {
    let path = path.as_ref();
    let manifest_path = path.join("manifest.txt");
    let reader = BufReader::new(
        File::open(&manifest_path).map_err(|e| ck_err(path, format!("manifest.txt: {e}")))?,
    );
    let mut version = None;
    let mut kind = None;
    let mut seed = None;
    let mut step = None;
    let mut hidden_size = None;
    let mut layers = None;
    let mut heads = None;
    let mut max_length = None;
    let mut vocab_size = None;
    let mut params = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| ck_err(path, format!("manifest.txt line {}: not key = value", idx + 1)))?;
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| ck_err(path, format!("manifest.txt: invalid number `{v}` for {key}")))
        };
        match key {
            "version" => {
                let v = parse_usize(value)? as u32;
                if v != FORMAT_VERSION {
                    return Err(ck_err(
                        path,
                        format!("unsupported version {v} (supported: {FORMAT_VERSION})"),
                    ));
                }
                version = Some(v);
            }
            "kind" => {
                kind = Some(ModelKind::parse(value).ok_or_else(|| {
                    ck_err(path, format!("unknown checkpoint kind `{value}`"))
                })?);
            }
            "seed" => seed = Some(parse_usize(value)? as u64),
            "step" => step = Some(parse_usize(value)? as u64),
            "hidden_size" => hidden_size = Some(parse_usize(value)?),
            "layers" => layers = Some(parse_usize(value)?),
            "heads" => heads = Some(parse_usize(value)?),
            "max_length" => max_length = Some(parse_usize(value)?),
            "vocab_size" => vocab_size = Some(parse_usize(value)?),
            "param" => {
                let (name, shape) = value
                    .rsplit_once(' ')
                    .ok_or_else(|| ck_err(path, format!("malformed param line `{value}`")))?;
                let (r, c) = shape
                    .split_once('x')
                    .ok_or_else(|| ck_err(path, format!("malformed shape `{shape}`")))?;
                params.push((
                    name.to_string(),
                    (parse_usize(r)?, parse_usize(c)?),
                ));
            }
            other => {
                return Err(ck_err(path, format!("unknown manifest key `{other}`")));
            }
        }
    }
    let missing = |field: &str| ck_err(path, format!("manifest.txt is missing `{field}`"));
    let meta = CheckpointMeta {
        version: version.ok_or_else(|| missing("version"))?,
        kind: kind.ok_or_else(|| missing("kind"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        step: step.ok_or_else(|| missing("step"))?,
        hidden_size: hidden_size.ok_or_else(|| missing("hidden_size"))?,
        layers: layers.ok_or_else(|| missing("layers"))?,
        heads: heads.ok_or_else(|| missing("heads"))?,
        max_length: max_length.ok_or_else(|| missing("max_length"))?,
        vocab: read_vocab(path)?,
        params,
    };
    let declared = vocab_size.ok_or_else(|| missing("vocab_size"))?;
    if declared != meta.vocab.len() {
        return Err(ck_err(
            path,
            format!(
                "vocab_size {declared} does not match vocab.txt ({} characters)",
                meta.vocab.len()
            ),
        ));
    }
    Ok(meta)
}

fn read_vocab(path: &Path) -> Result<Vec<char>, ModelError> {
    let vocab_path = path.join("vocab.txt");
    let reader = BufReader::new(
        File::open(&vocab_path).map_err(|e| ck_err(path, format!("vocab.txt: {e}")))?,
    );
    let mut vocab = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let mut chars = line.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => vocab.push(c),
            (None, _) => continue,
            _ => {
                return Err(ck_err(
                    path,
                    format!("vocab.txt line {}: expected one character", idx + 1),
                ))
            }
        }
    }
    Ok(vocab)
}

fn read_params(path: &Path, meta: &CheckpointMeta) -> Result<ParamSet, ModelError> {
    let mut params = ParamSet::new();
    for (name, (rows, cols)) in &meta.params {
        if params.try_get(name).is_some() {
            return Err(ck_err(path, format!("duplicate parameter `{name}` in manifest")));
        }
        let file_path = path.join("params").join(format!("{name}.bin"));
        let mat = read_array(&file_path, name)?;
        if (mat.rows(), mat.cols()) != (*rows, *cols) {
            return Err(ModelError::ShapeMismatch {
                name: name.clone(),
                expected: format!("{rows}x{cols}"),
                found: format!("{}x{}", mat.rows(), mat.cols()),
            });
        }
        params.insert(name, mat);
    }
    Ok(params)
}

fn read_array(path: &Path, name: &str) -> Result<Mat, ModelError> {
    let mut file = BufReader::new(
        File::open(path).map_err(|_| ModelError::MissingParameter(name.to_string()))?,
    );
    let arr_err = |msg: &str| ModelError::Checkpoint {
        path: path.display().to_string(),
        msg: format!("parameter `{name}`: {msg}"),
    };
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|_| arr_err("truncated header"))?;
    if &magic != ARRAY_MAGIC {
        return Err(arr_err("bad magic"));
    }
    let mut buf4 = [0u8; 4];
    file.read_exact(&mut buf4).map_err(|_| arr_err("truncated header"))?;
    let version = u32::from_le_bytes(buf4);
    if version != FORMAT_VERSION {
        return Err(arr_err(&format!(
            "unsupported array version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    let mut buf8 = [0u8; 8];
    file.read_exact(&mut buf8).map_err(|_| arr_err("truncated header"))?;
    let rows = u64::from_le_bytes(buf8) as usize;
    file.read_exact(&mut buf8).map_err(|_| arr_err("truncated header"))?;
    let cols = u64::from_le_bytes(buf8) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| arr_err("shape overflow"))?;
    let mut data = Vec::with_capacity(count);
    let mut value_buf = [0u8; 4];
    for _ in 0..count {
        file.read_exact(&mut value_buf)
            .map_err(|_| arr_err("truncated data"))?;
        let v = f32::from_le_bytes(value_buf) as f64;
        if !v.is_finite() {
            return Err(arr_err("non-finite value"));
        }
        data.push(v);
    }
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(arr_err("trailing bytes after array data"));
    }
    Ok(Mat::from_vec(rows, cols, data))
}
