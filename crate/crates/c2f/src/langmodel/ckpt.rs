//! Versioned binary checkpoints.
//!
//! Layout: 5-byte magic, u32 format version, length-prefixed JSON config
//! block, 32-byte vocabulary content hash, length-prefixed u64 dims, then
//! length-prefixed parameter blocks as row-major little-endian f64. The
//! same container carries naive-Bayes models under a different magic.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::corpus::Vocabulary;

use super::{LMConfig, LMParams};

pub const FORMAT_VERSION: u32 = 1;
pub(crate) const LM_MAGIC: &[u8; 5] = b"C2FLM";

/// Block lengths are validated against dims, but a corrupt length header
/// could still demand an absurd allocation; cap it.
const MAX_BLOCK_ELEMS: u64 = 1 << 31;

#[derive(Debug, thiserror::Error)]
pub enum CkptError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint was written for a different vocabulary")]
    VocabMismatch,
    #[error("checkpoint file is truncated")]
    Truncated,
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad checkpoint config block: {0}")]
    BadConfig(#[from] serde_json::Error),
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), CkptError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            CkptError::Truncated
        } else {
            CkptError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, CkptError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CkptError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) struct Container {
    pub config_json: Vec<u8>,
    pub vocab_hash: [u8; 32],
    pub dims: Vec<u64>,
    pub blocks: Vec<Vec<f64>>,
}

pub(crate) fn write_container(
    path: &Path,
    magic: &[u8; 5],
    config_json: &[u8],
    vocab_hash: &[u8; 32],
    dims: &[u64],
    blocks: &[&[f64]],
) -> Result<(), CkptError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(config_json.len() as u64).to_le_bytes())?;
    w.write_all(config_json)?;
    w.write_all(vocab_hash)?;
    w.write_all(&(dims.len() as u64).to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&(blocks.len() as u64).to_le_bytes())?;
    for block in blocks {
        w.write_all(&(block.len() as u64).to_le_bytes())?;
        for v in *block {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_container(path: &Path, magic: &[u8; 5]) -> Result<Container, CkptError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut found = [0u8; 5];
    read_exact(&mut r, &mut found)?;
    if &found != magic {
        return Err(CkptError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(CkptError::UnsupportedVersion(version));
    }
    let config_len = read_u64(&mut r)?;
    if config_len > MAX_BLOCK_ELEMS {
        return Err(CkptError::ShapeMismatch("implausible config length".into()));
    }
    let mut config_json = vec![0u8; config_len as usize];
    read_exact(&mut r, &mut config_json)?;
    let mut vocab_hash = [0u8; 32];
    read_exact(&mut r, &mut vocab_hash)?;
    let ndims = read_u64(&mut r)?;
    if ndims > 64 {
        return Err(CkptError::ShapeMismatch("implausible dim count".into()));
    }
    let dims = (0..ndims)
        .map(|_| read_u64(&mut r))
        .collect::<Result<Vec<_>, _>>()?;
    let nblocks = read_u64(&mut r)?;
    if nblocks > 64 {
        return Err(CkptError::ShapeMismatch("implausible block count".into()));
    }
    let mut blocks = Vec::with_capacity(nblocks as usize);
    for _ in 0..nblocks {
        let count = read_u64(&mut r)?;
        if count > MAX_BLOCK_ELEMS {
            return Err(CkptError::ShapeMismatch("implausible block length".into()));
        }
        let mut block = vec![0.0f64; count as usize];
        let mut b = [0u8; 8];
        for v in block.iter_mut() {
            read_exact(&mut r, &mut b)?;
            *v = f64::from_le_bytes(b);
        }
        blocks.push(block);
    }
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(Container {
            config_json,
            vocab_hash,
            dims,
            blocks,
        }),
        _ => Err(CkptError::ShapeMismatch("trailing data".into())),
    }
}

/// Saves params + config, stamped with the vocabulary's content hash.
pub fn save_lm_checkpoint(
    path: &Path,
    params: &LMParams,
    cfg: &LMConfig,
    vocab: &Vocabulary,
) -> Result<(), CkptError> {
    if params.vocab_size != vocab.len() {
        return Err(CkptError::ShapeMismatch(format!(
            "params built for vocabulary of {}, given {}",
            params.vocab_size,
            vocab.len()
        )));
    }
    if params.context_size != cfg.context_size
        || params.embed_dim != cfg.embed_dim
        || params.hidden_dim != cfg.hidden_dim
        || params.label_embed_dim != cfg.label_embed_dim
    {
        return Err(CkptError::ShapeMismatch(
            "params dimensions disagree with config".into(),
        ));
    }
    let config_json = serde_json::to_vec(cfg)?;
    let dims: Vec<u64> = [
        params.vocab_size,
        params.num_labels,
        params.num_coarse,
        params.context_size,
        params.embed_dim,
        params.hidden_dim,
        params.label_embed_dim,
    ]
    .iter()
    .map(|&d| d as u64)
    .collect();
    let blocks: Vec<&[f64]> = params.blocks().iter().map(|&(_, b)| b).collect();
    write_container(path, LM_MAGIC, &config_json, &vocab.content_hash(), &dims, &blocks)
}

/// Loads params + config, validating magic, version, vocabulary hash, block
/// shapes, and finiteness.
pub fn load_lm_checkpoint(
    path: &Path,
    vocab: &Vocabulary,
) -> Result<(LMParams, LMConfig), CkptError> {
    let c = read_container(path, LM_MAGIC)?;
    let cfg: LMConfig = serde_json::from_slice(&c.config_json)?;
    if c.vocab_hash != vocab.content_hash() {
        return Err(CkptError::VocabMismatch);
    }
    if c.dims.len() != 7 {
        return Err(CkptError::ShapeMismatch(format!(
            "expected 7 dims, found {}",
            c.dims.len()
        )));
    }
    let d: Vec<usize> = c.dims.iter().map(|&v| v as usize).collect();
    let (vocab_size, num_labels, num_coarse) = (d[0], d[1], d[2]);
    let (context_size, embed_dim, hidden_dim, label_embed_dim) = (d[3], d[4], d[5], d[6]);
    if vocab_size != vocab.len() {
        return Err(CkptError::VocabMismatch);
    }
    if context_size != cfg.context_size
        || embed_dim != cfg.embed_dim
        || hidden_dim != cfg.hidden_dim
        || label_embed_dim != cfg.label_embed_dim
    {
        return Err(CkptError::ShapeMismatch(
            "dims disagree with the stored config".into(),
        ));
    }
    let input_dim = context_size * embed_dim + label_embed_dim;
    let expected: [(&str, usize); 6] = [
        ("token_embeddings", vocab_size * embed_dim),
        ("label_embeddings", num_labels * label_embed_dim),
        ("hidden_weights", input_dim * hidden_dim),
        ("hidden_bias", hidden_dim),
        ("output_weights", hidden_dim * vocab_size),
        ("output_bias", vocab_size),
    ];
    if c.blocks.len() != expected.len() {
        return Err(CkptError::ShapeMismatch(format!(
            "expected {} parameter blocks, found {}",
            expected.len(),
            c.blocks.len()
        )));
    }
    for ((name, want), block) in expected.iter().zip(&c.blocks) {
        if block.len() != *want {
            return Err(CkptError::ShapeMismatch(format!(
                "block {name}: expected {want} values, found {}",
                block.len()
            )));
        }
        if block.iter().any(|v| !v.is_finite()) {
            return Err(CkptError::ShapeMismatch(format!(
                "block {name} holds non-finite values"
            )));
        }
    }
    let mut blocks = c.blocks.into_iter();
    Ok((
        LMParams {
            vocab_size,
            num_labels,
            num_coarse,
            context_size,
            embed_dim,
            hidden_dim,
            label_embed_dim,
            token_embeddings: blocks.next().unwrap(),
            label_embeddings: blocks.next().unwrap(),
            hidden_weights: blocks.next().unwrap(),
            hidden_bias: blocks.next().unwrap(),
            output_weights: blocks.next().unwrap(),
            output_bias: blocks.next().unwrap(),
        },
        cfg,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelHierarchy;

    fn fixture() -> (LMParams, LMConfig, Vocabulary) {
        let hier = LabelHierarchy::from_json_str(r#"{"a": ["x", "y"], "b": ["z"]}"#).unwrap();
        let mut vocab = Vocabulary::new(&hier);
        vocab.tokenize_grow("north south east west");
        let cfg = LMConfig {
            context_size: 2,
            embed_dim: 3,
            hidden_dim: 4,
            label_embed_dim: 2,
            ..LMConfig::default()
        };
        let params = LMParams::init(&cfg, &vocab, &hier, 31).unwrap();
        (params, cfg, vocab)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (params, cfg, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lm.ckpt");
        save_lm_checkpoint(&path, &params, &cfg, &vocab).unwrap();
        let (loaded, loaded_cfg) = load_lm_checkpoint(&path, &vocab).unwrap();
        assert_eq!(params, loaded);
        assert_eq!(cfg, loaded_cfg);
    }

    #[test]
    fn corruption_is_detected() {
        let (params, cfg, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lm.ckpt");
        save_lm_checkpoint(&path, &params, &cfg, &vocab).unwrap();
        let original = std::fs::read(&path).unwrap();

        let mut bad = original.clone();
        bad[2] ^= 0xff;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_lm_checkpoint(&path, &vocab),
            Err(CkptError::BadMagic)
        ));

        let mut bad = original.clone();
        bad[5..9].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_lm_checkpoint(&path, &vocab),
            Err(CkptError::UnsupportedVersion(9))
        ));

        std::fs::write(&path, &original[..original.len() - 10]).unwrap();
        assert!(matches!(
            load_lm_checkpoint(&path, &vocab),
            Err(CkptError::Truncated)
        ));

        let mut bad = original.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_lm_checkpoint(&path, &vocab),
            Err(CkptError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn vocabulary_hash_is_enforced() {
        let (params, cfg, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lm.ckpt");
        save_lm_checkpoint(&path, &params, &cfg, &vocab).unwrap();
        let mut grown = vocab.clone();
        grown.tokenize_grow("zenith");
        assert!(matches!(
            load_lm_checkpoint(&path, &grown),
            Err(CkptError::VocabMismatch)
        ));
    }
}
