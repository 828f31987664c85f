//! Checkpoint layout, all little-endian:
//!
//! ```text
//! magic  "GNNRCKPT"
//! u32    version (1)
//! u8     kind (0 ngcf, 1 lightgcn)
//! u8     combine (0 concat, 1 mean)
//! u8     normalize_by_degree
//! u8     reserved (0)
//! u32    num_layers
//! u32    embed_dim
//! u64    num_users
//! u64    num_items
//! f32[]  user embeddings, item embeddings, then w1, w2 per layer (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Combine, LayerWeights, ModelConfig, ModelKind, ModelParams};
use crate::error::{Error, Result};
use crate::kernels::{EmbeddingMatrix, Matrix};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GNNRCKPT";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Format(format!("checkpoint i/o: {e}"))
}

pub fn write_checkpoint<W: Write>(mut w: W, config: &ModelConfig, params: &ModelParams<f32>) -> Result<()> {
    params.check(config, params.user_embed().rows(), params.item_embed().rows())?;
    let mut head = Vec::with_capacity(40);
    head.extend_from_slice(CHECKPOINT_MAGIC);
    head.extend_from_slice(&VERSION.to_le_bytes());
    head.push(match config.kind {
        ModelKind::Ngcf => 0,
        ModelKind::LightGcn => 1,
    });
    head.push(match config.combine {
        Combine::Concat => 0,
        Combine::Mean => 1,
    });
    head.push(config.normalize_by_degree as u8);
    head.push(0);
    head.extend_from_slice(&(config.num_layers as u32).to_le_bytes());
    head.extend_from_slice(&(config.embed_dim as u32).to_le_bytes());
    head.extend_from_slice(&(params.user_embed().rows() as u64).to_le_bytes());
    head.extend_from_slice(&(params.item_embed().rows() as u64).to_le_bytes());
    w.write_all(&head).map_err(io_err)?;
    for t in params.tensors() {
        let bytes: Vec<u8> = t.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn take<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    Ok(b)
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Matrix<f32>> {
    let n = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("checkpoint tensor too large".into()))?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated checkpoint tensor".into()))?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelConfig, ModelParams<f32>)> {
    let magic: [u8; 8] = take(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let [kind, combine, normalize, _]: [u8; 4] = take(&mut r)?;
    let kind = match kind {
        0 => ModelKind::Ngcf,
        1 => ModelKind::LightGcn,
        k => return Err(Error::Format(format!("unknown model kind {k}"))),
    };
    let combine = match combine {
        0 => Combine::Concat,
        1 => Combine::Mean,
        c => return Err(Error::Format(format!("unknown combine {c}"))),
    };
    let layers = u32::from_le_bytes(take(&mut r)?) as usize;
    let d = u32::from_le_bytes(take(&mut r)?) as usize;
    let users = u64::from_le_bytes(take(&mut r)?) as usize;
    let items = u64::from_le_bytes(take(&mut r)?) as usize;
    let config = ModelConfig::new(kind, layers, d)?
        .with_combine(combine)
        .with_normalization(normalize != 0);
    let user_embed = EmbeddingMatrix::from(read_matrix(&mut r, users, d)?);
    let item_embed = EmbeddingMatrix::from(read_matrix(&mut r, items, d)?);
    let mut ws = Vec::new();
    if config.has_weights() {
        for _ in 0..layers {
            ws.push(LayerWeights {
                w1: read_matrix(&mut r, d, d)?,
                w2: read_matrix(&mut r, d, d)?,
            });
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let params = ModelParams::from_parts(&config, user_embed, item_embed, ws)?;
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams<f32>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), config, params)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams<f32>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
