use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Model, ModelConfig};
use crate::error::{CocnError, Result};

const MAGIC: &[u8; 5] = b"COCN1";

/// Magic, little-endian `u32` JSON length, JSON config, then every tensor's
/// values in declaration order as little-endian `f64`.
pub fn write_checkpoint<W: Write>(mut w: W, model: &Model) -> Result<()> {
    let json = serde_json::to_vec(&model.cfg)?;
    let len =
        u32::try_from(json.len()).map_err(|_| CocnError::Checkpoint("config too large".into()))?;
    let mut buf = Vec::with_capacity(9 + json.len() + 8 * model.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &model.params {
        for v in p.value.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
        .map_err(|e| CocnError::Checkpoint(format!("write failed: {e}")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| CocnError::Checkpoint(format!("read failed: {e}")))?;
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(CocnError::Checkpoint("bad magic".into()));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(9..9 + len)
        .ok_or_else(|| CocnError::Checkpoint("truncated config".into()))?;
    let cfg: ModelConfig = serde_json::from_slice(body)?;
    let shapes = Model::new(cfg.clone(), 0)?.shapes();
    let mut rest = &bytes[9 + len..];
    let total: usize = shapes.iter().map(|(a, b)| a * b).sum();
    if rest.len() != 8 * total {
        return Err(CocnError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            8 * total,
            rest.len()
        )));
    }
    let mut values = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let count = shape.0 * shape.1;
        let data: Vec<f64> = rest[..8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        rest = &rest[8 * count..];
        values.push(Array2::from_shape_vec(shape, data).expect("length checked"));
    }
    Model::from_values(cfg, values)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| CocnError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(&mut w, model)?;
    w.flush().map_err(|e| CocnError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| CocnError::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
