//! Little-endian binary checkpoints.
//!
//! ```text
//! "MBCG" | version u32 | M u32 | N u32 | d u32 | B u32 | aggregation u32
//!        | transform u32 | L_1..L_B u32
//!        | P f32[M*d] | Q f32[N*d] | W_u^1..W_u^{B-1} f32[d*d] | W_i^1..W_i^{B-1} f32[d*d]
//! ```
//!
//! Transform arrays are present only when the transform flag is set.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cascade::{Aggregation, CascadeParams, ModelConfig};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::real::Real;

pub const MAGIC: &[u8; 4] = b"MBCG";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

/// Writes `params` as `f32`, whatever their in-memory precision.
pub fn write_checkpoint<T: Real, W: Write>(mut w: W, config: &ModelConfig, params: &CascadeParams<T>) -> Result<()> {
    config.validate()?;
    params.check_shapes(config, params.num_users(), params.num_items())?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    put_u32(&mut w, params.num_users())?;
    put_u32(&mut w, params.num_items())?;
    put_u32(&mut w, config.dim)?;
    put_u32(&mut w, config.num_behaviors())?;
    w.write_all(&config.aggregation.code().to_le_bytes())?;
    put_u32(&mut w, config.transform as usize)?;
    for &l in &config.layers {
        put_u32(&mut w, l)?;
    }
    for tensor in params.tensors() {
        for &x in tensor.as_slice() {
            let x = x.to_f32().unwrap_or(f32::NAN);
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn checkpoint_bytes<T: Real>(config: &ModelConfig, params: &CascadeParams<T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, config, params)?;
    Ok(buf)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
        Ok(u32::from_le_bytes(b))
    }

    fn mat(&mut self, rows: usize, cols: usize, what: &str) -> Result<Mat<f32>> {
        let mut bytes = vec![0u8; rows * cols * 4];
        self.inner
            .read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Mat::from_vec(rows, cols, data)
    }
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<(ModelConfig, CascadeParams<f32>)> {
    let mut r = Reader { inner: reader };
    let mut magic = [0u8; 4];
    r.inner
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("missing magic bytes".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let m = r.u32("M")? as usize;
    let n = r.u32("N")? as usize;
    let d = r.u32("d")? as usize;
    let b = r.u32("B")? as usize;
    let agg_code = r.u32("aggregation")?;
    let aggregation = Aggregation::from_code(agg_code)
        .ok_or_else(|| Error::Checkpoint(format!("unknown aggregation code {agg_code}")))?;
    let transform = match r.u32("transform flag")? {
        0 => false,
        1 => true,
        other => return Err(Error::Checkpoint(format!("bad transform flag {other}"))),
    };
    if b == 0 || d == 0 {
        return Err(Error::Checkpoint("empty chain or zero dimension".into()));
    }
    let layers = (0..b)
        .map(|k| r.u32(&format!("L_{}", k + 1)).map(|l| l as usize))
        .collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        dim: d,
        layers,
        transform,
        aggregation,
    };

    let user_emb = r.mat(m, d, "P")?;
    let item_emb = r.mat(n, d, "Q")?;
    let t = config.num_transforms();
    let user_transforms = (0..t)
        .map(|k| r.mat(d, d, &format!("W_u^{}", k + 1)))
        .collect::<Result<Vec<_>>>()?;
    let item_transforms = (0..t)
        .map(|k| r.mat(d, d, &format!("W_i^{}", k + 1)))
        .collect::<Result<Vec<_>>>()?;

    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((
        config,
        CascadeParams {
            user_emb,
            item_emb,
            user_transforms,
            item_transforms,
        },
    ))
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, config: &ModelConfig, params: &CascadeParams<T>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), config, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, CascadeParams<f32>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
