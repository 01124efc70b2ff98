//! Binary file formats.
//!
//! `VQLF` holds a [`QuantizedTensor`]; `VQTN` holds a dense `f32` tensor.
//! Both are little-endian throughout.
//!
//! `VQLF` layout:
//!
//! ```text
//! magic "VQLF" | version u16 | vector_size u16 | log2_entries u16 | residuals u16
//! sharing kind u8 (0 whole, 1 tile, 2 channel group) | reserved u8 | a u32 | b u32
//! ndim u16 | dims u64 * ndim
//! codebook_count u32 | per codebook: level u16, region u32, entry_count u32,
//!                      entry_count * vector_size f32 (row-major)
//! code_count u64 | packed code bytes
//! ```
//!
//! For tiles `a, b` are the tile rows and columns; for channel groups `a` is
//! the group width.

use std::io::{Read, Write};

use super::{Codebook, CodecError, PackedCodes, QuantizedTensor, Sharing, VQConfig};
use crate::Tensor;

pub const VQLF_MAGIC: &[u8; 4] = b"VQLF";
pub const VQTN_MAGIC: &[u8; 4] = b"VQTN";
pub const FORMAT_VERSION: u16 = 1;

pub fn write_quantized<W: Write>(w: &mut W, q: &QuantizedTensor) -> Result<(), CodecError> {
    let c = q.config();
    w.write_all(VQLF_MAGIC)?;
    put_u16(w, FORMAT_VERSION)?;
    put_u16(w, c.vector_size as u16)?;
    put_u16(w, c.log2_entries as u16)?;
    put_u16(w, to_u16(c.residuals, "residuals")?)?;
    let (kind, a, b) = match c.sharing {
        Sharing::WholeTensor => (0u8, 0, 0),
        Sharing::PerTile { rows, cols } => (1, rows, cols),
        Sharing::ChannelGroup { group_width } => (2, group_width, 0),
    };
    w.write_all(&[kind, 0])?;
    put_u32(w, to_u32(a, "sharing")?)?;
    put_u32(w, to_u32(b, "sharing")?)?;
    put_u16(w, to_u16(q.shape().len(), "ndim")?)?;
    for &d in q.shape() {
        put_u64(w, d as u64)?;
    }
    put_u32(w, to_u32(q.codebooks().len(), "codebook count")?)?;
    for cb in q.codebooks() {
        put_u16(w, to_u16(cb.residual_level, "level")?)?;
        put_u32(w, to_u32(cb.region_id, "region")?)?;
        put_u32(w, to_u32(cb.len(), "entry count")?)?;
        put_f32s(w, cb.values())?;
    }
    put_u64(w, q.code_count() as u64)?;
    w.write_all(q.codes().as_bytes())?;
    Ok(())
}

pub fn read_quantized<R: Read>(r: &mut R) -> Result<QuantizedTensor, CodecError> {
    expect_magic(r, VQLF_MAGIC)?;
    let version = get_u16(r)?;
    if version != FORMAT_VERSION {
        return Err(CodecError::Format(format!("unsupported version {version}")));
    }
    let vector_size = usize::from(get_u16(r)?);
    let log2_entries = u32::from(get_u16(r)?);
    let residuals = usize::from(get_u16(r)?);
    let mut kind = [0u8; 2];
    r.read_exact(&mut kind)?;
    let a = get_u32(r)? as usize;
    let b = get_u32(r)? as usize;
    let sharing = match kind[0] {
        0 => Sharing::WholeTensor,
        1 => Sharing::PerTile { rows: a, cols: b },
        2 => Sharing::ChannelGroup { group_width: a },
        k => return Err(CodecError::Format(format!("unknown sharing kind {k}"))),
    };
    let config = VQConfig::new(vector_size, log2_entries, residuals, sharing)?;
    let shape = get_shape(r)?;
    let count = get_u32(r)? as usize;
    let mut codebooks = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let level = usize::from(get_u16(r)?);
        let region = get_u32(r)? as usize;
        let entries = get_u32(r)? as usize;
        if entries == 0 || entries > config.entries() {
            return Err(CodecError::Format(format!(
                "codebook with {entries} entries under log2_entries {log2_entries}"
            )));
        }
        let values = get_f32s(r, entries * vector_size)?;
        codebooks.push(Codebook::new(values, vector_size, level, region)?);
    }
    let code_count = get_u64(r)? as usize;
    let nbytes = (code_count * log2_entries as usize).div_ceil(8);
    let mut bytes = Vec::new();
    r.take(nbytes as u64).read_to_end(&mut bytes)?;
    if bytes.len() != nbytes {
        return Err(CodecError::Format("truncated code stream".into()));
    }
    let codes = PackedCodes::from_bytes(log2_entries, code_count, bytes)?;
    QuantizedTensor::from_parts(codes, shape, config, codebooks)
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<(), CodecError> {
    w.write_all(VQTN_MAGIC)?;
    put_u16(w, FORMAT_VERSION)?;
    put_u16(w, to_u16(t.shape().len(), "ndim")?)?;
    for &d in t.shape() {
        put_u64(w, d as u64)?;
    }
    put_f32s(w, t.data())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, CodecError> {
    expect_magic(r, VQTN_MAGIC)?;
    let version = get_u16(r)?;
    if version != FORMAT_VERSION {
        return Err(CodecError::Format(format!("unsupported version {version}")));
    }
    let shape = get_shape(r)?;
    let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let n = n.ok_or_else(|| CodecError::Format("tensor size overflows".into()))?;
    let data = get_f32s(r, n)?;
    Tensor::new(shape, data)
}

pub fn save_quantized(path: &std::path::Path, q: &QuantizedTensor) -> Result<(), CodecError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_quantized(&mut w, q)?;
    w.flush()?;
    Ok(())
}

pub fn load_quantized(path: &std::path::Path) -> Result<QuantizedTensor, CodecError> {
    read_quantized(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save_tensor(path: &std::path::Path, t: &Tensor) -> Result<(), CodecError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &std::path::Path) -> Result<Tensor, CodecError> {
    read_tensor(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(), CodecError> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(CodecError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn get_shape<R: Read>(r: &mut R) -> Result<Vec<usize>, CodecError> {
    let ndim = usize::from(get_u16(r)?);
    if ndim == 0 {
        return Err(CodecError::Format("zero-dimensional tensor".into()));
    }
    (0..ndim).map(|_| Ok(get_u64(r)? as usize)).collect()
}

fn to_u16(v: usize, what: &str) -> Result<u16, CodecError> {
    u16::try_from(v).map_err(|_| CodecError::Format(format!("{what} {v} exceeds u16")))
}

fn to_u32(v: usize, what: &str) -> Result<u32, CodecError> {
    u32::try_from(v).map_err(|_| CodecError::Format(format!("{what} {v} exceeds u32")))
}

fn put_u16<W: Write>(w: &mut W, v: u16) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<(), CodecError> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn get_u16<R: Read>(r: &mut R) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn get_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, CodecError> {
    let mut bytes = Vec::new();
    r.take((n as u64).saturating_mul(4))
        .read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(CodecError::Format("truncated float block".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}
