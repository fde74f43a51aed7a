//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `SPNCKPT1`, then for each named tensor: name
//! length, name bytes, rank, each extent (all lengths as u64 little-endian),
//! then the values as f64 little-endian.

use std::io::{self, Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SPNCKPT1";

// guards against absurd allocations from corrupt files
const MAX_NAME_LEN: u64 = 1 << 16;
const MAX_RANK: u64 = 16;

pub fn write_checkpoint<W: Write>(mut out: W, params: &[(String, Tensor)]) -> Result<()> {
    out.write_all(MAGIC)?;
    for (name, t) in params {
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &e in t.shape() {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Reads until end of input. A truncated record is an error.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::input("not a checkpoint file (bad magic)"));
    }
    let mut cur = io::Cursor::new(&bytes[8..]);
    let total = bytes.len() as u64 - 8;
    let truncated = |e: io::Error| Error::input(format!("truncated checkpoint: {e}"));
    let mut params = Vec::new();
    while cur.position() < total {
        let name_len = read_u64(&mut cur).map_err(truncated)?;
        if name_len > MAX_NAME_LEN {
            return Err(Error::input("corrupt checkpoint: name too long"));
        }
        let mut name = vec![0u8; name_len as usize];
        cur.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::input("corrupt checkpoint: name is not UTF-8"))?;
        let rank = read_u64(&mut cur).map_err(truncated)?;
        if rank > MAX_RANK {
            return Err(Error::input("corrupt checkpoint: rank too large"));
        }
        let shape = (0..rank)
            .map(|_| read_u64(&mut cur).map(|e| e as usize))
            .collect::<io::Result<Vec<_>>>()
            .map_err(truncated)?;
        let count: usize = shape.iter().product();
        if (count as u64).saturating_mul(8) > total - cur.position() {
            return Err(Error::input(format!("truncated checkpoint in tensor '{name}'")));
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let mut buf = [0u8; 8];
            cur.read_exact(&mut buf).map_err(truncated)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.push((name, Tensor::new(shape, data)?));
    }
    Ok(params)
}
