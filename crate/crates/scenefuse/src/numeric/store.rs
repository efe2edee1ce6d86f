//! Flat binary container for named parameter tensors.
//!
//! Layout: magic `OMSK1`, version u32 LE, then per parameter:
//! name length u32 LE, name bytes (UTF-8), rank u32 LE, extents (u64 LE
//! each), values (f64 LE each). Round-trips bit-exactly.

use std::fs;
use std::io::Read;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"OMSK1";
const VERSION: u32 = 1;

pub fn save_params(path: &Path, params: &[(String, &Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in params {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let parse = |msg: &str| Error::Parse { path: path.to_path_buf(), message: msg.to_string() };

    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(parse("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    if version != VERSION {
        return Err(parse(&format!("unsupported version {version}")));
    }
    let mut pos = 9;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(parse("truncated record"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| parse("name is not utf-8"))?;
        let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
