//! Parameter checkpoint: a text manifest of names and shapes plus a raw
//! little-endian f64 blob in manifest order. Round-trips are bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndops::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "params.bin";

/// Write `(name, tensor)` pairs under `dir` (created if needed).
pub fn save_checkpoint<'a>(
    dir: &Path,
    params: impl Iterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut blob: Vec<u8> = Vec::new();
    for (name, tensor) in params {
        if name.contains(char::is_whitespace) {
            return Err(Error::config(format!("parameter name {name:?} contains whitespace")));
        }
        manifest.push_str(name);
        for d in tensor.shape() {
            manifest.push(' ');
            manifest.push_str(&d.to_string());
        }
        manifest.push('\n');
        for v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    let mut f = fs::File::create(dir.join(BLOB_FILE))?;
    f.write_all(&blob)?;
    Ok(())
}

/// Read a checkpoint back as `(name, tensor)` pairs in manifest order.
pub fn load_checkpoint(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut blob = Vec::new();
    fs::File::open(dir.join(BLOB_FILE))?.read_to_end(&mut blob)?;
    let mut out = Vec::new();
    let mut offset = 0usize;
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::Parse(format!("manifest line {}: missing name", lineno + 1)))?
            .to_string();
        let shape: Vec<usize> = parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("manifest line {}: bad dim {p:?}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let bytes = n * 8;
        if offset + bytes > blob.len() {
            return Err(Error::Parse(format!(
                "blob too short for {name}: need {bytes} bytes at offset {offset}"
            )));
        }
        let data: Vec<f64> = blob[offset..offset + bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += bytes;
        // bypass the finite check: a checkpoint must reproduce stored bits
        let mut t = Tensor::zeros(&shape);
        t.data_mut().copy_from_slice(&data);
        out.push((name, t));
    }
    if offset != blob.len() {
        return Err(Error::Parse(format!(
            "blob has {} trailing bytes beyond manifest",
            blob.len() - offset
        )));
    }
    Ok(out)
}
