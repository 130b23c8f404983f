//! Tensor archives: a text manifest next to one raw little-endian payload.
//!
//! ```text
//! dxformer-archive
//! version 1
//! endianness little
//! payload model.bin 12345
//! meta <key> <value...>
//! tensor <dtype> <d0,d1,..> <offset> <nbytes> <name>
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Scalar, Tensor};

const MAGIC: &str = "dxformer-archive";
const VERSION: u32 = 1;

pub fn manifest_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.manifest"))
}

pub fn payload_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.bin"))
}

fn bad(path: &Path, line: usize, what: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}:{}: {what}", path.display(), line + 1))
}

/// Writes `meta` and every tensor of `store` as `<stem>.manifest` + `<stem>.bin` in `dir`.
pub fn save_archive<T: Scalar>(
    dir: &Path,
    stem: &str,
    meta: &[(String, String)],
    store: &ParamStore<T>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut payload = Vec::with_capacity(store.numel() * T::BYTES);
    let mut lines = vec![
        MAGIC.to_string(),
        format!("version {VERSION}"),
        "endianness little".to_string(),
    ];
    let mut tensor_lines = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        let offset = payload.len();
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        let dims: Vec<String> = t.dims().iter().map(|d| d.to_string()).collect();
        tensor_lines.push(format!(
            "tensor {} {} {offset} {} {name}",
            T::DTYPE,
            dims.join(","),
            payload.len() - offset
        ));
    }
    lines.push(format!("payload {stem}.bin {}", payload.len()));
    for (k, v) in meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("meta entry '{k}' cannot be stored on one line")));
        }
        lines.push(format!("meta {k} {v}"));
    }
    lines.extend(tensor_lines);

    let bin = payload_path(dir, stem);
    fs::write(&bin, &payload).map_err(|e| Error::io(&bin, e))?;
    let manifest = manifest_path(dir, stem);
    let mut f = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    for line in lines {
        writeln!(f, "{line}").map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(())
}

fn decode<T: Scalar>(dtype: &str, bytes: &[u8]) -> Result<Vec<T>> {
    match dtype {
        "f64" => Ok(bytes.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect()),
        "f32" => Ok(bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::read_le(c) as f64))
            .collect()),
        other => Err(Error::Checkpoint(format!("unsupported dtype '{other}'"))),
    }
}

/// Reads an archive written by [`save_archive`]. Tensors stored in another
/// precision are converted to `T`.
pub fn load_archive<T: Scalar>(dir: &Path, stem: &str) -> Result<(Vec<(String, String)>, ParamStore<T>)> {
    let manifest = manifest_path(dir, stem);
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(bad(&manifest, 0, "not a dxformer archive")),
    }
    let mut payload: Option<Vec<u8>> = None;
    let mut meta = Vec::new();
    let mut store = ParamStore::new();
    for (no, line) in lines {
        let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
        match kind {
            "version" => {
                if rest.trim() != VERSION.to_string() {
                    return Err(bad(&manifest, no, format!("unsupported version '{rest}'")));
                }
            }
            "endianness" => {
                if rest.trim() != "little" {
                    return Err(bad(&manifest, no, format!("unsupported endianness '{rest}'")));
                }
            }
            "payload" => {
                let mut it = rest.split(' ');
                let (Some(file), Some(len)) = (it.next(), it.next()) else {
                    return Err(bad(&manifest, no, "malformed payload line"));
                };
                let path = dir.join(file);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                if len.parse::<usize>().ok() != Some(bytes.len()) {
                    return Err(bad(
                        &manifest,
                        no,
                        format!("payload holds {} bytes, manifest says {len}", bytes.len()),
                    ));
                }
                payload = Some(bytes);
            }
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.push((k.to_string(), v.to_string()));
            }
            "tensor" => {
                let bytes = payload
                    .as_ref()
                    .ok_or_else(|| bad(&manifest, no, "tensor listed before payload"))?;
                let parts: Vec<&str> = rest.splitn(5, ' ').collect();
                let [dtype, dims, offset, nbytes, name] = parts[..] else {
                    return Err(bad(&manifest, no, "malformed tensor line"));
                };
                let dims: Vec<usize> = dims
                    .split(',')
                    .map(|d| d.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(&manifest, no, format!("bad dims '{dims}'")))?;
                let (offset, nbytes): (usize, usize) = match (offset.parse(), nbytes.parse()) {
                    (Ok(o), Ok(n)) => (o, n),
                    _ => return Err(bad(&manifest, no, "bad offset or length")),
                };
                let width = match dtype {
                    "f64" => 8,
                    "f32" => 4,
                    other => return Err(bad(&manifest, no, format!("unsupported dtype '{other}'"))),
                };
                let numel: usize = dims.iter().product();
                if nbytes != numel * width || offset + nbytes > bytes.len() {
                    return Err(bad(&manifest, no, format!("tensor '{name}' does not fit the payload")));
                }
                let data = decode::<T>(dtype, &bytes[offset..offset + nbytes])?;
                store.insert(name, Tensor::new(dims, data)?)?;
            }
            "" => {}
            other => return Err(bad(&manifest, no, format!("unknown entry '{other}'"))),
        }
    }
    Ok((meta, store))
}
