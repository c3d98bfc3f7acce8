use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "HGCKPT 1";

/// Writes a text manifest, a blank line, then every parameter as
/// little-endian `f64` in manifest order.
pub fn save_checkpoint(path: &Path, network: &str, store: &ParamStore) -> Result<()> {
    if network.is_empty() || network.contains(char::is_whitespace) {
        return Err(Error::Checkpoint(format!("invalid network name `{network}`")));
    }
    let mut manifest = format!("{MAGIC}\nnetwork {network}\nstep {}\n", store.step);
    let mut payload = Vec::with_capacity(store.num_values() * 8);
    for id in store.ids() {
        let name = store.name(id);
        if name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("parameter name `{name}` contains whitespace")));
        }
        let t = store.value(id);
        manifest.push_str(&format!("param {name} {} {} f64\n", t.rows(), t.cols()));
        for x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    manifest.push('\n');
    let mut file = fs::File::create(path)?;
    file.write_all(manifest.as_bytes())?;
    file.write_all(&payload)?;
    Ok(())
}

/// Reads a checkpoint, returning the network name and its parameters.
pub fn load_checkpoint(path: &Path) -> Result<(String, ParamStore)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Checkpoint("manifest terminator not found".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
    let mut payload = &bytes[split + 2..];
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let network = lines
        .next()
        .and_then(|l| l.strip_prefix("network "))
        .ok_or_else(|| Error::Checkpoint("missing network line".into()))?
        .to_string();
    let step: u64 = lines
        .next()
        .and_then(|l| l.strip_prefix("step "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint("missing step line".into()))?;
    let mut store = ParamStore::new();
    for line in lines {
        let f: Vec<&str> = line.split(' ').collect();
        let (name, rows, cols) = match f.as_slice() {
            ["param", name, r, c, "f64"] => {
                let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad dimension in `{line}`")));
                (*name, parse(r)?, parse(c)?)
            }
            _ => return Err(Error::Checkpoint(format!("bad manifest line `{line}`"))),
        };
        let n = rows * cols;
        if payload.len() < n * 8 {
            return Err(Error::Checkpoint(format!("payload truncated at `{name}`")));
        }
        let data = payload[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        payload = &payload[n * 8..];
        store.add(name, Tensor::new(rows, cols, data)?)?;
    }
    if !payload.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing payload bytes", payload.len())));
    }
    store.step = step;
    Ok((network, store))
}
