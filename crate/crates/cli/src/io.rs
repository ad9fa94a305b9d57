use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use txrl_core::{parse_transition_log, Dataset, LogFormat};

/// Bad flag values or combinations; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let file = File::open(path).map_err(txrl_core::Error::from).with_context(|| format!("opening {}", path.display()))?;
    let ds = parse_transition_log(BufReader::new(file), LogFormat::from_path(path))
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(ds)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let file = File::open(path).map_err(txrl_core::Error::from).with_context(|| format!("opening {}", path.display()))?;
    let v = serde_json::from_reader(BufReader::new(file))
        .map_err(txrl_core::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(v)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes)
        .map_err(txrl_core::Error::from)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// Streams into `path` through a buffered writer.
pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> txrl_core::Result<()>) -> anyhow::Result<()> {
    let file = File::create(path).map_err(txrl_core::Error::from).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().map_err(txrl_core::Error::from)?;
    Ok(())
}
