use std::path::Path;

use crate::data::bytes::read_maybe_gz;
use crate::data::Dataset;
use crate::error::{Error, Result};

const RECORD: usize = 1 + 3 * 32 * 32;

/// Decodes CIFAR-10 binary records (label byte, then R, G, B planes).
pub fn parse_cifar10(bytes: &[u8], split: &str) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(Error::Empty("CIFAR-10 file has no records".into()));
    }
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::format(
            "CIFAR-10 binary",
            format!("length {} is not a multiple of {RECORD}", bytes.len()),
        ));
    }
    let mut pixels = Vec::with_capacity(bytes.len());
    let mut labels = Vec::with_capacity(bytes.len() / RECORD);
    for rec in bytes.chunks_exact(RECORD) {
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(pixels, [3, 32, 32], labels, 10, split)
}

/// Loads one CIFAR-10 batch file, optionally gzip'd.
pub fn load_cifar10_bin(path: &Path) -> Result<Dataset> {
    let name = path.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let stem = name.trim_end_matches(".gz").trim_end_matches(".bin");
    parse_cifar10(&read_maybe_gz(path)?, &format!("cifar10-{stem}"))
}
