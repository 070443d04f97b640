use std::path::{Path, PathBuf};

use crate::data::bytes::{read_maybe_gz, Reader};
use crate::data::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn magic(r: &mut Reader<'_>, expected: u32, what: &str) -> Result<()> {
    let found = r.u32_be()?;
    if found != expected {
        return Err(Error::BadMagic {
            what: what.to_string(),
            expected: format!("{expected:#010x}"),
            found: format!("{found:#010x}"),
        });
    }
    Ok(())
}

/// Parses IDX image bytes into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = Reader::new(bytes, "IDX images");
    magic(&mut r, IMAGES_MAGIC, "IDX images")?;
    let n = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let pixels = r.take(n * rows * cols)?.to_vec();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader::new(bytes, "IDX labels");
    magic(&mut r, LABELS_MAGIC, "IDX labels")?;
    let n = r.u32_be()? as usize;
    Ok(r.take(n)?.to_vec())
}

/// Encodes images in IDX form; the inverse of [`parse_idx_images`].
pub fn encode_idx_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an MNIST-style image/label file pair (optionally gzip'd) into `[B, 1, rows, cols]`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let split = images_path
        .file_name()
        .map_or_else(|| "mnist".to_string(), |f| f.to_string_lossy().into_owned());
    Dataset::new(
        pixels.iter().map(|&b| b as f32 / 255.0).collect(),
        [1, rows, cols],
        labels.iter().map(|&l| l as usize).collect(),
        10,
        split,
    )
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{stem}[.gz] not found in {}", dir.display()),
    )))
}

/// Loads the train (`t10k` = false) or test split from a directory holding
/// the standard MNIST file names.
pub fn load_mnist_dir(dir: &Path, test: bool) -> Result<Dataset> {
    let prefix = if test { "t10k" } else { "train" };
    let mut d = load_mnist_idx(
        &find(dir, &format!("{prefix}-images-idx3-ubyte"))?,
        &find(dir, &format!("{prefix}-labels-idx1-ubyte"))?,
    )?;
    d.split = format!("mnist-{}", if test { "test" } else { "train" });
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn fixture(dir: &Path, n_images: usize, n_labels: usize) -> (PathBuf, PathBuf) {
        let pixels: Vec<u8> = (0..n_images * 784).map(|i| (i % 256) as u8).collect();
        let labels: Vec<u8> = (0..n_labels).map(|i| (i % 10) as u8).collect();
        let (ip, lp) = (dir.join("img"), dir.join("lbl"));
        fs::write(&ip, encode_idx_images(&pixels, n_images, 28, 28)).unwrap();
        fs::write(&lp, encode_idx_labels(&labels)).unwrap();
        (ip, lp)
    }

    #[test]
    fn four_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 4, 4);
        let d = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(d.images().unwrap().shape(), &[4, 1, 28, 28]);
        assert_eq!(d.labels(), &[0, 1, 2, 3]);
        assert_eq!(d.pixels()[255], 1.0);
        assert_eq!(d.pixels()[0], 0.0);
        assert_eq!(load_mnist_idx(&ip, &lp).unwrap(), d);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 4, 3);
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(Error::CountMismatch { images: 4, labels: 3 })));
        assert!(matches!(load_mnist_idx(&lp, &lp), Err(Error::BadMagic { .. })));
        let mut bytes = fs::read(&ip).unwrap();
        bytes.truncate(100);
        fs::write(&ip, bytes).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(Error::Truncated { .. })));
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 2, 2);
        let gz = dir.path().join("img.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&fs::read(&ip).unwrap()).unwrap();
        fs::write(&gz, enc.finish().unwrap()).unwrap();
        assert_eq!(load_mnist_idx(&gz, &lp).unwrap().pixels(), load_mnist_idx(&ip, &lp).unwrap().pixels());
    }
}
