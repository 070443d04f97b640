//! Dataset loaders and file formats.

mod bytes;
mod cifar;
mod ckpt;
mod dataset;
mod idx;
mod netpbm;
mod tnsr;

pub use cifar::{load_cifar10_bin, parse_cifar10};
pub use ckpt::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use dataset::{filter_correct, Dataset};
pub use idx::{encode_idx_images, encode_idx_labels, load_mnist_dir, load_mnist_idx, parse_idx_images, parse_idx_labels};
pub use netpbm::{decode_pnm, encode_pnm, read_pnm, write_pnm};
pub use tnsr::{decode_tnsr, encode_tnsr, read_tnsr, write_tnsr};
