//! Per-replicate seed derivation.
//!
//! A derived seed is the first 8 bytes (big-endian) of
//! `SHA-256("netcv/v1|master=<u64>|cell=<label>|rep=<usize>|method=<id>")`,
//! where `<label>` is the cell label (`n120-k3-equal-b0.1-r4`). The format is
//! part of the record schema and must not change within `v1`.

use netcv_core::netgen::GeneratorCell;
use sha2::{Digest, Sha256};

/// Stream id for the shared network of a replicate.
pub const NETWORK: &str = "network";
/// Stream id for the shared full-data fits of a replicate.
pub const FITS: &str = "fits";

pub fn derive_seed(master: u64, cell: &GeneratorCell, replicate: usize, method: &str) -> u64 {
    derive_seed_from_label(master, &cell.label(), replicate, method)
}

pub fn derive_seed_from_label(master: u64, cell: &str, replicate: usize, method: &str) -> u64 {
    let text = format!("netcv/v1|master={master}|cell={cell}|rep={replicate}|method={method}");
    let digest = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}
