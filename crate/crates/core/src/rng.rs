//! Seed derivation. Every stochastic step draws from a ChaCha stream whose
//! seed is a stable hash of the caller's seed and a tuple of labels, so
//! results do not depend on call order, thread scheduling or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a base seed and a label path.
pub fn derive_seed(base: u64, labels: &[&dyn AsBytes]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for label in labels {
        let bytes = label.as_bytes_vec();
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

pub fn rng_for(base: u64, labels: &[&dyn AsBytes]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, labels))
}

pub trait AsBytes {
    fn as_bytes_vec(&self) -> Vec<u8>;
}

impl AsBytes for str {
    fn as_bytes_vec(&self) -> Vec<u8> {
        self.as_bytes().to_vec()
    }
}

impl AsBytes for String {
    fn as_bytes_vec(&self) -> Vec<u8> {
        self.as_bytes().to_vec()
    }
}

impl AsBytes for &str {
    fn as_bytes_vec(&self) -> Vec<u8> {
        self.as_bytes().to_vec()
    }
}

macro_rules! int_as_bytes {
    ($($t:ty),*) => {$(
        impl AsBytes for $t {
            fn as_bytes_vec(&self) -> Vec<u8> {
                (*self as u64).to_le_bytes().to_vec()
            }
        }
    )*};
}

int_as_bytes!(u8, u16, u32, u64, usize);
