//! Minimal numerical stack: matrices, reverse-mode autodiff, an MLP,
//! Adam, and bit-exact checkpointing. f64 throughout, single threaded,
//! fully deterministic given a seed.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod tape;
pub mod tensor;

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::Checkpoint;
pub use mlp::{Mlp, MlpVars};
pub use tape::{Grads, Tape, Var};
pub use tensor::{attention, Tensor};

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent deterministic RNG stream: the seed and a stream label are
/// hashed together, so e.g. data generation and weight init never share a
/// sequence even under the same run seed.
pub fn seeded_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    <ChaCha8Rng as rand::SeedableRng>::from_seed(key)
}
