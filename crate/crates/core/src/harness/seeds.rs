//! One master seed split into named, independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ENV: &str = "env";
pub const INIT: &str = "init";
pub const DATA: &str = "data";
pub const PRETRAIN: &str = "pretrain";
pub const BATCH: &str = "batch";
pub const INTERACT: &str = "interact";
pub const CANDIDATE: &str = "candidate";
pub const FLOW: &str = "flow";
pub const KL_PATH: &str = "kl-path";
pub const EVAL: &str = "eval";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    master: u64,
}

fn fnv1a(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream `name`: same key as the master seed, its own ChaCha stream id.
    pub fn rng(&self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(fnv1a(name));
        rng
    }

    /// A plain integer seed for components that take one.
    pub fn derive(&self, name: &str) -> u64 {
        use rand::RngCore;
        self.rng(name).next_u64()
    }
}
