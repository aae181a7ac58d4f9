//! Per-stage seeds derived from the master seed.
//!
//! `derive_seed(master, stage, entity, method)` is the first eight bytes,
//! little-endian, of SHA-256 over
//! `"divsynth-seed\0" ‖ master (8 bytes LE) ‖ stage ‖ "\0" ‖ entity ‖ "\0" ‖ method`,
//! where `method` is `-` for stages shared by all methods. Any stage can be
//! replayed from the master seed and this rule alone.

use divsynth_core::corpus::Method;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, stage: &str, entity: &str, method: Option<Method>) -> u64 {
    let mut h = Sha256::new();
    h.update(b"divsynth-seed\0");
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    h.update(b"\0");
    h.update(entity.as_bytes());
    h.update(b"\0");
    h.update(method.map_or("-", Method::as_str).as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Stage names used by the experiment driver.
pub mod stage {
    pub const SPLIT: &str = "split";
    pub const WORKING: &str = "working";
    pub const BASELINE: &str = "baseline";
    pub const REDUCE: &str = "reduce";
    pub const CLUSTER: &str = "cluster";
    pub const RANDOM_REPS: &str = "random-reps";
    pub const PROMPTS: &str = "prompts";
    pub const GENERATE: &str = "generate";
    pub const REALWORLD_POOL: &str = "realworld-pool";
    pub const CURVE: &str = "curve";
    pub const TURING: &str = "turing";
}
