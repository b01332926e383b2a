use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// What a derived random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Scenario = 1,
    Sensing = 2,
    ChannelKey = 3,
    Training = 4,
    Qkd = 5,
    Faults = 6,
}

/// Derives an independent stream from the master seed and a path
/// `plant -> robot -> session -> purpose -> extra`.
pub fn stream(master: u64, plant: u32, robot: u32, session: u32, purpose: Purpose, extra: u32) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"nppsim/seed/v1");
    h.update(master.to_le_bytes());
    h.update(plant.to_le_bytes());
    h.update(robot.to_le_bytes());
    h.update(session.to_le_bytes());
    h.update((purpose as u32).to_le_bytes());
    h.update(extra.to_le_bytes());
    let digest = h.finalize();
    ChaCha8Rng::from_seed(digest[..32].try_into().unwrap())
}
