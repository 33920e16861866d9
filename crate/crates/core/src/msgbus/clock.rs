use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

/// Source of envelope timestamps.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Milliseconds of tokio time elapsed since construction, offset by `base_ms`.
/// Under a paused runtime this is fully virtual and reproducible.
#[derive(Debug, Clone, Copy)]
pub struct VirtualClock {
    origin: tokio::time::Instant,
    base_ms: u64,
}

impl VirtualClock {
    pub fn new(base_ms: u64) -> Self {
        Self {
            origin: tokio::time::Instant::now(),
            base_ms,
        }
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> u64 {
        self.base_ms + self.origin.elapsed().as_millis() as u64
    }
}

/// Message id generator: random v4 ids, or a seeded stream for replayable runs.
#[allow(clippy::large_enum_variant)]
pub enum IdSource {
    Random,
    Seeded(Mutex<ChaCha8Rng>),
}

impl IdSource {
    pub fn seeded(seed: u64) -> Self {
        IdSource::Seeded(Mutex::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn next_id(&self) -> Uuid {
        match self {
            IdSource::Random => Uuid::new_v4(),
            IdSource::Seeded(rng) => {
                let mut bytes = [0u8; 16];
                rng.lock().fill_bytes(&mut bytes);
                uuid::Builder::from_random_bytes(bytes).into_uuid()
            }
        }
    }
}
