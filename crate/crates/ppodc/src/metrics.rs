//! Operation counters shared across sessions of one party.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Counters for one party. Exponentiations are the unit the protocol's cost
/// model is phrased in; multiplications are not tracked.
#[derive(Debug, Default)]
pub struct PartyMetrics {
    /// Exponentiations performed while a protocol phase was running.
    pub exps_online: AtomicU64,
    /// Exponentiations performed in offline phases (pool precomputation).
    pub exps_offline: AtomicU64,
    /// Encryptions served from a randomness pool.
    pub pool_hits: AtomicU64,
    /// Encryptions that fell back to an online exponentiation because the
    /// pool was exhausted.
    pub pool_misses: AtomicU64,
    /// Decryptions performed (also counted in `exps_online`).
    pub decrypts: AtomicU64,
    pub msgs_sent: AtomicU64,
    pub msgs_recvd: AtomicU64,
    pub bytes_sent: AtomicU64,
    pub bytes_recvd: AtomicU64,
}

impl PartyMetrics {
    pub fn shared() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn add_online_exp(&self, n: u64) {
        self.exps_online.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_offline_exp(&self, n: u64) {
        self.exps_offline.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_decrypt(&self) {
        self.decrypts.fetch_add(1, Ordering::Relaxed);
        self.exps_online.fetch_add(1, Ordering::Relaxed);
    }

    pub fn add_pool_hit(&self) {
        self.pool_hits.fetch_add(1, Ordering::Relaxed);
    }

    pub fn add_pool_miss(&self) {
        self.pool_misses.fetch_add(1, Ordering::Relaxed);
        self.exps_online.fetch_add(1, Ordering::Relaxed);
    }

    pub fn add_sent(&self, bytes: u64) {
        self.msgs_sent.fetch_add(1, Ordering::Relaxed);
        self.bytes_sent.fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn add_recvd(&self, bytes: u64) {
        self.msgs_recvd.fetch_add(1, Ordering::Relaxed);
        self.bytes_recvd.fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> Counters {
        Counters {
            exps_online: self.exps_online.load(Ordering::Relaxed),
            exps_offline: self.exps_offline.load(Ordering::Relaxed),
            pool_hits: self.pool_hits.load(Ordering::Relaxed),
            pool_misses: self.pool_misses.load(Ordering::Relaxed),
            decrypts: self.decrypts.load(Ordering::Relaxed),
            msgs_sent: self.msgs_sent.load(Ordering::Relaxed),
            msgs_recvd: self.msgs_recvd.load(Ordering::Relaxed),
            bytes_sent: self.bytes_sent.load(Ordering::Relaxed),
            bytes_recvd: self.bytes_recvd.load(Ordering::Relaxed),
        }
    }
}

/// A point-in-time reading; subtract two to get per-phase deltas.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub exps_online: u64,
    pub exps_offline: u64,
    pub pool_hits: u64,
    pub pool_misses: u64,
    pub decrypts: u64,
    pub msgs_sent: u64,
    pub msgs_recvd: u64,
    pub bytes_sent: u64,
    pub bytes_recvd: u64,
}

impl Counters {
    pub fn delta_since(&self, earlier: &Counters) -> Counters {
        Counters {
            exps_online: self.exps_online - earlier.exps_online,
            exps_offline: self.exps_offline - earlier.exps_offline,
            pool_hits: self.pool_hits - earlier.pool_hits,
            pool_misses: self.pool_misses - earlier.pool_misses,
            decrypts: self.decrypts - earlier.decrypts,
            msgs_sent: self.msgs_sent - earlier.msgs_sent,
            msgs_recvd: self.msgs_recvd - earlier.msgs_recvd,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_recvd: self.bytes_recvd - earlier.bytes_recvd,
        }
    }
}
