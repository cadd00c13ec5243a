//! Algorithmic core for privacy-preserving outsourced k-means clustering.
//!
//! This crate is `no_std` (with `alloc`) and holds the two pure layers the
//! protocol runtime is built on:
//!
//! * [`paillier`] — the Paillier cryptosystem with the `g = N + 1` fast
//!   encryption path, homomorphic operators, and offline randomness pools;
//! * [`transforms`] — the plaintext mathematics: cluster centers, scaling
//!   factors, the order-preserving Euclidean distance, the integer-valued
//!   termination test, and an exact-rational Lloyd's k-means used as the
//!   correctness oracle for the encrypted protocol.
//!
//! Networking, sessions, and the two-party sub-protocols live in the `ppodc`
//! companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod paillier;
pub mod transforms;

pub use paillier::{Ciphertext, PaillierError, PublicKey, RandomnessPool, SecretKey};
pub use transforms::{PlainCluster, PlainRecord, Rational, TerminationParams, TransformError};
