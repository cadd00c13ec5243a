//! Two-cloud privacy-preserving outsourced k-means clustering runtime.
//!
//! The pieces, bottom up:
//!
//! * [`transport`] — length-prefixed binary frames over an ordered duplex
//!   channel (in-process for tests and all-in-one runs, TCP for role
//!   deployment) with stream multiplexing for concurrent sessions;
//! * [`primitives`] — the two-party sub-protocols between C1 (ciphertext
//!   holder) and C2 (key holder): secure multiplication, squared distances,
//!   LSB extraction, comparison, minimum, and k-ary minimum selection;
//! * [`protocol`] — the three-stage clustering protocol: share-based
//!   outsourcing, encrypted assignment/update, secure termination testing,
//!   and the masked reveal to users;
//! * [`ingest`], [`keyfile`], [`bench`], [`report`] — dataset preparation,
//!   key serialization, the benchmark harness, and run reports backing the
//!   `ppodc` command-line tool.

pub mod bench;
pub mod error;
pub mod ingest;
pub mod keyfile;
pub mod metrics;
pub mod primitives;
pub mod protocol;
pub mod report;
pub mod transport;

pub use error::ProtocolError;
