//! C2's side of the privacy-preserving primitives: a reactive responder that
//! decrypts masked requests, performs the plaintext step, and replies under
//! fresh encryption.
//!
//! The secret key never leaves this module's state and is never serialized
//! to the channel. Every decrypted value can be recorded in an optional
//! transcript log so tests can assert the leakage shape (masked values only,
//! no raw protocol data).

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ppodc_core::paillier::{
    decrypt, encrypt_with_factor, Ciphertext, PublicKey, RandomnessPool, SecretKey,
};

use crate::error::ProtocolError;
use crate::metrics::PartyMetrics;
use crate::primitives::{ControlCode, ERR_KIND_ABORT, ERR_KIND_INTEGRITY};
use crate::transport::{Frame, MessageType, PayloadReader, PayloadWriter, StreamHandle};

/// What a logged decryption was serving. The masked kinds (Smp, Slsb) must
/// look uniform/statistically masked; SminkEntry is the permuted
/// zero/nonzero pattern; Gamma and ZeroTest are single revealed bits the
/// protocol explicitly discloses; Reveal values are masked cluster sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecryptKind {
    Smp,
    Slsb,
    SminkEntry,
    Gamma,
    ZeroTest,
    Reveal,
}

#[derive(Debug, Clone)]
pub struct LoggedDecrypt {
    pub kind: DecryptKind,
    pub value: BigUint,
}

/// Shared C2 state: key material, the randomness pool, counters, and the
/// optional decryption transcript.
pub struct C2Core {
    pk: PublicKey,
    sk: SecretKey,
    pools_enabled: bool,
    pool: Mutex<RandomnessPool>,
    rng: Mutex<ChaCha20Rng>,
    metrics: Arc<PartyMetrics>,
    decrypt_log: Option<Mutex<Vec<LoggedDecrypt>>>,
}

/// Per-session responder state: the masked-operand cache for transcript
/// reuse, keyed by C1-chosen handles.
#[derive(Default)]
pub struct C2SessionState {
    cache: HashMap<u64, BigUint>,
}

impl C2Core {
    pub fn new(
        sk: SecretKey,
        pools_enabled: bool,
        seed: u64,
        log_decrypts: bool,
        metrics: Arc<PartyMetrics>,
    ) -> Self {
        C2Core {
            pk: sk.public().clone(),
            sk,
            pools_enabled,
            pool: Mutex::new(RandomnessPool::new()),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            metrics,
            decrypt_log: log_decrypts.then(|| Mutex::new(Vec::new())),
        }
    }

    pub fn pk(&self) -> &PublicKey {
        &self.pk
    }

    pub fn metrics(&self) -> &Arc<PartyMetrics> {
        &self.metrics
    }

    pub fn decrypt_log_snapshot(&self) -> Vec<LoggedDecrypt> {
        self.decrypt_log
            .as_ref()
            .map(|l| l.lock().unwrap().clone())
            .unwrap_or_default()
    }

    /// Tops the randomness pool up to at least `target` entries (offline
    /// phase work).
    pub fn fill_pool(&self, target: usize) {
        if !self.pools_enabled {
            return;
        }
        let mut pool = self.pool.lock().unwrap();
        let need = target.saturating_sub(pool.len());
        if need > 0 {
            let mut rng = self.rng.lock().unwrap();
            pool.fill_with_secret(&self.sk, need, &mut *rng);
            self.metrics.add_offline_exp(need as u64);
        }
    }

    /// Decrypts a received ciphertext value, recording it in the transcript
    /// log when enabled.
    pub fn decrypt_logged(
        &self,
        value: BigUint,
        kind: DecryptKind,
    ) -> Result<BigUint, ProtocolError> {
        let ct = Ciphertext::from_value(value, &self.pk);
        let m = decrypt(&self.sk, &ct)?;
        self.metrics.add_decrypt();
        if let Some(log) = &self.decrypt_log {
            log.lock().unwrap().push(LoggedDecrypt { kind, value: m.clone() });
        }
        Ok(m)
    }

    /// Fresh encryption of a reply value, drawing the randomizer from the
    /// pool when enabled (falling back online on exhaustion).
    pub fn encrypt_metered(&self, m: &BigUint) -> Result<Ciphertext, ProtocolError> {
        let factor = if self.pools_enabled {
            match self.pool.lock().unwrap().draw() {
                Some(f) => {
                    self.metrics.add_pool_hit();
                    f
                }
                None => {
                    self.metrics.add_pool_miss();
                    let mut rng = self.rng.lock().unwrap();
                    self.sk.fresh_factor(&mut *rng)
                }
            }
        } else {
            self.metrics.add_online_exp(1);
            let mut rng = self.rng.lock().unwrap();
            self.sk.fresh_factor(&mut *rng)
        };
        Ok(encrypt_with_factor(&self.pk, m, &factor)?)
    }

    /// Handles one primitive request frame. `Ok(None)` means the frame is
    /// not a primitive message and the caller should dispatch it itself.
    pub fn handle_primitive(
        &self,
        frame: &Frame,
        state: &mut C2SessionState,
    ) -> Result<Option<(MessageType, Vec<u8>)>, ProtocolError> {
        match frame.msg_type {
            MessageType::SmpMasked => Ok(Some((
                MessageType::SmpProduct,
                self.handle_smp(&frame.payload, state)?,
            ))),
            MessageType::SlsbMasked => Ok(Some((
                MessageType::SlsbParity,
                self.handle_slsb(&frame.payload)?,
            ))),
            MessageType::SminkPermuted => Ok(Some((
                MessageType::SminkIndicators,
                self.handle_smink(&frame.payload)?,
            ))),
            MessageType::SetcGammaEnc => Ok(Some((
                MessageType::SetcGammaPlain,
                self.handle_gamma(&frame.payload)?,
            ))),
            _ => Ok(None),
        }
    }

    fn read_operand(
        &self,
        r: &mut PayloadReader<'_>,
        state: &mut C2SessionState,
    ) -> Result<BigUint, ProtocolError> {
        match r.get_u8()? {
            super::OPERAND_INLINE => self.decrypt_logged(r.get_uint()?, DecryptKind::Smp),
            super::OPERAND_STORE => {
                let handle = r.get_u64()?;
                let v = self.decrypt_logged(r.get_uint()?, DecryptKind::Smp)?;
                state.cache.insert(handle, v.clone());
                Ok(v)
            }
            super::OPERAND_REF => {
                let handle = r.get_u64()?;
                state.cache.get(&handle).cloned().ok_or_else(|| {
                    ProtocolError::Integrity(format!("unknown operand handle {handle}"))
                })
            }
            other => Err(ProtocolError::Integrity(format!("bad operand mode {other}"))),
        }
    }

    fn handle_smp(
        &self,
        payload: &[u8],
        state: &mut C2SessionState,
    ) -> Result<Vec<u8>, ProtocolError> {
        let mut r = PayloadReader::new(payload);
        let count = r.get_u16()? as usize;
        let n = self.pk.modulus();
        let mut w = PayloadWriter::new();
        w.put_u16(count as u16);
        for _ in 0..count {
            let product = match r.get_u8()? {
                0 => {
                    let a = self.read_operand(&mut r, state)?;
                    let b = self.read_operand(&mut r, state)?;
                    a * b % n
                }
                1 => {
                    let a = self.read_operand(&mut r, state)?;
                    &a * &a % n
                }
                other => {
                    return Err(ProtocolError::Integrity(format!("bad smp job kind {other}")))
                }
            };
            w.put_uint(self.encrypt_metered(&product)?.value());
        }
        r.expect_end()?;
        Ok(w.finish())
    }

    fn handle_slsb(&self, payload: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        let mut r = PayloadReader::new(payload);
        let mode = r.get_u8()?;
        let v = self.decrypt_logged(r.get_uint()?, DecryptKind::Slsb)?;
        r.expect_end()?;
        let parity = BigUint::from(v.bit(0) as u8);
        let mut w = PayloadWriter::new();
        match mode {
            super::SLSB_MODE_PARITY => {
                w.put_uint(self.encrypt_metered(&parity)?.value());
            }
            super::SLSB_MODE_HALVE => {
                let shifted = &v >> 1u32;
                w.put_uint(self.encrypt_metered(&shifted)?.value());
                w.put_uint(self.encrypt_metered(&parity)?.value());
            }
            other => return Err(ProtocolError::Integrity(format!("bad slsb mode {other}"))),
        }
        Ok(w.finish())
    }

    fn handle_smink(&self, payload: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        let mut r = PayloadReader::new(payload);
        let count = r.get_u16()? as usize;
        let mut zeros = 0usize;
        let mut flags = Vec::with_capacity(count);
        for _ in 0..count {
            let v = self.decrypt_logged(r.get_uint()?, DecryptKind::SminkEntry)?;
            let is_zero = v.is_zero();
            zeros += is_zero as usize;
            flags.push(is_zero);
        }
        r.expect_end()?;
        if zeros != 1 {
            return Err(ProtocolError::Integrity(format!(
                "smin_k expected exactly one zero entry, saw {zeros}"
            )));
        }
        let mut w = PayloadWriter::new();
        w.put_u16(count as u16);
        for is_zero in flags {
            let bit = if is_zero { BigUint::one() } else { BigUint::zero() };
            w.put_uint(self.encrypt_metered(&bit)?.value());
        }
        Ok(w.finish())
    }

    fn handle_gamma(&self, payload: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        let mut r = PayloadReader::new(payload);
        let gamma = self.decrypt_logged(r.get_uint()?, DecryptKind::Gamma)?;
        r.expect_end()?;
        if gamma > BigUint::one() {
            return Err(ProtocolError::Integrity("termination bit is not 0/1".into()));
        }
        let mut w = PayloadWriter::new();
        w.put_u8(gamma.bit(0) as u8);
        Ok(w.finish())
    }
}

/// Serves primitive requests on one session stream until the peer shuts the
/// session down or the channel closes. Handler errors are reported to the
/// peer as error frames; serving continues.
pub fn serve_stream(core: Arc<C2Core>, stream: StreamHandle) {
    let mut state = C2SessionState::default();
    loop {
        let frame = match stream.recv() {
            Ok(f) => f,
            Err(_) => return,
        };
        if frame.msg_type == MessageType::Control {
            let mut r = PayloadReader::new(&frame.payload);
            match r.get_u8().ok().and_then(|c| ControlCode::try_from(c).ok()) {
                Some(ControlCode::Shutdown) => return,
                Some(ControlCode::OfflineFill) => {
                    let target = r.get_u32().unwrap_or(0) as usize;
                    core.fill_pool(target);
                    let mut w = PayloadWriter::new();
                    w.put_u8(ControlCode::OfflineDone as u8);
                    let _ = stream.send(MessageType::Control, w.finish());
                    continue;
                }
                _ => {
                    let _ = stream.send(
                        MessageType::Control,
                        super::error_payload(ERR_KIND_ABORT, "unexpected control code"),
                    );
                    continue;
                }
            }
        }
        match core.handle_primitive(&frame, &mut state) {
            Ok(Some((ty, payload))) => {
                if stream.send(ty, payload).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = stream.send(
                    MessageType::Control,
                    super::error_payload(
                        ERR_KIND_ABORT,
                        &format!("unexpected message {:?}", frame.msg_type),
                    ),
                );
            }
            Err(e) => {
                let kind = match &e {
                    ProtocolError::Integrity(_) => ERR_KIND_INTEGRITY,
                    _ => ERR_KIND_ABORT,
                };
                let _ = stream.send(MessageType::Control, super::error_payload(kind, &e.to_string()));
            }
        }
    }
}
