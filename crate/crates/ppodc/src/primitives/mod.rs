//! Two-party privacy-preserving primitives between C1 (ciphertext holder)
//! and C2 (secret-key holder).
//!
//! C1 drives every protocol: the functions here run on C1, exchange masked
//! values with the [`server`] side over one session stream, and return
//! ciphertexts known only to C1. C2's view is limited to additively masked
//! plaintexts (uniform in `Z_N`, or statistically masked within `2^-kappa`
//! for the bounded-domain protocols) and the permuted zero/nonzero pattern
//! of the k-ary minimum.
//!
//! Domain discipline: the comparison-family protocols (SLSB, SC, SMIN,
//! SMIN_k) are exact only for plaintexts below `2^ell`, with `ell + kappa +
//! 2 < key_bits` so masked values never wrap mod `N`. The bound is not
//! checkable online (values are encrypted); callers enforce it by sizing
//! [`DomainBound`] from public parameters.

pub mod server;

use std::collections::HashMap;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use ppodc_core::paillier::{
    hom_add, hom_add_plain, hom_neg, hom_scalar_mul, hom_sub, plain_ciphertext, Ciphertext,
    PublicKey,
};

use crate::error::{ProtocolError, TransportError};
use crate::metrics::PartyMetrics;
use crate::transport::{MessageType, PayloadReader, PayloadWriter, StreamHandle};

/// Plaintext magnitude bound and statistical masking parameter.
///
/// Every value entering SLSB/SC/SMIN must be below `2^ell`; masks are drawn
/// `kappa` bits wider, hiding the value within statistical distance
/// `2^-kappa` while never wrapping mod `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainBound {
    pub ell: u32,
    pub kappa: u32,
}

impl DomainBound {
    pub fn new(ell: u32, kappa: u32) -> Self {
        DomainBound { ell, kappa }
    }

    /// The no-wrap requirement: `ell + kappa + 2 < key_bits`.
    pub fn check_fits(&self, key_bits: u64) -> Result<(), ProtocolError> {
        if (self.ell as u64) + (self.kappa as u64) + 2 >= key_bits {
            return Err(ProtocolError::Config(format!(
                "domain bound ell={} kappa={} does not fit {key_bits}-bit keys \
                 (need ell + kappa + 2 < key_bits)",
                self.ell, self.kappa
            )));
        }
        Ok(())
    }
}

/// Control sub-codes carried in `MessageType::Control` payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ControlCode {
    Hello = 1,
    HelloAck = 2,
    FetchEnc = 3,
    OfflineFill = 4,
    OfflineDone = 5,
    ZeroTest = 6,
    ZeroTestResult = 7,
    Shutdown = 8,
    Error = 255,
}

impl TryFrom<u8> for ControlCode {
    type Error = TransportError;

    fn try_from(v: u8) -> Result<Self, TransportError> {
        Ok(match v {
            1 => ControlCode::Hello,
            2 => ControlCode::HelloAck,
            3 => ControlCode::FetchEnc,
            4 => ControlCode::OfflineFill,
            5 => ControlCode::OfflineDone,
            6 => ControlCode::ZeroTest,
            7 => ControlCode::ZeroTestResult,
            8 => ControlCode::Shutdown,
            255 => ControlCode::Error,
            other => return Err(TransportError::Malformed(format!("control code {other}"))),
        })
    }
}

/// Error kinds a peer can signal inside a `Control`/`Error` payload.
pub const ERR_KIND_ABORT: u8 = 0;
pub const ERR_KIND_INTEGRITY: u8 = 1;

pub fn error_payload(kind: u8, msg: &str) -> Vec<u8> {
    let mut w = PayloadWriter::new();
    w.put_u8(ControlCode::Error as u8).put_u8(kind).put_str(msg);
    w.finish()
}

/// Receives the next frame, expecting `want`; decodes peer error signals into
/// protocol errors.
pub fn recv_expect(stream: &StreamHandle, want: MessageType) -> Result<Vec<u8>, ProtocolError> {
    let frame = stream.recv().map_err(ProtocolError::Transport)?;
    if frame.msg_type == want {
        return Ok(frame.payload);
    }
    if frame.msg_type == MessageType::Control {
        let mut r = PayloadReader::new(&frame.payload);
        if let Ok(code) = r.get_u8() {
            if code == ControlCode::Error as u8 {
                let kind = r.get_u8().unwrap_or(ERR_KIND_ABORT);
                let msg = r.get_str().unwrap_or_else(|_| "unspecified peer error".into());
                return Err(if kind == ERR_KIND_INTEGRITY {
                    ProtocolError::Integrity(msg)
                } else {
                    ProtocolError::Abort(msg)
                });
            }
        }
    }
    Err(ProtocolError::Integrity(format!(
        "expected {want:?}, got {:?}",
        frame.msg_type
    )))
}

/// One side of a secure-multiplication job.
#[derive(Debug, Clone, Copy)]
pub struct Operand<'a> {
    pub ct: &'a Ciphertext,
}

impl<'a> Operand<'a> {
    pub fn new(ct: &'a Ciphertext) -> Self {
        Operand { ct }
    }
}

/// A unit of work for [`C1Session::smp_batch`].
#[derive(Debug, Clone, Copy)]
pub enum SmpJob<'a> {
    /// `E(a), E(b) -> E(a*b mod N)`
    Mul(Operand<'a>, Operand<'a>),
    /// `E(a) -> E(a^2 mod N)` — one masked operand instead of two.
    Square(Operand<'a>),
}

pub(crate) const OPERAND_INLINE: u8 = 0;
pub(crate) const OPERAND_STORE: u8 = 1;
pub(crate) const OPERAND_REF: u8 = 2;

pub(crate) const SLSB_MODE_PARITY: u8 = 0;
pub(crate) const SLSB_MODE_HALVE: u8 = 1;

struct CachedOperand {
    handle: u64,
    mask: BigUint,
}

/// C1's end of one protocol session: a sub-channel to C2, the public key,
/// a CSPRNG for masks, and (optionally) the masked-transcript reuse cache.
///
/// Single-threaded by construction; concurrency comes from running several
/// sessions over multiplexed streams.
pub struct C1Session {
    stream: StreamHandle,
    pk: PublicKey,
    rng: ChaCha20Rng,
    mask_cache: Option<HashMap<Vec<u8>, CachedOperand>>,
    next_handle: u64,
    metrics: Arc<PartyMetrics>,
}

impl C1Session {
    pub fn new(
        stream: StreamHandle,
        pk: PublicKey,
        seed: u64,
        reuse_masks: bool,
        metrics: Arc<PartyMetrics>,
    ) -> Self {
        C1Session {
            stream,
            pk,
            rng: ChaCha20Rng::seed_from_u64(seed),
            mask_cache: reuse_masks.then(HashMap::new),
            next_handle: 1,
            metrics,
        }
    }

    pub fn pk(&self) -> &PublicKey {
        &self.pk
    }

    pub fn stream(&self) -> &StreamHandle {
        &self.stream
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    /// Drops all cached masked transcripts (used at iteration boundaries if
    /// the caller wants a bounded cache).
    pub fn clear_mask_cache(&mut self) {
        if let Some(c) = self.mask_cache.as_mut() {
            c.clear();
        }
    }

    fn count_exp(&self, n: u64) {
        self.metrics.add_online_exp(n);
    }

    /// Serializes one operand, masking it additively with a fresh uniform
    /// `Z_N` mask (or referencing the cached transcript when reuse is on).
    /// Returns the mask to use during unmasking.
    fn write_operand(&mut self, w: &mut PayloadWriter, ct: &Ciphertext) -> BigUint {
        if let Some(cache) = self.mask_cache.as_mut() {
            let key = ct.value().to_bytes_be();
            if let Some(hit) = cache.get(&key) {
                w.put_u8(OPERAND_REF).put_u64(hit.handle);
                return hit.mask.clone();
            }
            let mask = self.rng.gen_biguint_below(self.pk.modulus());
            let masked = hom_add_plain(&self.pk, ct, &BigInt::from(mask.clone()));
            let handle = self.next_handle;
            self.next_handle += 1;
            w.put_u8(OPERAND_STORE).put_u64(handle).put_uint(masked.value());
            cache.insert(key, CachedOperand { handle, mask: mask.clone() });
            mask
        } else {
            let mask = self.rng.gen_biguint_below(self.pk.modulus());
            let masked = hom_add_plain(&self.pk, ct, &BigInt::from(mask.clone()));
            w.put_u8(OPERAND_INLINE).put_uint(masked.value());
            mask
        }
    }

    /// Runs a batch of secure multiplications in one round trip.
    ///
    /// For each product: C1 sends `E(a + r_a), E(b + r_b)`; C2 decrypts and
    /// returns `E((a + r_a)(b + r_b))`; C1 strips the cross terms
    /// homomorphically. Squares send a single masked operand.
    pub fn smp_batch(&mut self, jobs: &[SmpJob<'_>]) -> Result<Vec<Ciphertext>, ProtocolError> {
        if jobs.is_empty() {
            return Ok(Vec::new());
        }
        let mut w = PayloadWriter::new();
        w.put_u16(jobs.len() as u16);
        let mut masks: Vec<(Option<BigUint>, BigUint)> = Vec::with_capacity(jobs.len());
        for job in jobs {
            match job {
                SmpJob::Mul(a, b) => {
                    w.put_u8(0);
                    let ra = self.write_operand(&mut w, a.ct);
                    let rb = self.write_operand(&mut w, b.ct);
                    masks.push((Some(ra), rb));
                }
                SmpJob::Square(a) => {
                    w.put_u8(1);
                    let r = self.write_operand(&mut w, a.ct);
                    masks.push((None, r));
                }
            }
        }
        self.stream.send(MessageType::SmpMasked, w.finish())?;
        let payload = recv_expect(&self.stream, MessageType::SmpProduct)?;
        let mut r = PayloadReader::new(&payload);
        let count = r.get_u16()? as usize;
        if count != jobs.len() {
            return Err(ProtocolError::Integrity("smp batch size mismatch".into()));
        }

        let n = self.pk.modulus().clone();
        let mut out = Vec::with_capacity(count);
        for (job, (ra, rb)) in jobs.iter().zip(masks) {
            let h = Ciphertext::from_value(r.get_uint()?, &self.pk);
            let unmasked = match (job, ra) {
                (SmpJob::Mul(a, b), Some(ra)) => {
                    // E(ab) = E(h) / (E(a)^rb * E(b)^ra * g^(ra*rb))
                    let ea_rb = hom_scalar_mul(&self.pk, a.ct, &rb)?;
                    let eb_ra = hom_scalar_mul(&self.pk, b.ct, &ra)?;
                    self.count_exp(2);
                    let cross = hom_add(&self.pk, &ea_rb, &eb_ra)?;
                    let cross =
                        hom_add_plain(&self.pk, &cross, &BigInt::from(&ra * &rb % &n));
                    hom_sub(&self.pk, &h, &cross)?
                }
                (SmpJob::Square(a), None) => {
                    // E(a^2) = E(h) / (E(a)^(2r) * g^(r^2))
                    let two_r = (&rb << 1u32) % &n;
                    let ea_2r = hom_scalar_mul(&self.pk, a.ct, &two_r)?;
                    self.count_exp(1);
                    let cross = hom_add_plain(&self.pk, &ea_2r, &BigInt::from(&rb * &rb % &n));
                    hom_sub(&self.pk, &h, &cross)?
                }
                _ => unreachable!("job/mask shape mismatch"),
            };
            out.push(unmasked);
        }
        r.expect_end().map_err(ProtocolError::Transport)?;
        Ok(out)
    }

    /// `E(a), E(b) -> E(a*b mod N)`, output known only to C1.
    pub fn smp(&mut self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, ProtocolError> {
        Ok(self
            .smp_batch(&[SmpJob::Mul(Operand::new(a), Operand::new(b))])?
            .pop()
            .expect("one job yields one result"))
    }

    /// Secure squaring, a one-operand multiplication.
    pub fn smp_square(&mut self, a: &Ciphertext) -> Result<Ciphertext, ProtocolError> {
        Ok(self
            .smp_batch(&[SmpJob::Square(Operand::new(a))])?
            .pop()
            .expect("one job yields one result"))
    }

    /// Left fold of [`smp`](Self::smp) over the inputs: decrypts to the
    /// modular product of all of them.
    pub fn smp_fold(&mut self, cts: &[Ciphertext]) -> Result<Ciphertext, ProtocolError> {
        let (first, rest) = cts
            .split_first()
            .ok_or_else(|| ProtocolError::Usage("smp_fold over an empty list".into()))?;
        let mut acc = first.clone();
        for ct in rest {
            acc = self.smp(&acc, ct)?;
        }
        Ok(acc)
    }

    /// Encrypted squared Euclidean distance between two encrypted vectors:
    /// per-coordinate difference via homomorphic subtraction, squares via the
    /// multiplication protocol, accumulation via homomorphic addition.
    pub fn ssed(
        &mut self,
        xs: &[Ciphertext],
        ys: &[Ciphertext],
    ) -> Result<Ciphertext, ProtocolError> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(ProtocolError::Usage(format!(
                "ssed length mismatch: {} vs {}",
                xs.len(),
                ys.len()
            )));
        }
        let mut diffs = Vec::with_capacity(xs.len());
        for (x, y) in xs.iter().zip(ys) {
            diffs.push(hom_sub(&self.pk, x, y)?);
        }
        let jobs: Vec<SmpJob<'_>> = diffs.iter().map(|d| SmpJob::Square(Operand::new(d))).collect();
        let squares = self.smp_batch(&jobs)?;
        let mut acc = squares[0].clone();
        for s in &squares[1..] {
            acc = hom_add(&self.pk, &acc, s)?;
        }
        Ok(acc)
    }

    /// Encrypted least significant bit of `z` (`z < 2^ell`).
    ///
    /// C1 sends `E(z + r)` for `r` uniform in `[0, 2^(ell+kappa))`; C2
    /// returns `E((z + r) mod 2)`; C1 flips the bit homomorphically when `r`
    /// is odd. Exact because bit zero receives no carry and the domain bound
    /// rules out a wrap mod `N`.
    pub fn slsb(
        &mut self,
        z: &Ciphertext,
        bound: &DomainBound,
    ) -> Result<Ciphertext, ProtocolError> {
        let r = self.rng.gen_biguint((bound.ell + bound.kappa) as u64);
        let masked = hom_add_plain(&self.pk, z, &BigInt::from(r.clone()));
        let mut w = PayloadWriter::new();
        w.put_u8(SLSB_MODE_PARITY).put_uint(masked.value());
        self.stream.send(MessageType::SlsbMasked, w.finish())?;
        let payload = recv_expect(&self.stream, MessageType::SlsbParity)?;
        let mut rd = PayloadReader::new(&payload);
        let parity = Ciphertext::from_value(rd.get_uint()?, &self.pk);
        rd.expect_end().map_err(ProtocolError::Transport)?;
        if r.bit(0) {
            // parity(z) = 1 - parity(z + r)
            let one = plain_ciphertext(&self.pk, &BigInt::one());
            Ok(hom_sub(&self.pk, &one, &parity)?)
        } else {
            Ok(parity)
        }
    }

    /// One masked-halving round: given `E(v)` with `v < 2^bits`, returns
    /// `E(floor(v / 2))`.
    ///
    /// C1 reveals `v + r` to C2 (statistically masked); C2 replies with
    /// encryptions of the shifted value and the parity of what it saw; C1
    /// corrects for its own mask including the half-bit borrow.
    fn halve_round(
        &mut self,
        v: &Ciphertext,
        bits: u32,
        kappa: u32,
    ) -> Result<Ciphertext, ProtocolError> {
        let r = self.rng.gen_biguint((bits + kappa) as u64);
        let masked = hom_add_plain(&self.pk, v, &BigInt::from(r.clone()));
        let mut w = PayloadWriter::new();
        w.put_u8(SLSB_MODE_HALVE).put_uint(masked.value());
        self.stream.send(MessageType::SlsbMasked, w.finish())?;
        let payload = recv_expect(&self.stream, MessageType::SlsbParity)?;
        let mut rd = PayloadReader::new(&payload);
        let shifted = Ciphertext::from_value(rd.get_uint()?, &self.pk);
        let parity = Ciphertext::from_value(rd.get_uint()?, &self.pk);
        rd.expect_end().map_err(ProtocolError::Transport)?;

        // v' = (m >> 1) - (r >> 1) - borrow, borrow = [m mod 2 < r mod 2]
        //    = (m >> 1) - (r >> 1) - (1 - parity(m)) * (r mod 2)
        let half_r = BigInt::from(&r >> 1u32);
        if r.bit(0) {
            let with_parity = hom_add(&self.pk, &shifted, &parity)?;
            Ok(hom_add_plain(&self.pk, &with_parity, &(-half_r - 1)))
        } else {
            Ok(hom_add_plain(&self.pk, &shifted, &-half_r))
        }
    }

    /// Secure comparison: `E(gamma)` with `gamma = 1` iff `a <= b`, for
    /// `a, b < 2^ell`. Known only to C1.
    ///
    /// Works on `d = b - a + 2^ell`, which never wraps and lies in
    /// `(0, 2^(ell+1))`; bit `ell` of `d` is exactly the comparison result
    /// and is extracted by `ell` exact masked halvings.
    pub fn sc(
        &mut self,
        a: &Ciphertext,
        b: &Ciphertext,
        bound: &DomainBound,
    ) -> Result<Ciphertext, ProtocolError> {
        let shift = BigInt::one() << bound.ell;
        let mut d = hom_add_plain(&self.pk, &hom_sub(&self.pk, b, a)?, &shift);
        let mut bits = bound.ell + 1;
        for _ in 0..bound.ell {
            d = self.halve_round(&d, bits, bound.kappa)?;
            bits -= 1;
        }
        Ok(d)
    }

    /// The comparison combiner over encrypted predicate bits:
    /// `gamma = -x(w + y - 2wy) + (w + y - wy)`.
    pub fn sc_combine(
        &mut self,
        w: &Ciphertext,
        x: &Ciphertext,
        y: &Ciphertext,
    ) -> Result<Ciphertext, ProtocolError> {
        let wy = self.smp(w, y)?;
        let w_plus_y = hom_add(&self.pk, w, y)?;
        // t = w + y - 2wy
        let two_wy = hom_add(&self.pk, &wy, &wy)?;
        let t = hom_sub(&self.pk, &w_plus_y, &two_wy)?;
        let xt = self.smp(x, &t)?;
        // gamma = (w + y - wy) - xt
        let base = hom_sub(&self.pk, &w_plus_y, &wy)?;
        Ok(hom_sub(&self.pk, &base, &xt)?)
    }

    /// Secure minimum with secrets: returns `(T, I)` where `T` decrypts to
    /// `min(a, b)` and `I` to the secret of the smaller value (ties keep
    /// `a`'s secret).
    pub fn smin(
        &mut self,
        a: (&Ciphertext, &Ciphertext),
        b: (&Ciphertext, &Ciphertext),
        bound: &DomainBound,
    ) -> Result<(Ciphertext, Ciphertext), ProtocolError> {
        let gamma = self.sc(a.0, b.0, bound)?;
        let products = self.smp_batch(&[
            SmpJob::Mul(Operand::new(&gamma), Operand::new(a.0)),
            SmpJob::Mul(Operand::new(&gamma), Operand::new(b.0)),
            SmpJob::Mul(Operand::new(&gamma), Operand::new(a.1)),
            SmpJob::Mul(Operand::new(&gamma), Operand::new(b.1)),
        ])?;
        // min(a,b) = gamma*a + (1-gamma)*b = b + gamma*a - gamma*b
        let t = hom_sub(&self.pk, &hom_add(&self.pk, b.0, &products[0])?, &products[1])?;
        let i = hom_sub(&self.pk, &hom_add(&self.pk, b.1, &products[2])?, &products[3])?;
        Ok((t, i))
    }

    /// k-ary secure minimum: returns the indicator vector `Gamma` — exactly
    /// one entry encrypts 1, at the position of the (lowest-index) minimum.
    ///
    /// Folds [`smin`](Self::smin) with the positions `1..=k` as secrets, then
    /// randomizes `E(r_i * (i - s_min))`, permutes, and has C2 mark the
    /// single zero entry.
    pub fn smin_k(
        &mut self,
        values: &[Ciphertext],
        bound: &DomainBound,
    ) -> Result<Vec<Ciphertext>, ProtocolError> {
        let k = values.len();
        if k < 2 {
            return Err(ProtocolError::Usage("smin_k needs at least two values".into()));
        }

        // positions 1..=k as the values' secrets
        let idx: Vec<Ciphertext> =
            (1..=k).map(|i| plain_ciphertext(&self.pk, &BigInt::from(i as u64))).collect();
        let (mut t, mut i_ct) = self.smin((&values[0], &idx[0]), (&values[1], &idx[1]), bound)?;
        for (pos, v) in values.iter().enumerate().skip(2) {
            let (nt, ni) = self.smin((&t, &i_ct), (v, &idx[pos]), bound)?;
            t = nt;
            i_ct = ni;
        }

        // phi[i] = E(r_i * (i - s_min)), exactly one zero
        let delta = hom_neg(&self.pk, &i_ct)?;
        let mut phi = Vec::with_capacity(k);
        for i in 1..=k {
            let shifted = hom_add(&self.pk, &idx[i - 1], &delta)?;
            let r = loop {
                let r = self.rng.gen_biguint_below(self.pk.modulus());
                if !r.is_zero() {
                    break r;
                }
            };
            phi.push(hom_scalar_mul(&self.pk, &shifted, &r)?);
            self.count_exp(1);
        }

        // u = pi(phi) with a fresh Fisher-Yates permutation
        let perm = random_permutation(k, &mut self.rng);
        let mut u: Vec<Option<&Ciphertext>> = vec![None; k];
        for (i, p) in perm.iter().enumerate() {
            u[*p] = Some(&phi[i]);
        }
        let mut w = PayloadWriter::new();
        w.put_u16(k as u16);
        for entry in &u {
            w.put_uint(entry.expect("permutation is a bijection").value());
        }
        self.stream.send(MessageType::SminkPermuted, w.finish())?;

        let payload = recv_expect(&self.stream, MessageType::SminkIndicators)?;
        let mut rd = PayloadReader::new(&payload);
        let count = rd.get_u16()? as usize;
        if count != k {
            return Err(ProtocolError::Integrity("smin_k indicator size mismatch".into()));
        }
        let marked: Vec<Ciphertext> = (0..k)
            .map(|_| rd.get_uint().map(|v| Ciphertext::from_value(v, &self.pk)))
            .collect::<Result<_, _>>()?;
        rd.expect_end().map_err(ProtocolError::Transport)?;

        // Gamma = pi^{-1}(U)
        Ok(perm.iter().map(|&p| marked[p].clone()).collect())
    }
}

/// Uniform permutation of `0..k` (Fisher-Yates).
pub fn random_permutation<R: Rng>(k: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}
