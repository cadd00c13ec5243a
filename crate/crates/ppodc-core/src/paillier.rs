//! Paillier cryptosystem with the `g = N + 1` fast path.
//!
//! Encryption uses the identity `(N + 1)^m = 1 + m*N (mod N^2)`, so a fresh
//! ciphertext is `(m*N + 1) * r^N mod N^2` and costs a single exponentiation
//! (`r^N`). That factor is independent of the message, which is what makes
//! offline precomputation ([`RandomnessPool`]) possible: with a pooled factor
//! the online cost of an encryption drops to two modular multiplications.
//!
//! Decryption uses the standard `L` function with a precomputed multiplier
//! `mu`, with an optional CRT path (about 4x faster) when the prime
//! factorization is available.

use alloc::collections::VecDeque;
use core::fmt;

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::{CryptoRng, RngCore};

/// Miller-Rabin rounds used during prime generation.
const MILLER_RABIN_ROUNDS: usize = 64;

/// Candidates per prime before keygen gives up.
const PRIME_RETRY_LIMIT: usize = 100_000;

/// Smallest permitted modulus size. 1024 bits is the production default;
/// smaller (down to 256) is allowed to keep test runtimes reasonable.
pub const MIN_KEY_BITS: u64 = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PaillierError {
    /// Requested key size below [`MIN_KEY_BITS`] or odd.
    KeySize { requested: u64 },
    /// Prime generation did not converge within the retry budget.
    PrimeGeneration,
    /// Plaintext outside `[0, N)`.
    PlaintextRange,
    /// Scalar outside `[0, N)`.
    ScalarRange,
    /// Ciphertext not coprime to `N^2`; it cannot decrypt cleanly.
    CiphertextIntegrity,
    /// Operands produced under different public keys.
    KeyMismatch,
    /// Key material is inconsistent (e.g. `mu * lambda != 1 mod N`).
    KeyMaterial,
}

impl fmt::Display for PaillierError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PaillierError::KeySize { requested } => {
                write!(f, "invalid key size {requested} (need even, >= {MIN_KEY_BITS})")
            }
            PaillierError::PrimeGeneration => write!(f, "prime generation failed"),
            PaillierError::PlaintextRange => write!(f, "plaintext out of range [0, N)"),
            PaillierError::ScalarRange => write!(f, "scalar out of range [0, N)"),
            PaillierError::CiphertextIntegrity => write!(f, "ciphertext not coprime to N^2"),
            PaillierError::KeyMismatch => write!(f, "ciphertext belongs to a different key"),
            PaillierError::KeyMaterial => write!(f, "inconsistent key material"),
        }
    }
}

impl core::error::Error for PaillierError {}

/// Public half of a Paillier key pair: the RSA modulus `N` plus caches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    key_bits: u64,
    key_id: u64,
}

impl PublicKey {
    /// Builds the cached form from a modulus. `key_id` is a cheap fingerprint
    /// used to detect cross-key homomorphic operations.
    pub fn from_modulus(n: BigUint) -> Self {
        let n_squared = &n * &n;
        let key_bits = n.bits();
        let key_id = fingerprint(&n);
        PublicKey { n, n_squared, key_bits, key_id }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn key_bits(&self) -> u64 {
        self.key_bits
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }
}

/// CRT acceleration data, available when the factorization of `N` is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrtContext {
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    /// `(L_p((N+1)^{p-1} mod p^2))^{-1} mod p`
    hp: BigUint,
    /// `(L_q((N+1)^{q-1} mod q^2))^{-1} mod q`
    hq: BigUint,
    /// `p^{-1} mod q`, for recombination mod `N`.
    p_inv_q: BigUint,
    /// `(p^2)^{-1} mod q^2`, for recombination mod `N^2`.
    p2_inv_q2: BigUint,
}

impl CrtContext {
    fn new(p: BigUint, q: BigUint, n: &BigUint) -> Option<Self> {
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let g = n + 1u32;
        let one = BigUint::one();

        let gp = g.modpow(&(&p - &one), &p_squared);
        let hp = modinv(&l_function(&gp, &p), &p)?;
        let gq = g.modpow(&(&q - &one), &q_squared);
        let hq = modinv(&l_function(&gq, &q), &q)?;
        let p_inv_q = modinv(&p, &q)?;
        let p2_inv_q2 = modinv(&p_squared, &q_squared)?;

        Some(CrtContext { p, q, p_squared, q_squared, hp, hq, p_inv_q, p2_inv_q2 })
    }

    /// Decrypts `c` via the two prime-power components.
    fn decrypt(&self, c: &BigUint) -> BigUint {
        let one = BigUint::one();
        let mp = l_function(&c.modpow(&(&self.p - &one), &self.p_squared), &self.p) * &self.hp
            % &self.p;
        let mq = l_function(&c.modpow(&(&self.q - &one), &self.q_squared), &self.q) * &self.hq
            % &self.q;
        crt_combine(&mp, &self.p, &mq, &self.q, &self.p_inv_q)
    }

    /// Computes `r^N mod N^2` through the prime-square components. Roughly
    /// halves the cost relative to a direct exponentiation.
    fn pow_n_mod_n2(&self, r: &BigUint, n: &BigUint) -> BigUint {
        let ep = n.mod_floor(&(&self.p * (&self.p - 1u32)));
        let eq = n.mod_floor(&(&self.q * (&self.q - 1u32)));
        let ap = (r % &self.p_squared).modpow(&ep, &self.p_squared);
        let aq = (r % &self.q_squared).modpow(&eq, &self.q_squared);
        crt_combine(&ap, &self.p_squared, &aq, &self.q_squared, &self.p2_inv_q2)
    }
}

/// Secret half of a key pair: the decryption exponent `lambda` (Carmichael
/// function of `N`) and the precomputed multiplier `mu = lambda^{-1} mod N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    lambda: BigUint,
    mu: BigUint,
    public: PublicKey,
    crt: Option<CrtContext>,
}

impl SecretKey {
    /// Rebuilds a secret key from its serialized fields. If the factorization
    /// can be recovered from `(N, lambda)` the CRT fast path is enabled.
    pub fn from_parts(n: BigUint, lambda: BigUint, mu: BigUint) -> Result<Self, PaillierError> {
        let public = PublicKey::from_modulus(n);
        if (&mu * &lambda) % public.modulus() != BigUint::one() {
            return Err(PaillierError::KeyMaterial);
        }
        let crt = recover_factors(public.modulus(), &lambda)
            .and_then(|(p, q)| CrtContext::new(p, q, public.modulus()));
        Ok(SecretKey { lambda, mu, public, crt })
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    pub fn has_crt(&self) -> bool {
        self.crt.is_some()
    }

    /// A fresh `r^N mod N^2` factor, computed through the CRT components
    /// when available. This is the per-encryption cost for the key holder.
    pub fn fresh_factor<R: RngCore + CryptoRng>(&self, rng: &mut R) -> BigUint {
        let pk = self.public();
        let r = sample_zn_star(pk.modulus(), rng);
        match &self.crt {
            Some(crt) => crt.pow_n_mod_n2(&r, pk.modulus()),
            None => r.modpow(pk.modulus(), pk.modulus_squared()),
        }
    }
}

/// A Paillier ciphertext: an integer in `[1, N^2)` coprime to `N^2`, tagged
/// with the fingerprint of the key it was produced under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    key_id: u64,
}

impl Ciphertext {
    pub fn from_value(value: BigUint, pk: &PublicKey) -> Self {
        Ciphertext { value, key_id: pk.key_id() }
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    fn check_key(&self, pk: &PublicKey) -> Result<(), PaillierError> {
        if self.key_id != pk.key_id() {
            return Err(PaillierError::KeyMismatch);
        }
        Ok(())
    }
}

/// Queue of precomputed `r^N mod N^2` factors (`r` uniform in `Z_N^*`).
///
/// Single-consumer: draws must be serialized externally or the pool sharded
/// per worker. Each entry is consumed at most once.
#[derive(Debug, Default)]
pub struct RandomnessPool {
    entries: VecDeque<BigUint>,
    capacity: usize,
    hits: u64,
    misses: u64,
}

impl RandomnessPool {
    pub fn new() -> Self {
        RandomnessPool::default()
    }

    /// Fills the pool with `count` fresh factors using public-key
    /// exponentiations.
    pub fn fill<R: RngCore + CryptoRng>(&mut self, pk: &PublicKey, count: usize, rng: &mut R) {
        for _ in 0..count {
            let r = sample_zn_star(pk.modulus(), rng);
            self.entries.push_back(r.modpow(pk.modulus(), pk.modulus_squared()));
        }
        self.capacity = self.capacity.max(self.entries.len());
    }

    /// Same as [`fill`](Self::fill) but computed through the CRT components,
    /// for the party that holds the factorization.
    pub fn fill_with_secret<R: RngCore + CryptoRng>(
        &mut self,
        sk: &SecretKey,
        count: usize,
        rng: &mut R,
    ) {
        match &sk.crt {
            Some(crt) => {
                let pk = sk.public();
                for _ in 0..count {
                    let r = sample_zn_star(pk.modulus(), rng);
                    self.entries.push_back(crt.pow_n_mod_n2(&r, pk.modulus()));
                }
                self.capacity = self.capacity.max(self.entries.len());
            }
            None => self.fill(sk.public(), count, rng),
        }
    }

    /// Appends an externally computed factor. The caller is responsible for
    /// it being a valid `r^N mod N^2`.
    pub fn push_factor(&mut self, factor: BigUint) {
        self.entries.push_back(factor);
        self.capacity = self.capacity.max(self.entries.len());
    }

    pub fn draw(&mut self) -> Option<BigUint> {
        match self.entries.pop_front() {
            Some(e) => {
                self.hits += 1;
                Some(e)
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of successful draws.
    pub fn hits(&self) -> u64 {
        self.hits
    }

    /// Number of draws that found the pool empty (the caller fell back to an
    /// online exponentiation).
    pub fn misses(&self) -> u64 {
        self.misses
    }
}

/// Generates a key pair whose modulus has exactly `key_bits` bits.
///
/// Primes are random probable primes (64 Miller-Rabin rounds) of equal length
/// with the top two bits forced, which guarantees the product reaches the
/// requested size; `p != q` is enforced.
pub fn keygen<R: RngCore + CryptoRng>(
    key_bits: u64,
    rng: &mut R,
) -> Result<(PublicKey, SecretKey), PaillierError> {
    if key_bits < MIN_KEY_BITS || key_bits % 2 != 0 {
        return Err(PaillierError::KeySize { requested: key_bits });
    }
    let half = key_bits / 2;
    let p = generate_prime(half, rng)?;
    let q = loop {
        let q = generate_prime(half, rng)?;
        if q != p {
            break q;
        }
    };

    let n = &p * &q;
    debug_assert_eq!(n.bits(), key_bits);
    let one = BigUint::one();
    let lambda = (&p - &one).lcm(&(&q - &one));
    let public = PublicKey::from_modulus(n);
    // With g = N + 1, L(g^lambda mod N^2) = lambda, so mu is its inverse mod N.
    let mu = modinv(&lambda, public.modulus()).ok_or(PaillierError::KeyMaterial)?;
    let crt = CrtContext::new(p, q, public.modulus());
    let secret = SecretKey { lambda, mu, public: public.clone(), crt };
    Ok((public, secret))
}

/// Encrypts `m` with fresh randomness: `(m*N + 1) * r^N mod N^2`.
pub fn encrypt<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    m: &BigUint,
    rng: &mut R,
) -> Result<Ciphertext, PaillierError> {
    let r = sample_zn_star(pk.modulus(), rng);
    encrypt_with_r(pk, m, &r)
}

/// Encrypts `m` with caller-chosen randomness `r`.
pub fn encrypt_with_r(
    pk: &PublicKey,
    m: &BigUint,
    r: &BigUint,
) -> Result<Ciphertext, PaillierError> {
    let rho = r.modpow(pk.modulus(), pk.modulus_squared());
    encrypt_with_factor(pk, m, &rho)
}

/// Encrypts `m` with a precomputed `r^N mod N^2` factor. Two multiplications.
pub fn encrypt_with_factor(
    pk: &PublicKey,
    m: &BigUint,
    factor: &BigUint,
) -> Result<Ciphertext, PaillierError> {
    if m >= pk.modulus() {
        return Err(PaillierError::PlaintextRange);
    }
    let value = ((m * pk.modulus() + 1u32) % pk.modulus_squared()) * factor % pk.modulus_squared();
    Ok(Ciphertext::from_value(value, pk))
}

/// Outcome of a pooled encryption: whether a precomputed factor was used or
/// the call fell back to an online exponentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncSource {
    Pooled,
    Online,
}

/// Encrypts drawing the `r^N` factor from `pool`, falling back to an online
/// exponentiation when the pool is exhausted (the miss is recorded by the
/// pool itself).
pub fn encrypt_with_pool<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    m: &BigUint,
    pool: &mut RandomnessPool,
    rng: &mut R,
) -> Result<(Ciphertext, EncSource), PaillierError> {
    match pool.draw() {
        Some(factor) => Ok((encrypt_with_factor(pk, m, &factor)?, EncSource::Pooled)),
        None => Ok((encrypt(pk, m, rng)?, EncSource::Online)),
    }
}

/// Decrypts a ciphertext to its plaintext in `[0, N)`.
pub fn decrypt(sk: &SecretKey, c: &Ciphertext) -> Result<BigUint, PaillierError> {
    let pk = sk.public();
    c.check_key(pk)?;
    if c.value().is_zero() || c.value() >= pk.modulus_squared() {
        return Err(PaillierError::CiphertextIntegrity);
    }
    // gcd(c, N^2) != 1 iff gcd(c, N) != 1.
    if c.value().gcd(pk.modulus()) != BigUint::one() {
        return Err(PaillierError::CiphertextIntegrity);
    }
    match &sk.crt {
        Some(crt) => Ok(crt.decrypt(c.value())),
        None => {
            let u = c.value().modpow(&sk.lambda, pk.modulus_squared());
            Ok(l_function(&u, pk.modulus()) * &sk.mu % pk.modulus())
        }
    }
}

/// Homomorphic addition: `E(a) * E(b) mod N^2` decrypts to `(a + b) mod N`.
pub fn hom_add(
    pk: &PublicKey,
    c1: &Ciphertext,
    c2: &Ciphertext,
) -> Result<Ciphertext, PaillierError> {
    c1.check_key(pk)?;
    c2.check_key(pk)?;
    let value = c1.value() * c2.value() % pk.modulus_squared();
    Ok(Ciphertext::from_value(value, pk))
}

/// Homomorphic scalar multiplication: `E(a)^u mod N^2` decrypts to
/// `a*u mod N`. `u = N - 1` implements negation.
pub fn hom_scalar_mul(
    pk: &PublicKey,
    c: &Ciphertext,
    u: &BigUint,
) -> Result<Ciphertext, PaillierError> {
    c.check_key(pk)?;
    if u >= pk.modulus() {
        return Err(PaillierError::ScalarRange);
    }
    let value = c.value().modpow(u, pk.modulus_squared());
    Ok(Ciphertext::from_value(value, pk))
}

/// Adds the known constant `x` into a ciphertext without touching its
/// randomness: `c * (1 + x*N) mod N^2`. Costs one multiplication. Negative
/// constants are reduced mod `N`.
pub fn hom_add_plain(pk: &PublicKey, c: &Ciphertext, x: &BigInt) -> Ciphertext {
    let xr = reduce_mod_n(x, pk.modulus());
    let value = c.value() * ((&xr * pk.modulus() + 1u32) % pk.modulus_squared())
        % pk.modulus_squared();
    Ciphertext::from_value(value, pk)
}

/// A deterministic encryption of the known constant `x` (unit randomness).
///
/// Valid only for values that never leave the holder unmasked: anything sent
/// to the key holder is decrypted anyway, and everything else in the protocol
/// is rerandomized by a masked exchange first.
pub fn plain_ciphertext(pk: &PublicKey, x: &BigInt) -> Ciphertext {
    let xr = reduce_mod_n(x, pk.modulus());
    let value = (&xr * pk.modulus() + 1u32) % pk.modulus_squared();
    Ciphertext::from_value(value, pk)
}

/// Homomorphic subtraction via the multiplicative inverse of `c2`.
pub fn hom_sub(
    pk: &PublicKey,
    c1: &Ciphertext,
    c2: &Ciphertext,
) -> Result<Ciphertext, PaillierError> {
    c1.check_key(pk)?;
    c2.check_key(pk)?;
    let inv = modinv(c2.value(), pk.modulus_squared()).ok_or(PaillierError::CiphertextIntegrity)?;
    let value = c1.value() * inv % pk.modulus_squared();
    Ok(Ciphertext::from_value(value, pk))
}

/// Multiplicative inverse of a ciphertext (an encryption of `-a`).
pub fn hom_neg(pk: &PublicKey, c: &Ciphertext) -> Result<Ciphertext, PaillierError> {
    c.check_key(pk)?;
    let inv = modinv(c.value(), pk.modulus_squared()).ok_or(PaillierError::CiphertextIntegrity)?;
    Ok(Ciphertext::from_value(inv, pk))
}

/// `L(u) = (u - 1) / N` — the discrete logarithm in the `1 + N` subgroup.
fn l_function(u: &BigUint, n: &BigUint) -> BigUint {
    (u - 1u32) / n
}

/// Reduces a signed value into `[0, N)`.
pub fn reduce_mod_n(x: &BigInt, n: &BigUint) -> BigUint {
    let n_signed = BigInt::from(n.clone());
    let r = x.mod_floor(&n_signed);
    r.to_biguint().expect("mod_floor of positive modulus is non-negative")
}

/// Uniform element of `Z_N^*`.
pub fn sample_zn_star<R: RngCore + CryptoRng>(n: &BigUint, rng: &mut R) -> BigUint {
    loop {
        let r = rng.gen_biguint_below(n);
        if !r.is_zero() && r.gcd(n) == BigUint::one() {
            return r;
        }
    }
}

/// Modular inverse, if it exists.
pub fn modinv(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    let a = BigInt::from(a.clone());
    let m_signed = BigInt::from(m.clone());
    let e = a.extended_gcd(&m_signed);
    if !e.gcd.is_one() {
        return None;
    }
    let x = e.x.mod_floor(&m_signed);
    x.to_biguint()
}

/// CRT recombination: the unique `x mod a*b` with `x = ra mod a`,
/// `x = rb mod b`, given `a_inv_b = a^{-1} mod b`.
fn crt_combine(
    ra: &BigUint,
    a: &BigUint,
    rb: &BigUint,
    b: &BigUint,
    a_inv_b: &BigUint,
) -> BigUint {
    // x = ra + a * ((rb - ra) * a^{-1} mod b)
    let ra_mod_b = ra % b;
    let diff = if rb >= &ra_mod_b { rb - &ra_mod_b } else { b - &ra_mod_b + rb };
    ra + a * (diff * a_inv_b % b)
}

/// Tries to recover `(p, q)` from the modulus and Carmichael value by testing
/// small cofactors `g = gcd(p-1, q-1)`: `phi = lambda * g`, then `p + q =
/// N - phi + 1` and the factors are roots of the quadratic.
fn recover_factors(n: &BigUint, lambda: &BigUint) -> Option<(BigUint, BigUint)> {
    let n_signed = BigInt::from(n.clone());
    for g in (2u32..=4096).step_by(2) {
        let phi = BigInt::from(lambda * g);
        let s: BigInt = &n_signed - &phi + 1;
        if s.is_negative() {
            return None;
        }
        let disc: BigInt = &s * &s - 4 * &n_signed;
        if disc.is_negative() {
            continue;
        }
        let disc = disc.to_biguint().unwrap();
        let root = disc.sqrt();
        if &root * &root != disc {
            continue;
        }
        let root = BigInt::from(root);
        let p2 = &s + &root;
        if p2.is_negative() || p2.is_zero() {
            continue;
        }
        let p: BigUint = p2.to_biguint().unwrap() >> 1u32;
        if p.is_zero() {
            continue;
        }
        if (n % &p).is_zero() {
            let q = n / &p;
            if p != q && !q.is_one() && !p.is_one() {
                return Some((p, q));
            }
        }
    }
    None
}

fn generate_prime<R: RngCore + CryptoRng>(bits: u64, rng: &mut R) -> Result<BigUint, PaillierError> {
    let one = BigUint::one();
    let top_two = (&one << (bits - 1)) | (&one << (bits - 2));
    for _ in 0..PRIME_RETRY_LIMIT {
        let mut cand = rng.gen_biguint(bits) | &top_two | &one;
        cand.set_bit(bits - 1, true);
        if is_probable_prime(&cand, MILLER_RABIN_ROUNDS, rng) {
            return Ok(cand);
        }
    }
    Err(PaillierError::PrimeGeneration)
}

const SMALL_PRIMES: [u32; 60] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283,
];

/// Miller-Rabin with random bases, preceded by small-prime trial division.
pub fn is_probable_prime<R: RngCore + CryptoRng>(
    n: &BigUint,
    rounds: usize,
    rng: &mut R,
) -> bool {
    let one = BigUint::one();
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    if n == &two {
        return true;
    }
    if n.is_even() {
        return false;
    }
    for sp in SMALL_PRIMES {
        let spb = BigUint::from(sp);
        if n == &spb {
            return true;
        }
        if (n % &spb).is_zero() {
            return false;
        }
    }

    // n - 1 = 2^s * d with d odd
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;

    'witness: for _ in 0..rounds {
        let a = loop {
            let a = rng.gen_biguint_below(&n_minus_one);
            if a >= two {
                break a;
            }
        };
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue 'witness;
        }
        for _ in 0..s.saturating_sub(1) {
            x = &x * &x % n;
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// FNV-1a fingerprint of a big integer's magnitude bytes.
fn fingerprint(n: &BigUint) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in n.to_bytes_be() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}
