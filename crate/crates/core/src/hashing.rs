//! Signature hashing: a pairwise-independent polynomial family modulo the
//! Mersenne prime 2^89 - 1, truncated to its high-order bits.
//!
//! [`HashParams`] bundles the sampled function `h: U -> {0,1}^ell` with the
//! derived lengths. The level-`i` key is the leftmost
//! `eps_bits + i + key_offset` bits of `h(x)`, and the buffer is the next `r`
//! bits, padded with [`Trit::Bot`] once the signature runs out.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Exponent of the Mersenne prime modulus.
pub const MERSENNE_EXP: u32 = 89;
/// The prime `2^89 - 1`.
pub const MERSENNE_89: u128 = (1u128 << MERSENNE_EXP) - 1;
/// Signatures must leave at least this many bits of the residue unused so
/// the truncation bias `2^ell / p` stays negligible.
pub const TRUNCATION_SLACK: u32 = 16;
/// Longest signature the modulus supports.
pub const MAX_SIG_BITS: u32 = MERSENNE_EXP - TRUNCATION_SLACK;

/// Key offset used by the basic construction (`ell_i = eps_bits + i + 2`).
pub const DEFAULT_KEY_OFFSET: u32 = 2;

const LOW64: u128 = u64::MAX as u128;

#[inline]
fn fold(x: u128) -> u128 {
    (x & MERSENNE_89) + (x >> MERSENNE_EXP)
}

#[inline]
fn canonical(x: u128) -> u128 {
    let x = fold(fold(x));
    if x >= MERSENNE_89 {
        x - MERSENNE_89
    } else {
        x
    }
}

/// `a * b mod (2^89 - 1)` for `a, b < 2^89 - 1`.
#[inline]
pub fn mul_mod(a: u128, b: u128) -> u128 {
    debug_assert!(a < MERSENNE_89 && b < MERSENNE_89);
    let (a1, a0) = (a >> 64, a & LOW64);
    let (b1, b0) = (b >> 64, b & LOW64);
    let lo = a0 * b0;
    let mid = a1 * b0 + a0 * b1;
    let hi = a1 * b1;
    // 2^128 = 2^89 * 2^39, so hi * 2^128 == hi << 39 (mod p).
    let hi_term = hi << 39;
    // mid * 2^64 = (mid >> 25) * 2^89 + (mid mod 2^25) * 2^64.
    let mid_term = ((mid & ((1 << 25) - 1)) << 64) + (mid >> 25);
    canonical(fold(lo) + hi_term + mid_term)
}

#[inline]
pub fn add_mod(a: u128, b: u128) -> u128 {
    let s = a + b;
    if s >= MERSENNE_89 {
        s - MERSENNE_89
    } else {
        s
    }
}

/// Mixes a seed with a stream identifier so independent components of one
/// run draw from unrelated generators.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A polynomial `c0 + c1 x + ... + cd x^d` over GF(2^89 - 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyHash {
    coeffs: Vec<u128>,
}

impl PolyHash {
    /// Samples a polynomial of the given degree with a nonzero leading coefficient.
    pub fn sample<R: Rng>(rng: &mut R, degree: usize) -> Self {
        assert!(degree >= 1, "degree must be at least 1");
        let mut coeffs: Vec<u128> = (0..degree).map(|_| rng.gen_range(0..MERSENNE_89)).collect();
        coeffs.push(rng.gen_range(1..MERSENNE_89));
        PolyHash { coeffs }
    }

    pub fn seeded(seed: u64, degree: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::sample(&mut rng, degree)
    }

    /// Builds `a x + b`.
    pub fn linear(a: u128, b: u128) -> Result<Self> {
        if a == 0 || a >= MERSENNE_89 || b >= MERSENNE_89 {
            return Err(Error::Param("coefficients must satisfy 1 <= a < p, 0 <= b < p".into()));
        }
        Ok(PolyHash { coeffs: vec![b, a] })
    }

    /// Coefficients from the constant term upward.
    pub fn from_coefficients(coeffs: Vec<u128>) -> Result<Self> {
        if coeffs.len() < 2 || coeffs.iter().any(|&c| c >= MERSENNE_89) || *coeffs.last().unwrap() == 0 {
            return Err(Error::Param("polynomial needs degree >= 1, reduced coefficients and a nonzero leading term".into()));
        }
        Ok(PolyHash { coeffs })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coefficients(&self) -> &[u128] {
        &self.coeffs
    }

    /// The residue `poly(x) mod p`.
    #[inline]
    pub fn residue(&self, x: u64) -> u128 {
        let x = x as u128;
        let mut acc = self.coeffs[self.coeffs.len() - 1];
        for &c in self.coeffs[..self.coeffs.len() - 1].iter().rev() {
            acc = add_mod(mul_mod(acc, x), c);
        }
        acc
    }

    /// The high-order `len` bits of the 89-bit residue.
    #[inline]
    pub fn top_bits(&self, x: u64, len: u32) -> u128 {
        debug_assert!(len <= MERSENNE_EXP);
        if len == 0 {
            return 0;
        }
        self.residue(x) >> (MERSENNE_EXP - len)
    }
}

/// A bit string of at most 128 bits, stored right-aligned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sig {
    pub value: u128,
    pub len: u32,
}

impl Sig {
    pub fn new(value: u128, len: u32) -> Self {
        debug_assert!(len <= 128);
        debug_assert!(len == 128 || value >> len == 0);
        Sig { value, len }
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Option<Self> {
        if s.len() > 128 {
            return None;
        }
        let mut value = 0u128;
        for c in s.chars() {
            value = (value << 1)
                | match c {
                    '0' => 0,
                    '1' => 1,
                    _ => return None,
                };
        }
        Some(Sig { value, len: s.len() as u32 })
    }

    /// Bit `j`, counted from 1 at the left end.
    pub fn bit(&self, j: u32) -> u8 {
        debug_assert!(j >= 1 && j <= self.len);
        ((self.value >> (self.len - j)) & 1) as u8
    }

    /// The leftmost `n` bits.
    pub fn prefix(&self, n: u32) -> Sig {
        debug_assert!(n <= self.len);
        if n == 0 {
            return Sig { value: 0, len: 0 };
        }
        Sig { value: self.value >> (self.len - n), len: n }
    }

    /// Appends one bit on the right.
    pub fn push(&self, bit: u8) -> Sig {
        Sig { value: (self.value << 1) | bit as u128, len: self.len + 1 }
    }

    pub fn is_prefix_of(&self, other: &Sig) -> bool {
        self.len <= other.len && other.prefix(self.len) == *self
    }
}

impl fmt::Display for Sig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 1..=self.len {
            write!(f, "{}", self.bit(j))?;
        }
        Ok(())
    }
}

/// One buffer position: a signature bit, or the exhausted marker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Trit {
    Zero,
    One,
    Bot,
}

impl Trit {
    /// Two-bit serialization: `00` = 0, `01` = 1, `10` = bottom.
    pub fn code(self) -> u8 {
        match self {
            Trit::Zero => 0b00,
            Trit::One => 0b01,
            Trit::Bot => 0b10,
        }
    }

    pub fn from_code(code: u8) -> Option<Trit> {
        match code {
            0b00 => Some(Trit::Zero),
            0b01 => Some(Trit::One),
            0b10 => Some(Trit::Bot),
            _ => None,
        }
    }

    pub fn from_bit(bit: u8) -> Trit {
        if bit == 0 {
            Trit::Zero
        } else {
            Trit::One
        }
    }

    pub fn bit(self) -> Option<u8> {
        match self {
            Trit::Zero => Some(0),
            Trit::One => Some(1),
            Trit::Bot => None,
        }
    }
}

impl fmt::Display for Trit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trit::Zero => "0",
            Trit::One => "1",
            Trit::Bot => "⊥",
        })
    }
}

/// A string of `r` trits in which every bottom marker is followed only by
/// bottom markers, so it is fully described by its real bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Buffer {
    bits: u8,
    len: u8,
    r: u8,
}

/// Longest buffer supported (`ceil(log2 64)`).
pub const MAX_BUFFER_TRITS: u32 = 7;

impl Buffer {
    /// `len` real bits (the low `len` bits of `bits`, first trit most
    /// significant), then `r - len` bottoms.
    pub fn new(bits: u8, len: u32, r: u32) -> Self {
        assert!(r <= MAX_BUFFER_TRITS && len <= r);
        debug_assert!(len == 8 || (bits as u32) >> len == 0);
        Buffer { bits, len: len as u8, r: r as u8 }
    }

    pub fn exhausted(r: u32) -> Self {
        Buffer::new(0, 0, r)
    }

    pub fn from_trits(trits: &[Trit]) -> Option<Self> {
        let mut bits = 0u8;
        let mut len = 0u32;
        let mut seen_bot = false;
        for t in trits {
            match t.bit() {
                Some(b) if !seen_bot => {
                    bits = (bits << 1) | b;
                    len += 1;
                }
                Some(_) => return None,
                None => seen_bot = true,
            }
        }
        if trits.len() as u32 > MAX_BUFFER_TRITS {
            return None;
        }
        Some(Buffer::new(bits, len, trits.len() as u32))
    }

    pub fn width(&self) -> u32 {
        self.r as u32
    }

    /// Number of real (non-bottom) trits.
    pub fn real_len(&self) -> u32 {
        self.len as u32
    }

    pub fn real_bits(&self) -> u8 {
        self.bits
    }

    pub fn is_exhausted(&self) -> bool {
        self.len == 0
    }

    /// Trit `j`, counted from 1.
    pub fn trit(&self, j: u32) -> Trit {
        debug_assert!(j >= 1 && j <= self.r as u32);
        if j > self.len as u32 {
            Trit::Bot
        } else {
            Trit::from_bit((self.bits >> (self.len as u32 - j)) & 1)
        }
    }

    pub fn first(&self) -> Trit {
        if self.r == 0 {
            Trit::Bot
        } else {
            self.trit(1)
        }
    }

    pub fn trits(&self) -> Vec<Trit> {
        (1..=self.r as u32).map(|j| self.trit(j)).collect()
    }

    /// Drops the first trit and appends a bottom.
    pub fn shift(&self) -> Buffer {
        if self.len == 0 {
            return *self;
        }
        let len = self.len - 1;
        Buffer { bits: self.bits & ((1u16 << len) - 1) as u8, len, r: self.r }
    }

    /// Packed storage form: the real bits, a terminating 1, then zeros, in
    /// `r + 1` bits. Never zero.
    pub fn encode(&self) -> u64 {
        (((self.bits as u64) << 1) | 1) << (self.r - self.len)
    }

    pub fn decode(code: u64, r: u32) -> Option<Buffer> {
        if code == 0 || code >> (r + 1) != 0 {
            return None;
        }
        let tz = code.trailing_zeros();
        if tz > r {
            return None;
        }
        let len = r - tz;
        Some(Buffer::new((code >> (tz + 1)) as u8, len, r))
    }

    /// Width of [`Buffer::encode`] for buffers of `r` trits.
    pub fn encoded_bits(r: u32) -> u32 {
        r + 1
    }

    /// Two bits per trit, first trit in the most significant pair.
    pub fn trit_code(&self) -> u64 {
        self.trits().iter().fold(0u64, |acc, t| (acc << 2) | t.code() as u64)
    }
}

impl fmt::Display for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in self.trits() {
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Smallest `k` with `2^-k <= epsilon`, i.e. `ceil(log2(1/epsilon))`.
pub fn eps_bits(epsilon: f64) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Param(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let mut k = 0u32;
    while 0.5f64.powi(k as i32) > epsilon {
        k += 1;
    }
    Ok(k)
}

/// `ceil(log2 w)`.
pub fn ceil_log2(w: u32) -> u32 {
    if w <= 1 {
        0
    } else {
        32 - (w - 1).leading_zeros()
    }
}

/// The sampled signature function together with its derived lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashParams {
    hash: PolyHash,
    /// Total signature length.
    pub ell: u32,
    /// Buffer length in trits.
    pub r: u32,
    /// Universe width in bits.
    pub w: u32,
    /// `ceil(log2(1/epsilon))`.
    pub eps_bits: u32,
}

/// Samples parameters for the basic construction.
pub fn derive_params(epsilon: f64, w: u32, seed: u64) -> Result<HashParams> {
    HashParams::derive(epsilon, w, seed, DEFAULT_KEY_OFFSET, 1)
}

impl HashParams {
    /// Samples parameters with `ell_i = eps_bits + i + key_offset` and a
    /// hash polynomial of the given degree.
    pub fn derive(epsilon: f64, w: u32, seed: u64, key_offset: u32, degree: usize) -> Result<Self> {
        let eps_bits = eps_bits(epsilon)?;
        if !(8..=64).contains(&w) {
            return Err(Error::Param(format!("universe width must lie in 8..=64, got {w}")));
        }
        if degree != 1 && degree != 4 {
            return Err(Error::Param(format!("hash degree must be 1 or 4, got {degree}")));
        }
        let ell = eps_bits + w + key_offset;
        if ell > MAX_SIG_BITS {
            return Err(Error::Param(format!(
                "signature length {ell} exceeds {MAX_SIG_BITS} bits supported by the modulus"
            )));
        }
        let hash = PolyHash::seeded(seed, degree);
        Ok(HashParams { hash, ell, r: ceil_log2(w), w, eps_bits })
    }

    /// Parameters with explicit linear coefficients.
    pub fn from_linear(a: u128, b: u128, ell: u32, r: u32, w: u32, eps_bits: u32) -> Result<Self> {
        Self::from_parts(PolyHash::linear(a, b)?, ell, r, w, eps_bits)
    }

    pub fn from_parts(hash: PolyHash, ell: u32, r: u32, w: u32, eps_bits: u32) -> Result<Self> {
        if ell > MAX_SIG_BITS || ell < eps_bits + w || r > MAX_BUFFER_TRITS || w == 0 || w > 64 {
            return Err(Error::Param("inconsistent signature lengths".into()));
        }
        Ok(HashParams { hash, ell, r, w, eps_bits })
    }

    pub fn a(&self) -> u128 {
        self.hash.coeffs[1]
    }

    pub fn b(&self) -> u128 {
        self.hash.coeffs[0]
    }

    pub fn hash(&self) -> &PolyHash {
        &self.hash
    }

    pub fn degree(&self) -> usize {
        self.hash.degree()
    }

    /// `ell - eps_bits - w`; 2 for the basic construction.
    pub fn key_offset(&self) -> u32 {
        self.ell - self.eps_bits - self.w
    }

    /// `ell_i`, the key width at level `i`.
    pub fn level_bits(&self, i: u32) -> u32 {
        self.eps_bits + i + self.key_offset()
    }

    fn check_level(&self, i: u32) -> Result<()> {
        if i == 0 {
            return Err(Error::Param("levels start at 1".into()));
        }
        if i > self.w {
            return Err(Error::LevelOverflow { level: i, max: self.w });
        }
        Ok(())
    }

    /// `h(x)`, all `ell` bits.
    #[inline]
    pub fn full_sig(&self, x: u64) -> Sig {
        debug_assert!(self.w == 64 || x >> self.w == 0, "key wider than the universe");
        Sig { value: self.hash.top_bits(x, self.ell), len: self.ell }
    }

    /// `h_i(x)`: the leftmost `ell_i` bits of `h(x)`.
    pub fn prefix_sig(&self, x: u64, i: u32) -> Result<Sig> {
        self.check_level(i)?;
        Ok(self.full_sig(x).prefix(self.level_bits(i)))
    }

    /// `g_i(x)`: the `r` signature bits after `h_i(x)`, bottom-padded.
    pub fn buffer_sig(&self, x: u64, i: u32) -> Result<Buffer> {
        self.check_level(i)?;
        Ok(self.buffer_of(&self.full_sig(x), i))
    }

    /// Key and buffer for level `i` from an already computed full signature.
    #[inline]
    pub fn split_at_level(&self, full: &Sig, i: u32) -> (Sig, Buffer) {
        (full.prefix(self.level_bits(i)), self.buffer_of(full, i))
    }

    #[inline]
    fn buffer_of(&self, full: &Sig, i: u32) -> Buffer {
        let li = self.level_bits(i);
        let real = self.r.min(self.ell - li);
        let bits = if real == 0 {
            0
        } else {
            ((full.value >> (self.ell - li - real)) & ((1u128 << real) - 1)) as u8
        };
        Buffer::new(bits, real, self.r)
    }

    /// Little-endian serialization: `a`, `b` (16 bytes each), then `ell`,
    /// `r`, `w`, `eps_bits` (2 bytes each). Higher coefficients of a
    /// degree-4 polynomial follow as 16-byte words.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 16 * (self.degree() - 1));
        out.extend_from_slice(&self.a().to_le_bytes());
        out.extend_from_slice(&self.b().to_le_bytes());
        for v in [self.ell, self.r, self.w, self.eps_bits] {
            out.extend_from_slice(&(v as u16).to_le_bytes());
        }
        for c in &self.hash.coeffs[2..] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 40 || !(bytes.len() - 40).is_multiple_of(16) {
            return Err(Error::Snapshot(format!("hash parameters need 40 + 16k bytes, got {}", bytes.len())));
        }
        let word = |off: usize| u128::from_le_bytes(bytes[off..off + 16].try_into().unwrap());
        let half = |off: usize| u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap()) as u32;
        let mut coeffs = vec![word(16), word(0)];
        let mut off = 40;
        while off < bytes.len() {
            coeffs.push(word(off));
            off += 16;
        }
        let hash = PolyHash::from_coefficients(coeffs)?;
        Self::from_parts(hash, half(32), half(34), half(36), half(38))
    }

    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().map(|b| format!("{b:02x}")).collect()
    }
}
