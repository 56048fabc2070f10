//! Fixed-capacity approximate membership filters: a classic Bloom filter and
//! a signature set (fingerprints in a [`LevelDict`]).

use std::fmt;
use std::str::FromStr;

use crate::compact_dict::{DictConfig, LevelDict};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, eps_bits, PolyHash};
use crate::stats::ProbeSummary;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Backend {
    Bloom,
    #[default]
    Sigset,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Bloom => "bloom",
            Backend::Sigset => "sigset",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bloom" => Ok(Backend::Bloom),
            "sigset" => Ok(Backend::Sigset),
            other => Err(Error::Config(format!("unknown backend `{other}` (expected bloom or sigset)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmqConfig {
    pub capacity: u64,
    pub epsilon: f64,
    pub backend: Backend,
    pub seed: u64,
}

impl AmqConfig {
    fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Param("capacity must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Param(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BloomLayout {
    pub m: u64,
    pub k: u32,
}

impl BloomLayout {
    /// `k = ceil(log2(1/eps))` and `m = ceil(n log2(e) log2(1/eps))`.
    pub fn new(capacity: u64, epsilon: f64) -> Result<Self> {
        let k = eps_bits(epsilon)?.max(1);
        let m = (capacity as f64 * std::f64::consts::LOG2_E * (1.0 / epsilon).log2()).ceil() as u64;
        Ok(BloomLayout { m: m.max(1), k })
    }
}

/// Fingerprint width `ceil(log2(capacity / eps))` of the signature-set filter.
pub fn sigset_width(capacity: u64, epsilon: f64) -> u32 {
    ((capacity as f64 / epsilon).log2().ceil() as u32).max(1)
}

#[derive(Clone, Debug)]
pub struct BloomFilter {
    layout: BloomLayout,
    bits: Vec<u64>,
    h1: PolyHash,
    h2: PolyHash,
    capacity: u64,
    inserted: u64,
}

const BLOOM_HEADER_BITS: u64 = 128;

impl BloomFilter {
    pub fn new(capacity: u64, epsilon: f64, seed: u64) -> Result<Self> {
        let layout = BloomLayout::new(capacity, epsilon)?;
        Ok(BloomFilter {
            layout,
            bits: vec![0; layout.m.div_ceil(64) as usize],
            h1: PolyHash::seeded(derive_seed(seed, 1), 1),
            h2: PolyHash::seeded(derive_seed(seed, 2), 1),
            capacity,
            inserted: 0,
        })
    }

    pub fn layout(&self) -> BloomLayout {
        self.layout
    }

    // g_j = h1 + j * h2 mod m
    #[inline]
    fn positions(&self, x: u64) -> impl Iterator<Item = u64> + '_ {
        let m = self.layout.m as u128;
        let a = self.h1.residue(x) % m;
        let b = self.h2.residue(x) % m;
        (0..self.layout.k as u128).map(move |j| ((a + j * b) % m) as u64)
    }

    #[inline]
    fn get(&self, i: u64) -> bool {
        (self.bits[(i / 64) as usize] >> (i % 64)) & 1 == 1
    }

    /// Returns the number of bits that changed from 0 to 1.
    pub fn insert(&mut self, x: u64) -> Result<u32> {
        let fresh: Vec<u64> = self.positions(x).filter(|&i| !self.get(i)).collect();
        if fresh.is_empty() {
            return Ok(0);
        }
        if self.inserted >= self.capacity {
            return Err(Error::Capacity { capacity: self.capacity });
        }
        let mut set = 0;
        for i in fresh {
            let w = &mut self.bits[(i / 64) as usize];
            if *w >> (i % 64) & 1 == 0 {
                *w |= 1 << (i % 64);
                set += 1;
            }
        }
        self.inserted += 1;
        Ok(set)
    }

    pub fn contains(&self, x: u64) -> bool {
        self.positions(x).all(|i| self.get(i))
    }

    pub fn len(&self) -> u64 {
        self.inserted
    }

    pub fn is_empty(&self) -> bool {
        self.inserted == 0
    }

    pub fn bits_set(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn space_bits(&self) -> u64 {
        self.layout.m + BLOOM_HEADER_BITS
    }
}

#[derive(Clone, Debug)]
pub struct SigsetFilter {
    hash: PolyHash,
    width: u32,
    dict: LevelDict,
}

impl SigsetFilter {
    /// `lazy` tables allocate as records arrive instead of up front.
    pub fn new(capacity: u64, epsilon: f64, seed: u64, lazy: bool) -> Result<Self> {
        let width = sigset_width(capacity, epsilon);
        if width > 89 {
            return Err(Error::Param(format!("fingerprint width {width} exceeds the 89-bit hash")));
        }
        let cfg = DictConfig::new(width, 0, capacity);
        let dict = if lazy { LevelDict::with_reserve(cfg, 0)? } else { LevelDict::new(cfg)? };
        Ok(SigsetFilter { hash: PolyHash::seeded(derive_seed(seed, 3), 1), width, dict })
    }

    pub fn fingerprint_bits(&self) -> u32 {
        self.width
    }

    #[inline]
    fn fingerprint(&self, x: u64) -> u128 {
        self.hash.top_bits(x, self.width)
    }

    pub fn insert(&mut self, x: u64) -> Result<bool> {
        self.dict.insert(self.fingerprint(x), 0)
    }

    pub fn contains(&self, x: u64) -> bool {
        self.dict.contains_key(self.fingerprint(x))
    }

    pub fn len(&self) -> u64 {
        self.dict.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dict.is_empty()
    }

    pub fn dict(&self) -> &LevelDict {
        &self.dict
    }

    pub fn space_bits(&self) -> u64 {
        self.dict.space_bits()
    }
}

/// Either backend behind one interface.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Amq {
    Bloom(BloomFilter),
    Sigset(SigsetFilter),
}

impl Amq {
    pub fn new(config: AmqConfig) -> Result<Self> {
        Self::build(config, false)
    }

    /// Like [`Amq::new`], but a sigset table grows with its contents.
    pub fn new_lazy(config: AmqConfig) -> Result<Self> {
        Self::build(config, true)
    }

    fn build(config: AmqConfig, lazy: bool) -> Result<Self> {
        config.validate()?;
        Ok(match config.backend {
            Backend::Bloom => Amq::Bloom(BloomFilter::new(config.capacity, config.epsilon, config.seed)?),
            Backend::Sigset => Amq::Sigset(SigsetFilter::new(config.capacity, config.epsilon, config.seed, lazy)?),
        })
    }

    pub fn insert(&mut self, x: u64) -> Result<()> {
        match self {
            Amq::Bloom(b) => b.insert(x).map(drop),
            Amq::Sigset(s) => s.insert(x).map(drop),
        }
    }

    pub fn contains(&self, x: u64) -> bool {
        match self {
            Amq::Bloom(b) => b.contains(x),
            Amq::Sigset(s) => s.contains(x),
        }
    }

    pub fn len(&self) -> u64 {
        match self {
            Amq::Bloom(b) => b.len(),
            Amq::Sigset(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn space_bits(&self) -> u64 {
        match self {
            Amq::Bloom(b) => b.space_bits(),
            Amq::Sigset(s) => s.space_bits(),
        }
    }

    /// Dictionary probes (Bloom filters have none).
    pub fn probe_summary(&self) -> ProbeSummary {
        match self {
            Amq::Bloom(_) => ProbeSummary::default(),
            Amq::Sigset(s) => s.dict.probe_summary(),
        }
    }

    pub fn rebuilds(&self) -> u64 {
        match self {
            Amq::Bloom(_) => 0,
            Amq::Sigset(s) => s.dict.rebuilds(),
        }
    }
}
