//! A filter that lengthens its signatures as the set grows.
//!
//! Level `i` keeps one dictionary keyed by the `ell_i`-bit signature prefix,
//! each record carrying the next `r` signature bits as a buffer. Stream
//! positions `2^(i-1) .. 2^i - 1` are inserted at level `i` (the first
//! `2^i0 - 1` positions share level `i0`). Moving to the next level extends
//! every key by one bit: the first buffer bit when there is one, otherwise
//! both possible bits.

use crate::compact_dict::{DictConfig, LevelDict};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, Buffer, HashParams, PolyHash, DEFAULT_KEY_OFFSET};
use crate::stats::{ProbeSummary, QueryStats};
use crate::Filter;

pub const DEFAULT_I0: u32 = 10;
pub const DEFAULT_DELTA: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowConfig {
    pub epsilon: f64,
    pub w: u32,
    pub i0: u32,
    pub delta: f64,
    /// Bucket count for [`BucketedFilter`]; `None` means `2^ceil(delta w / 2)`.
    pub buckets: Option<u64>,
    /// Target failure exponent; recorded with run metadata only.
    pub c_fail: f64,
    pub load_limit: f64,
    pub seed: u64,
}

impl GrowConfig {
    pub fn new(epsilon: f64, w: u32, seed: u64) -> Self {
        GrowConfig {
            epsilon,
            w,
            i0: DEFAULT_I0,
            delta: DEFAULT_DELTA,
            buckets: None,
            c_fail: 1.0,
            load_limit: 0.85,
            seed,
        }
    }

    pub fn with_i0(mut self, i0: u32) -> Self {
        self.i0 = i0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(8..=64).contains(&self.w) {
            return Err(Error::Config(format!("universe width must lie in 8..=64, got {}", self.w)));
        }
        if self.i0 < 1 || self.i0 > self.w {
            return Err(Error::Config(format!("i0 must lie in 1..={}, got {}", self.w, self.i0)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if let Some(b) = self.buckets {
            if b == 0 || !b.is_power_of_two() {
                return Err(Error::Config(format!("bucket count must be a power of two, got {b}")));
            }
        }
        Ok(())
    }

    /// `log2` of the bucket count.
    pub fn bucket_bits(&self) -> u32 {
        match self.buckets {
            Some(b) => b.trailing_zeros(),
            None => (self.delta * self.w as f64 / 2.0).ceil() as u32,
        }
    }
}

/// Level at which stream position `pos` (1-based) is inserted.
pub fn level_of_position(pos: u64, i0: u32) -> u32 {
    debug_assert!(pos >= 1);
    (64 - pos.leading_zeros()).max(i0)
}

/// Per-level dictionary bound: at most `2^(i+2)` records.
pub fn level_bound(level: u32) -> u64 {
    1u64.checked_shl(level + 2).unwrap_or(u64::MAX)
}

/// Hard dictionary capacity, the bound plus a little rounding slack.
pub fn level_capacity(level: u32) -> u64 {
    level_bound(level).saturating_add(2)
}

/// Applies the level-transition rule to one record, calling `emit` once or
/// twice with the extended `(key, buffer)`.
#[inline]
pub fn extend_record(key: u128, buf: Buffer, mut emit: impl FnMut(u128, Buffer)) {
    match buf.first().bit() {
        Some(b) => emit((key << 1) | b as u128, buf.shift()),
        None => {
            emit(key << 1, buf);
            emit((key << 1) | 1, buf);
        }
    }
}

/// Records produced from one source record: 1, or 2 when its buffer is spent.
#[inline]
pub fn fanout(buf: Buffer) -> u64 {
    if buf.is_exhausted() {
        2
    } else {
        1
    }
}

pub(crate) fn reserve_for(records: u64) -> u64 {
    records + records / 16 + 16
}

pub(crate) fn check_stream_room(inserted: u64, w: u32) -> Result<()> {
    // positions run up to 2^w - 1
    if w < 64 && inserted + 1 >= 1u64 << w {
        return Err(Error::UniverseExhausted(w));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct GrowableFilter {
    config: GrowConfig,
    params: HashParams,
    level: u32,
    inserted: u64,
    dict: LevelDict,
    queries: QueryStats,
    retired_probes: ProbeSummary,
    retired_rebuilds: u64,
    peak_fill: f64,
    transitions: u64,
}

impl GrowableFilter {
    pub fn new(config: GrowConfig) -> Result<Self> {
        config.validate()?;
        let params = HashParams::derive(config.epsilon, config.w, config.seed, DEFAULT_KEY_OFFSET, 1)?;
        Self::with_params(config, params)
    }

    /// Uses explicit hash parameters (shared by the buckets of a [`BucketedFilter`]).
    pub fn with_params(config: GrowConfig, params: HashParams) -> Result<Self> {
        config.validate()?;
        if params.w != config.w {
            return Err(Error::Config("hash parameters were derived for another universe".into()));
        }
        let level = config.i0;
        let dict = LevelDict::with_reserve(Self::dict_config(&params, &config, level), 0)?;
        Ok(GrowableFilter {
            config,
            params,
            level,
            inserted: 0,
            dict,
            queries: QueryStats::default(),
            retired_probes: ProbeSummary::default(),
            retired_rebuilds: 0,
            peak_fill: 0.0,
            transitions: 0,
        })
    }

    fn dict_config(params: &HashParams, config: &GrowConfig, level: u32) -> DictConfig {
        DictConfig::new(params.level_bits(level), Buffer::encoded_bits(params.r), level_capacity(level))
            .with_load_limit(config.load_limit)
    }

    pub fn params(&self) -> &HashParams {
        &self.params
    }

    pub fn config(&self) -> &GrowConfig {
        &self.config
    }

    pub fn dict(&self) -> &LevelDict {
        &self.dict
    }

    /// Stream positions consumed so far.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn transitions(&self) -> u64 {
        self.transitions
    }

    /// Inserts made at the current level.
    pub fn sub_count(&self) -> u64 {
        let start = if self.level == self.config.i0 { 0 } else { (1u64 << (self.level - 1)) - 1 };
        self.inserted - start
    }

    /// Live records as `(key, buffer)` pairs.
    pub fn records(&self) -> Vec<(u128, Buffer)> {
        self.dict.iter().map(|r| (r.key, Buffer::decode(r.sat, self.params.r).expect("valid buffer code"))).collect()
    }

    fn note_fill(&mut self) {
        let fill = self.dict.len() as f64 / level_bound(self.level) as f64;
        if fill > self.peak_fill {
            self.peak_fill = fill;
        }
    }

    /// Moves every record to the next level.
    pub fn transition(&mut self) -> Result<()> {
        let next = self.level + 1;
        if next > self.config.w {
            return Err(Error::UniverseExhausted(self.config.w));
        }
        let r = self.params.r;
        let out: u64 = self.dict.iter().map(|rec| fanout(Buffer::decode(rec.sat, r).unwrap())).sum();
        let cfg = Self::dict_config(&self.params, &self.config, next);
        let mut fresh = LevelDict::with_reserve(cfg, reserve_for(out))?;
        let mut failure = None;
        for rec in self.dict.iter() {
            let buf = Buffer::decode(rec.sat, r).ok_or_else(|| Error::Invariant("corrupt buffer".into()))?;
            extend_record(rec.key, buf, |k, b| {
                if failure.is_none() {
                    if let Err(e) = fresh.insert(k, b.encode()) {
                        failure = Some(e);
                    }
                }
            });
        }
        if let Some(e) = failure {
            return Err(match e {
                Error::Capacity { .. } => Error::Invariant(format!("level {next} overflowed its capacity bound")),
                e => e,
            });
        }
        self.retire(fresh);
        self.level = next;
        self.transitions += 1;
        self.note_fill();
        Ok(())
    }

    fn retire(&mut self, fresh: LevelDict) {
        let old = std::mem::replace(&mut self.dict, fresh);
        self.retired_probes.merge(&old.probe_summary());
        self.retired_rebuilds += old.rebuilds();
    }

    /// Removes one record; used by `verify` to check that faults are caught.
    pub fn inject_fault_drop_record(&mut self) -> Option<(u128, Buffer)> {
        let rec = self.dict.iter().next()?;
        self.dict.remove(rec.key, rec.sat);
        Some((rec.key, Buffer::decode(rec.sat, self.params.r).unwrap()))
    }

    /// Removes every record under `x`'s current key; returns how many.
    pub fn inject_fault_drop_element(&mut self, x: u64) -> usize {
        let key = self.params.full_sig(x).prefix(self.params.level_bits(self.level)).value;
        let mut sats = Vec::new();
        self.dict.lookup_quiet(key, &mut sats);
        for &sat in &sats {
            self.dict.remove(key, sat);
        }
        sats.len()
    }
}

impl Filter for GrowableFilter {
    fn insert(&mut self, x: u64) -> Result<()> {
        check_stream_room(self.inserted, self.config.w)?;
        let pos = self.inserted + 1;
        if level_of_position(pos, self.config.i0) > self.level {
            self.transition()?;
        }
        let full = self.params.full_sig(x);
        let (key, buf) = self.params.split_at_level(&full, self.level);
        self.dict.insert(key.value, buf.encode()).map_err(|e| match e {
            Error::Capacity { .. } => Error::Invariant(format!("level {} overflowed its capacity bound", self.level)),
            e => e,
        })?;
        self.inserted = pos;
        self.note_fill();
        Ok(())
    }

    fn contains(&self, x: u64) -> bool {
        let key = self.params.full_sig(x).prefix(self.params.level_bits(self.level));
        self.queries.record(1);
        self.dict.contains_key(key.value)
    }

    fn space_bits(&self) -> u64 {
        self.dict.space_bits()
    }

    fn level(&self) -> u32 {
        self.level
    }

    fn record_count(&self) -> u64 {
        self.dict.len()
    }

    fn probe_summary(&self) -> ProbeSummary {
        let mut s = self.retired_probes.clone();
        s.merge(&self.dict.probe_summary());
        s
    }

    fn query_stats(&self) -> &QueryStats {
        &self.queries
    }

    fn rebuilds(&self) -> u64 {
        self.retired_rebuilds + self.dict.rebuilds()
    }

    fn peak_fill(&self) -> f64 {
        self.peak_fill
    }
}

/// Independent [`GrowableFilter`]s over hash-selected buckets.
#[derive(Clone, Debug)]
pub struct BucketedFilter {
    router: PolyHash,
    bucket_bits: u32,
    buckets: Vec<GrowableFilter>,
    max_bucket_space: u64,
    queries: QueryStats,
}

impl BucketedFilter {
    pub fn new(config: GrowConfig) -> Result<Self> {
        config.validate()?;
        let bucket_bits = config.bucket_bits();
        if bucket_bits > 24 {
            return Err(Error::Config(format!("2^{bucket_bits} buckets is too many")));
        }
        let params = HashParams::derive(config.epsilon, config.w, config.seed, DEFAULT_KEY_OFFSET, 1)?;
        let buckets = (0..1usize << bucket_bits)
            .map(|_| GrowableFilter::with_params(config, params.clone()))
            .collect::<Result<Vec<_>>>()?;
        let max_bucket_space = buckets.iter().map(|b| b.space_bits()).max().unwrap_or(0);
        Ok(BucketedFilter {
            router: PolyHash::seeded(derive_seed(config.seed, 0xB0C4), 1),
            bucket_bits,
            buckets,
            max_bucket_space,
            queries: QueryStats::default(),
        })
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    #[inline]
    pub fn bucket_of(&self, x: u64) -> usize {
        self.router.top_bits(x, self.bucket_bits) as usize
    }

    pub fn buckets(&self) -> &[GrowableFilter] {
        &self.buckets
    }

    pub fn max_bucket_space(&self) -> u64 {
        self.max_bucket_space
    }

    /// Space if buckets were interleaved word by word: every bucket padded
    /// to the largest footprint any bucket has reached.
    pub fn interleaved_space_bits(&self) -> u64 {
        self.buckets.len() as u64 * self.max_bucket_space
    }

    pub fn bucket_loads(&self) -> Vec<u64> {
        self.buckets.iter().map(|b| b.inserted()).collect()
    }
}

impl Filter for BucketedFilter {
    fn insert(&mut self, x: u64) -> Result<()> {
        let b = self.bucket_of(x);
        self.buckets[b].insert(x)?;
        self.max_bucket_space = self.max_bucket_space.max(self.buckets[b].space_bits());
        Ok(())
    }

    fn contains(&self, x: u64) -> bool {
        self.queries.record(1);
        self.buckets[self.bucket_of(x)].contains(x)
    }

    fn space_bits(&self) -> u64 {
        self.buckets.iter().map(|b| b.space_bits()).sum()
    }

    fn level(&self) -> u32 {
        self.buckets.iter().map(|b| b.level()).max().unwrap_or(0)
    }

    fn record_count(&self) -> u64 {
        self.buckets.iter().map(|b| b.record_count()).sum()
    }

    fn probe_summary(&self) -> ProbeSummary {
        let mut s = ProbeSummary::default();
        for b in &self.buckets {
            s.merge(&b.probe_summary());
        }
        s
    }

    fn query_stats(&self) -> &QueryStats {
        &self.queries
    }

    fn rebuilds(&self) -> u64 {
        self.buckets.iter().map(|b| b.rebuilds()).sum()
    }

    fn peak_fill(&self) -> f64 {
        self.buckets.iter().map(|b| b.peak_fill()).fold(0.0, f64::max)
    }
}
