//! Deletions on top of the growable filter.
//!
//! Every record remembers the level `L` its element was inserted at and a
//! deleted flag. Once an element's buffer is spent its records branch into
//! every possible suffix; the all-zero suffix (the zero extension) stands for
//! the whole family and carries the deleted flag. A query matches a record,
//! then checks that record's zero extension.
//!
//! Elements that already test positive when inserted go to an exact
//! secondary dictionary instead. A background scanner, advanced a constant
//! number of records per update, drops records of deleted families and
//! moves secondary elements back once the primary structure no longer
//! reports them.

use crate::compact_dict::{DictConfig, LevelDict};
use crate::error::{Error, Result};
use crate::growable_filter::{
    check_stream_room, extend_record, level_bound, level_capacity, level_of_position, GrowConfig,
};
use crate::hashing::{ceil_log2, Buffer, HashParams, Sig, DEFAULT_KEY_OFFSET};
use crate::stats::{ProbeSummary, QueryStats};
use crate::Filter;

/// Records examined by the scanner per update.
pub const SCAN_PER_UPDATE: usize = 2;
/// Deleted roots whose family has at most this many members are purged by
/// the scanner; larger ones wait for the next transition.
pub const PURGE_FAMILY_LIMIT: u32 = 8;
/// Hash polynomial degree used with deletions.
pub const DELETION_HASH_DEGREE: usize = 4;

/// The effective error rate: `min(eps, 1/w)`.
pub fn clamped_epsilon(epsilon: f64, w: u32) -> f64 {
    epsilon.min(1.0 / w as f64)
}

/// First `prefix_len_bits` of `key`, zero-padded to the key's width.
pub fn zero_extension(prefix_len_bits: u32, key: Sig) -> Sig {
    debug_assert!(prefix_len_bits <= key.len);
    let tail = key.len - prefix_len_bits;
    Sig::new(if tail >= 128 { 0 } else { (key.value >> tail) << tail }, key.len)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Rec {
    buf: Buffer,
    level: u32,
    deleted: bool,
}

#[derive(Clone, Copy, Debug)]
struct SatLayout {
    r: u32,
    level_bits: u32,
}

impl SatLayout {
    fn bits(&self) -> u32 {
        Buffer::encoded_bits(self.r) + self.level_bits + 1
    }

    fn pack(&self, rec: Rec) -> u64 {
        (rec.buf.encode() << (self.level_bits + 1)) | ((rec.level as u64) << 1) | rec.deleted as u64
    }

    fn unpack(&self, sat: u64) -> Rec {
        Rec {
            buf: Buffer::decode(sat >> (self.level_bits + 1), self.r).expect("valid buffer code"),
            level: ((sat >> 1) & ((1 << self.level_bits) - 1)) as u32,
            deleted: sat & 1 == 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DeletionStats {
    pub secondary_inserts: u64,
    pub secondary_deletes: u64,
    pub primary_deletes: u64,
    pub moved_to_primary: u64,
    pub scanner_removed: u64,
    pub roots_purged: u64,
    pub transition_dropped: u64,
}

#[derive(Clone, Copy, Debug, Default)]
struct Scanner {
    home: usize,
    idx: usize,
    passes: u64,
    sec_home: usize,
}

#[derive(Clone, Debug)]
pub struct DeletableFilter {
    config: GrowConfig,
    epsilon: f64,
    params: HashParams,
    layout: SatLayout,
    level: u32,
    inserted: u64,
    dict: LevelDict,
    secondary: LevelDict,
    scan: Scanner,
    scan_per_update: usize,
    stats: DeletionStats,
    queries: QueryStats,
    retired_probes: ProbeSummary,
    retired_rebuilds: u64,
    peak_fill: f64,
}

impl DeletableFilter {
    pub fn new(config: GrowConfig) -> Result<Self> {
        Self::with_degree(config, DELETION_HASH_DEGREE)
    }

    pub fn with_degree(config: GrowConfig, degree: usize) -> Result<Self> {
        config.validate()?;
        let epsilon = clamped_epsilon(config.epsilon, config.w);
        let params = HashParams::derive(epsilon, config.w, config.seed, DEFAULT_KEY_OFFSET, degree)?;
        let layout = SatLayout { r: params.r, level_bits: ceil_log2(config.w) + 1 };
        let level = config.i0;
        let dict = LevelDict::with_reserve(Self::dict_config(&params, &config, layout, level), 0)?;
        let sec_cap = if config.w >= 32 { 1u64 << 32 } else { 1u64 << config.w };
        let secondary = LevelDict::with_reserve(DictConfig::new(config.w, 0, sec_cap), 0)?;
        Ok(DeletableFilter {
            config,
            epsilon,
            params,
            layout,
            level,
            inserted: 0,
            dict,
            secondary,
            scan: Scanner::default(),
            scan_per_update: SCAN_PER_UPDATE,
            stats: DeletionStats::default(),
            queries: QueryStats::default(),
            retired_probes: ProbeSummary::default(),
            retired_rebuilds: 0,
            peak_fill: 0.0,
        })
    }

    fn dict_config(params: &HashParams, config: &GrowConfig, layout: SatLayout, level: u32) -> DictConfig {
        DictConfig::new(params.level_bits(level), layout.bits(), level_capacity(level))
            .with_load_limit(config.load_limit)
    }

    /// The clamped error rate the signatures were sized for.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn params(&self) -> &HashParams {
        &self.params
    }

    pub fn stats(&self) -> DeletionStats {
        self.stats
    }

    pub fn secondary_len(&self) -> u64 {
        self.secondary.len()
    }

    /// Whether `x` is held exactly in the secondary dictionary.
    pub fn secondary_contains(&self, x: u64) -> bool {
        self.secondary.contains(x as u128, 0)
    }

    pub fn secondary_space_bits(&self) -> u64 {
        self.secondary.space_bits()
    }

    pub fn primary_len(&self) -> u64 {
        self.dict.len()
    }

    pub fn scan_passes(&self) -> u64 {
        self.scan.passes
    }

    /// Branch point of a record inserted at `orig` when viewed at the current level.
    fn branch_point(&self, orig: u32) -> u32 {
        (self.params.level_bits(orig) + self.params.r).min(self.params.level_bits(self.level))
    }

    fn zext(&self, key: u128, orig: u32) -> u128 {
        let width = self.params.level_bits(self.level);
        zero_extension(self.branch_point(orig), Sig::new(key, width)).value
    }

    fn has(&self, key: u128, rec: Rec) -> bool {
        self.dict.contains(key, self.layout.pack(rec))
    }

    /// Whether the family rooted at `z` has been deleted with no live twin.
    fn family_dead(&self, z: u128, buf: Buffer, level: u32) -> bool {
        !self.has(z, Rec { buf, level, deleted: false }) && self.has(z, Rec { buf, level, deleted: true })
    }

    /// Membership in the primary structure only; returns (answer, lookups).
    fn primary_member(&self, full: &Sig, counted: bool) -> (bool, u64) {
        let key = full.prefix(self.params.level_bits(self.level)).value;
        let mut sats = Vec::new();
        if counted {
            self.dict.lookup_into(key, &mut sats);
        } else {
            self.dict.lookup_quiet(key, &mut sats);
        }
        let mut lookups = 1;
        for &sat in &sats {
            let rec = self.layout.unpack(sat);
            let live = self.layout.pack(Rec { deleted: false, ..rec });
            let z = self.zext(key, rec.level);
            let found = if z == key {
                sats.contains(&live)
            } else {
                lookups += 1;
                self.dict.contains(z, live)
            };
            if found {
                return (true, lookups);
            }
        }
        (false, lookups)
    }

    fn store_primary(&mut self, full: &Sig) -> Result<()> {
        let (key, buf) = self.params.split_at_level(full, self.level);
        let sat = self.layout.pack(Rec { buf, level: self.level, deleted: false });
        self.dict.insert(key.value, sat).map_err(|e| match e {
            Error::Capacity { .. } => Error::Invariant(format!("level {} overflowed its capacity bound", self.level)),
            e => e,
        })?;
        self.note_fill();
        Ok(())
    }

    fn note_fill(&mut self) {
        let fill = self.dict.len() as f64 / level_bound(self.level) as f64;
        if fill > self.peak_fill {
            self.peak_fill = fill;
        }
    }

    fn transition(&mut self) -> Result<()> {
        let next = self.level + 1;
        if next > self.config.w {
            return Err(Error::UniverseExhausted(self.config.w));
        }
        let mut keep = Vec::with_capacity(self.dict.len() as usize);
        for r in self.dict.iter() {
            let rec = self.layout.unpack(r.sat);
            if rec.deleted {
                self.stats.transition_dropped += 1;
                continue;
            }
            let z = self.zext(r.key, rec.level);
            if z != r.key && self.family_dead(z, rec.buf, rec.level) {
                self.stats.transition_dropped += 1;
                continue;
            }
            keep.push((r.key, rec));
        }
        let out: u64 = keep.iter().map(|(_, rec)| if rec.buf.is_exhausted() { 2 } else { 1 }).sum();
        let cfg = Self::dict_config(&self.params, &self.config, self.layout, next);
        let mut fresh = LevelDict::with_reserve(cfg, out + out / 16 + 16)?;
        let mut failure = None;
        for (key, rec) in keep {
            extend_record(key, rec.buf, |k, b| {
                if failure.is_none() {
                    if let Err(e) = fresh.insert(k, self.layout.pack(Rec { buf: b, ..rec })) {
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
        let old = std::mem::replace(&mut self.dict, fresh);
        self.retired_probes.merge(&old.probe_summary());
        self.retired_rebuilds += old.rebuilds();
        self.level = next;
        self.scan.home = 0;
        self.scan.idx = 0;
        self.note_fill();
        Ok(())
    }

    /// Examines one record; returns whether it was removed.
    fn scan_visit(&mut self, key: u128, sat: u64) -> bool {
        let rec = self.layout.unpack(sat);
        let z = self.zext(key, rec.level);
        if !rec.deleted {
            if z != key && self.family_dead(z, rec.buf, rec.level) {
                self.dict.remove(key, sat);
                self.stats.scanner_removed += 1;
                return true;
            }
            return false;
        }
        let width = self.params.level_bits(self.level);
        let spread = width - self.branch_point(rec.level);
        if spread > PURGE_FAMILY_LIMIT.trailing_zeros() {
            return false;
        }
        let live = self.layout.pack(Rec { deleted: false, ..rec });
        let siblings_remain = (1..1u128 << spread).any(|suffix| self.dict.contains(z | suffix, live));
        if siblings_remain {
            return false;
        }
        self.dict.remove(key, sat);
        self.stats.roots_purged += 1;
        true
    }

    /// One increment of background cleanup.
    pub fn scan_step(&mut self) -> Result<()> {
        for _ in 0..self.scan_per_update {
            if self.dict.is_empty() {
                break;
            }
            let Some(home) = self.dict.next_home(self.scan.home) else {
                self.scan = Scanner { home: 0, idx: 0, passes: self.scan.passes + 1, ..self.scan };
                continue;
            };
            let run = self.dict.run_at(home);
            if self.scan.idx >= run.len() {
                self.scan.home = home + 1;
                self.scan.idx = 0;
                continue;
            }
            self.scan.home = home;
            let r = run[self.scan.idx];
            if !self.scan_visit(r.key, r.sat) {
                self.scan.idx += 1;
            }
        }
        self.recheck_secondary()
    }

    fn recheck_secondary(&mut self) -> Result<()> {
        let home = match self.secondary.next_home(self.scan.sec_home) {
            Some(h) => h,
            None => match self.secondary.next_home(0) {
                Some(h) => h,
                None => return Ok(()),
            },
        };
        self.scan.sec_home = home + 1;
        let Some(rec) = self.secondary.run_at(home).first().copied() else { return Ok(()) };
        let x = rec.key as u64;
        let full = self.params.full_sig(x);
        if !self.primary_member(&full, false).0 && self.dict.len() < level_bound(self.level) {
            self.secondary.remove(rec.key, 0);
            self.store_primary(&full)?;
            self.stats.moved_to_primary += 1;
        }
        Ok(())
    }

    /// Runs the scanner until `passes` further full passes have completed.
    pub fn run_scan_passes(&mut self, passes: u64) -> Result<()> {
        let target = self.scan.passes + passes;
        while self.scan.passes < target && !self.dict.is_empty() {
            self.scan_step()?;
        }
        Ok(())
    }
}

impl Filter for DeletableFilter {
    fn insert(&mut self, x: u64) -> Result<()> {
        check_stream_room(self.inserted, self.config.w)?;
        let pos = self.inserted + 1;
        if level_of_position(pos, self.config.i0) > self.level {
            self.transition()?;
        }
        let full = self.params.full_sig(x);
        if self.secondary.contains(x as u128, 0) || self.primary_member(&full, false).0 {
            self.secondary.insert(x as u128, 0)?;
            self.stats.secondary_inserts += 1;
        } else {
            self.store_primary(&full)?;
        }
        self.inserted = pos;
        self.scan_step()
    }

    fn contains(&self, x: u64) -> bool {
        if self.secondary.contains_key(x as u128) {
            self.queries.record(1);
            return true;
        }
        let (hit, lookups) = self.primary_member(&self.params.full_sig(x), true);
        self.queries.record(1 + lookups);
        hit
    }

    fn delete(&mut self, x: u64) -> Result<()> {
        if self.secondary.remove(x as u128, 0) {
            self.stats.secondary_deletes += 1;
            return self.scan_step();
        }
        let full = self.params.full_sig(x);
        let width = self.params.level_bits(self.level);
        let key = full.prefix(width).value;
        let mut sats = Vec::new();
        self.dict.lookup_quiet(key, &mut sats);
        let ell = self.params.ell;
        let r = self.params.r;
        for sat in sats {
            let rec = self.layout.unpack(sat);
            // the buffer x itself would carry if it had been inserted at rec.level
            let real = (self.params.level_bits(rec.level) + r).min(ell).saturating_sub(width);
            let bits = if real == 0 { 0 } else { ((full.value >> (ell - width - real)) & ((1 << real) - 1)) as u8 };
            if rec.buf != Buffer::new(bits, real, r) {
                continue;
            }
            let z = self.zext(key, rec.level);
            let live = self.layout.pack(Rec { deleted: false, ..rec });
            if self.dict.contains(z, live) {
                self.dict.remove(z, live);
                self.dict.insert(z, self.layout.pack(Rec { deleted: true, ..rec }))?;
                self.stats.primary_deletes += 1;
                return self.scan_step();
            }
        }
        Err(Error::ImproperDeletion)
    }

    fn supports_delete(&self) -> bool {
        true
    }

    fn space_bits(&self) -> u64 {
        self.dict.space_bits() + self.secondary.space_bits()
    }

    fn level(&self) -> u32 {
        self.level
    }

    fn record_count(&self) -> u64 {
        self.dict.len() + self.secondary.len()
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
        self.retired_rebuilds + self.dict.rebuilds() + self.secondary.rebuilds()
    }

    fn peak_fill(&self) -> f64 {
        self.peak_fill
    }
}
