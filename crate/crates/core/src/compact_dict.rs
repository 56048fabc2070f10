//! A compact dynamic multimap from fixed-width keys to small satellites.
//!
//! The table is a quotient table in the rank/select style. Keys are first
//! scrambled by an invertible multiply modulo `2^key_bits`, so keys sharing
//! a long prefix do not crowd one home. The scrambled key's leading `q` bits
//! (the quotient) select a home slot among `m` homes and only the remaining
//! bits are stored. Records with the same home form a run; runs
//! are kept in home order, each starting at `max(home, previous run end + 1)`.
//!
//! Per slot the table keeps a `used` bit, a `runend` bit and the packed
//! payload (stored key remainder followed by the satellite). Per home there
//! is an `occupied` bit, and every 64-slot block carries a one-byte `spill`:
//! how many slots from the block start onward hold runs of homes that lie
//! before the block. A lookup therefore touches the home's metadata word, a
//! short select over `runend`, and the run itself.
//!
//! `m` is not a power of two: the quotient is spread with
//! `home = (Q * m) >> q`, which lets the allocation track the record count
//! closely instead of doubling.

use crate::error::{Error, Result};
use crate::stats::{ProbeStats, ProbeSummary};

/// Default memory cap for a single dictionary, in bits.
pub const DEFAULT_MEM_CAP_BITS: u64 = 1 << 40;
/// Fixed bookkeeping charged by [`LevelDict::space_bits`].
pub const HEADER_BITS: u64 = 256;

const BLOCK: usize = 64;
const MIN_HOMES: usize = 16;
const GROWTH: f64 = 1.5;
const REBUILD_GROWTH: f64 = 1.25;
const SCRAMBLE: u128 = 0x9e37_79b9_7f4a_7c15_f39c_c060_5ced_c835;
const UNSCRAMBLE: u128 = mul_inverse(SCRAMBLE);

/// Inverse of an odd `a` modulo `2^128` (Newton iteration).
const fn mul_inverse(a: u128) -> u128 {
    let mut x = a;
    let mut i = 0;
    while i < 7 {
        x = x.wrapping_mul(2u128.wrapping_sub(a.wrapping_mul(x)));
        i += 1;
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DictConfig {
    pub key_bits: u32,
    pub sat_bits: u32,
    pub capacity: u64,
    pub load_limit: f64,
    pub mem_cap_bits: u64,
}

impl DictConfig {
    pub fn new(key_bits: u32, sat_bits: u32, capacity: u64) -> Self {
        DictConfig { key_bits, sat_bits, capacity, load_limit: 0.85, mem_cap_bits: DEFAULT_MEM_CAP_BITS }
    }

    pub fn with_load_limit(mut self, load_limit: f64) -> Self {
        self.load_limit = load_limit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_bits == 0 || self.key_bits > 128 {
            return Err(Error::Param(format!("key width {} outside 1..=128", self.key_bits)));
        }
        if self.sat_bits > 64 {
            return Err(Error::Param(format!("satellite width {} exceeds 64", self.sat_bits)));
        }
        if self.capacity == 0 {
            return Err(Error::Param("capacity must be positive".into()));
        }
        if !(self.load_limit > 0.0 && self.load_limit < 1.0) {
            return Err(Error::Param(format!("load limit {} outside (0, 1)", self.load_limit)));
        }
        let requested = self.capacity.saturating_mul((self.key_bits + self.sat_bits) as u64);
        if requested > self.mem_cap_bits {
            return Err(Error::Allocation { requested, cap: self.mem_cap_bits });
        }
        Ok(())
    }

    /// Home count for a table sized to hold the full capacity.
    pub fn full_homes(&self) -> usize {
        ((self.capacity as f64 / self.load_limit).ceil() as usize).max(MIN_HOMES)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DictRecord {
    pub key: u128,
    pub sat: u64,
}

impl DictRecord {
    pub fn new(key: u128, sat: u64) -> Self {
        DictRecord { key, sat }
    }
}

/// Resumable enumeration position; invalidated by any mutation.
#[derive(Clone, Copy, Debug)]
pub struct DictCursor {
    epoch: u64,
    pos: Option<(usize, usize)>,
    fresh: bool,
}

impl DictCursor {
    pub fn is_done(&self) -> bool {
        !self.fresh && self.pos.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Packed {
    words: Vec<u64>,
    width: u32,
}

impl Packed {
    fn new(len: usize, width: u32) -> Self {
        // two spare words let every access read a 192-bit window
        let words = (len * width as usize).div_ceil(64) + 2;
        Packed { words: vec![0; words], width }
    }

    #[inline]
    fn get(&self, i: usize) -> u128 {
        let w = self.width;
        if w == 0 {
            return 0;
        }
        let o = i * w as usize;
        let (wi, bi) = (o / 64, (o % 64) as u32);
        let v = self.words[wi] as u128 | (self.words[wi + 1] as u128) << 64;
        let mut x = v >> bi;
        if bi + w > 128 {
            x |= (self.words[wi + 2] as u128) << (128 - bi);
        }
        if w == 128 {
            x
        } else {
            x & ((1u128 << w) - 1)
        }
    }

    #[inline]
    fn set(&mut self, i: usize, val: u128) {
        let w = self.width;
        if w == 0 {
            return;
        }
        let mask = if w == 128 { u128::MAX } else { (1u128 << w) - 1 };
        let val = val & mask;
        let o = i * w as usize;
        let (wi, bi) = (o / 64, (o % 64) as u32);
        let mut v = self.words[wi] as u128 | (self.words[wi + 1] as u128) << 64;
        v = (v & !(mask << bi)) | (val << bi);
        self.words[wi] = v as u64;
        self.words[wi + 1] = (v >> 64) as u64;
        if bi + w > 128 {
            let hi_bits = bi + w - 128;
            let hi_mask = (1u64 << hi_bits) - 1;
            self.words[wi + 2] = (self.words[wi + 2] & !hi_mask) | (val >> (128 - bi)) as u64;
        }
    }
}

#[inline]
fn bit(v: &[u64], i: usize) -> bool {
    (v[i / 64] >> (i % 64)) & 1 == 1
}

#[inline]
fn put(v: &mut [u64], i: usize, on: bool) {
    let m = 1u64 << (i % 64);
    if on {
        v[i / 64] |= m;
    } else {
        v[i / 64] &= !m;
    }
}

/// Position of the `k`-th (1-based) set bit of `x`.
#[inline]
fn select_in_word(mut x: u64, k: u32) -> u32 {
    for _ in 1..k {
        x &= x - 1;
    }
    x.trailing_zeros()
}

/// Index of the first set bit at or after `from`, if any.
fn next_set(v: &[u64], from: usize, limit: usize) -> Option<usize> {
    if from >= limit {
        return None;
    }
    let mut wi = from / 64;
    let mut x = v[wi] & (u64::MAX << (from % 64));
    loop {
        if x != 0 {
            let i = wi * 64 + x.trailing_zeros() as usize;
            return (i < limit).then_some(i);
        }
        wi += 1;
        if wi * 64 >= limit {
            return None;
        }
        x = v[wi];
    }
}

fn next_clear(v: &[u64], from: usize, limit: usize) -> Option<usize> {
    if from >= limit {
        return None;
    }
    let mut wi = from / 64;
    let mut x = !v[wi] & (u64::MAX << (from % 64));
    loop {
        if x != 0 {
            let i = wi * 64 + x.trailing_zeros() as usize;
            return (i < limit).then_some(i);
        }
        wi += 1;
        if wi * 64 >= limit {
            return None;
        }
        x = !v[wi];
    }
}

/// Raised internally when a placement would overrun the physical table or a
/// spill counter; answered by rebuilding into more homes.
struct Structural;

#[derive(Clone, Debug)]
struct Table {
    m: usize,
    nslots: usize,
    q: u32,
    rem_bits: u32,
    payload: Packed,
    used: Vec<u64>,
    runend: Vec<u64>,
    occupied: Vec<u64>,
    spill: Vec<u8>,
}

impl Table {
    fn new(m: usize, key_bits: u32, sat_bits: u32) -> Table {
        let m = m.max(MIN_HOMES);
        let q = (usize::BITS - 1 - m.leading_zeros()).min(key_bits);
        let rem_bits = key_bits - q;
        let extra = (m / 8).clamp(8, BLOCK);
        let nslots = m + extra;
        Table {
            m,
            nslots,
            q,
            rem_bits,
            payload: Packed::new(nslots, rem_bits + sat_bits),
            used: vec![0; nslots.div_ceil(64)],
            runend: vec![0; nslots.div_ceil(64)],
            occupied: vec![0; m.div_ceil(64)],
            spill: vec![0; m.div_ceil(BLOCK)],
        }
    }

    fn space_bits(&self) -> u64 {
        64 * (self.payload.words.len() + self.used.len() + self.runend.len() + self.occupied.len()) as u64
            + 8 * self.spill.len() as u64
    }

    #[inline]
    fn home_of(&self, quotient: u128) -> usize {
        ((quotient * self.m as u128) >> self.q) as usize
    }

    #[inline]
    fn quotient_of(&self, home: usize) -> u128 {
        ((home as u128) << self.q).div_ceil(self.m as u128)
    }

    #[inline]
    fn key_mask(&self) -> u128 {
        let kb = self.q + self.rem_bits;
        if kb >= 128 {
            u128::MAX
        } else {
            (1u128 << kb) - 1
        }
    }

    #[inline]
    fn split(&self, key: u128) -> (usize, u128) {
        let key = key.wrapping_mul(SCRAMBLE) & self.key_mask();
        let quotient = if self.rem_bits >= 128 { 0 } else { key >> self.rem_bits };
        let rem = if self.rem_bits == 0 { 0 } else { key & ((1u128 << self.rem_bits) - 1) };
        (self.home_of(quotient), rem)
    }

    #[inline]
    fn join(&self, home: usize, rem: u128) -> u128 {
        let scrambled = if self.q == 0 { rem } else { (self.quotient_of(home) << self.rem_bits) | rem };
        scrambled.wrapping_mul(UNSCRAMBLE) & self.key_mask()
    }

    /// Runs of homes in `[64b, h]` counted from the block base, and the base.
    #[inline]
    fn block_rank(&self, h: usize) -> (u32, usize) {
        let b = h / BLOCK;
        let word = self.occupied[b];
        let upto = h % 64;
        let mask = if upto == 63 { u64::MAX } else { (1u64 << (upto + 1)) - 1 };
        ((word & mask).count_ones(), b * BLOCK + self.spill[b] as usize)
    }

    /// Positions of the `t-1`-th and `t`-th runends at or after `from`
    /// (1-based; the first is `None` when `t == 1`), and the words touched.
    fn select_pair(&self, from: usize, t: u32) -> (Option<usize>, usize, u32) {
        debug_assert!(t >= 1);
        let mut wi = from / 64;
        let mut x = self.runend[wi] & (u64::MAX << (from % 64));
        let mut need = t;
        let mut prev = None;
        let mut words = 1;
        loop {
            let c = x.count_ones();
            if c >= need {
                let pos = wi * 64 + select_in_word(x, need) as usize;
                if need >= 2 {
                    prev = Some(wi * 64 + select_in_word(x, need - 1) as usize);
                }
                return (prev, pos, words);
            }
            if c >= 1 && need - c == 1 {
                prev = Some(wi * 64 + 63 - x.leading_zeros() as usize);
            }
            need -= c;
            wi += 1;
            words += 1;
            x = self.runend[wi];
        }
    }

    /// Slot range of the run of occupied home `h`, and metadata words touched.
    #[inline]
    fn run_bounds(&self, h: usize) -> (usize, usize, u32) {
        let (t, base) = self.block_rank(h);
        let (prev, end, words) = self.select_pair(base, t);
        let start = match prev {
            Some(p) => h.max(p + 1),
            None => h.max(base),
        };
        (start, end, words)
    }

    /// Where a new run for unoccupied home `h` would begin.
    fn insertion_point(&self, h: usize) -> usize {
        let (t, base) = self.block_rank(h);
        if t == 0 {
            h.max(base)
        } else {
            let (_, end, _) = self.select_pair(base, t);
            h.max(end + 1)
        }
    }

    fn find(&self, h: usize, payload: u128) -> Option<(usize, usize, usize)> {
        if !bit(&self.occupied, h) {
            return None;
        }
        let (start, end, _) = self.run_bounds(h);
        (start..=end).find(|&s| self.payload.get(s) == payload).map(|s| (s, start, end))
    }

    fn try_place(&mut self, h: usize, payload: u128) -> std::result::Result<(), Structural> {
        let was_occupied = bit(&self.occupied, h);
        let p = if was_occupied { self.run_bounds(h).1 + 1 } else { self.insertion_point(h) };
        let e = next_clear(&self.used, p, self.nslots).ok_or(Structural)?;
        // every block starting in (h, e] gains one slot of earlier-home runs
        let first_block = h / BLOCK + 1;
        let mut b = first_block;
        while b < self.spill.len() && b * BLOCK <= e {
            if self.spill[b] == u8::MAX {
                return Err(Structural);
            }
            b += 1;
        }
        for k in (p..e).rev() {
            let v = self.payload.get(k);
            self.payload.set(k + 1, v);
            let e = bit(&self.runend, k);
            put(&mut self.runend, k + 1, e);
        }
        self.payload.set(p, payload);
        put(&mut self.used, e, true);
        if was_occupied {
            put(&mut self.runend, p - 1, false);
        } else {
            put(&mut self.occupied, h, true);
        }
        put(&mut self.runend, p, true);
        let mut b = first_block;
        while b < self.spill.len() && b * BLOCK <= e {
            self.spill[b] += 1;
            b += 1;
        }
        Ok(())
    }

    fn next_occupied(&self, from: usize) -> Option<usize> {
        next_set(&self.occupied, from, self.m)
    }

    fn remove_at(&mut self, h: usize, j: usize, start: usize, end: usize) {
        for k in j..end {
            let v = self.payload.get(k + 1);
            self.payload.set(k, v);
        }
        if start == end {
            put(&mut self.occupied, h, false);
            put(&mut self.runend, j, false);
        } else {
            put(&mut self.runend, end, false);
            put(&mut self.runend, end - 1, true);
        }
        let mut hole = end;
        let mut cur = h;
        loop {
            let next = hole + 1;
            if next >= self.nslots || !bit(&self.used, next) {
                break;
            }
            let h2 = self.next_occupied(cur + 1).expect("used slot without an owning home");
            if h2 >= next {
                break;
            }
            let e2 = next_set(&self.runend, next, self.nslots).expect("run without an end");
            for k in next..=e2 {
                let v = self.payload.get(k);
                self.payload.set(k - 1, v);
            }
            put(&mut self.runend, e2, false);
            put(&mut self.runend, e2 - 1, true);
            hole = e2;
            cur = h2;
        }
        put(&mut self.used, hole, false);
        self.payload.set(hole, 0);
        let mut b = h / BLOCK + 1;
        while b < self.spill.len() && b * BLOCK <= hole {
            self.spill[b] -= 1;
            b += 1;
        }
    }

    fn first_pos(&self) -> Option<(usize, usize)> {
        self.next_occupied(0).map(|h| (h, h))
    }

    fn advance(&self, (h, s): (usize, usize)) -> Option<(usize, usize)> {
        if bit(&self.runend, s) {
            self.next_occupied(h + 1).map(|h2| (h2, h2.max(s + 1)))
        } else {
            Some((h, s + 1))
        }
    }
}

/// The per-level dictionary.
#[derive(Clone, Debug)]
pub struct LevelDict {
    config: DictConfig,
    table: Option<Table>,
    count: u64,
    epoch: u64,
    rebuilds: u64,
    resizes: u64,
    max_count: u64,
    probes: ProbeStats,
}

impl LevelDict {
    /// A dictionary whose table is sized for the full capacity up front.
    pub fn new(config: DictConfig) -> Result<Self> {
        config.validate()?;
        let mut d = Self::empty(config)?;
        d.table = Some(Table::new(config.full_homes(), config.key_bits, config.sat_bits));
        Ok(d)
    }

    /// A dictionary that allocates for `reserve` records and grows on demand
    /// up to the full capacity.
    pub fn with_reserve(config: DictConfig, reserve: u64) -> Result<Self> {
        let mut d = Self::empty(config)?;
        if reserve > 0 {
            let homes = (reserve.min(config.capacity) as f64 / config.load_limit).ceil() as usize;
            d.table = Some(Table::new(homes, config.key_bits, config.sat_bits));
        }
        Ok(d)
    }

    fn empty(config: DictConfig) -> Result<Self> {
        config.validate()?;
        if config.key_bits + config.sat_bits > 128 {
            return Err(Error::RecordWidth { key_bits: config.key_bits, sat_bits: config.sat_bits });
        }
        Ok(LevelDict {
            config,
            table: None,
            count: 0,
            epoch: 0,
            rebuilds: 0,
            resizes: 0,
            max_count: 0,
            probes: ProbeStats::default(),
        })
    }

    pub fn config(&self) -> &DictConfig {
        &self.config
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Largest record count held at any point.
    pub fn max_len(&self) -> u64 {
        self.max_count
    }

    /// Structural rebuilds (a placement overran the table or a spill counter).
    pub fn rebuilds(&self) -> u64 {
        self.rebuilds
    }

    /// Load-driven reallocations.
    pub fn resizes(&self) -> u64 {
        self.resizes
    }

    pub fn homes(&self) -> usize {
        self.table.as_ref().map_or(0, |t| t.m)
    }

    pub fn slots(&self) -> usize {
        self.table.as_ref().map_or(0, |t| t.nslots)
    }

    pub fn probe_stats(&self) -> &ProbeStats {
        &self.probes
    }

    pub fn probe_summary(&self) -> ProbeSummary {
        self.probes.summary()
    }

    /// Total allocated bits, slot metadata included.
    pub fn space_bits(&self) -> u64 {
        HEADER_BITS + self.table.as_ref().map_or(0, Table::space_bits)
    }

    fn max_homes(&self) -> usize {
        self.config.full_homes()
    }

    fn check_record(&self, key: u128, sat: u64) -> Result<()> {
        let kb = self.config.key_bits;
        let sb = self.config.sat_bits;
        let key_ok = kb == 128 || key >> kb == 0;
        let sat_ok = sb == 64 || sat >> sb == 0;
        if key_ok && sat_ok {
            Ok(())
        } else {
            Err(Error::RecordWidth { key_bits: kb, sat_bits: sb })
        }
    }

    fn payload_of(rem: u128, sat: u64, sat_bits: u32) -> u128 {
        if sat_bits == 0 {
            rem
        } else {
            (rem << sat_bits) | sat as u128
        }
    }

    fn record_of(&self, t: &Table, home: usize, payload: u128) -> DictRecord {
        let sb = self.config.sat_bits;
        let sat = if sb == 0 { 0 } else { (payload & ((1u128 << sb) - 1)) as u64 };
        let rem = if sb == 0 { payload } else { payload >> sb };
        DictRecord { key: t.join(home, rem), sat }
    }

    /// Inserts a record. Returns `false` when the exact pair was already present.
    pub fn insert(&mut self, key: u128, sat: u64) -> Result<bool> {
        self.check_record(key, sat)?;
        let sb = self.config.sat_bits;
        if let Some(t) = &self.table {
            let (h, rem) = t.split(key);
            if t.find(h, Self::payload_of(rem, sat, sb)).is_some() {
                return Ok(false);
            }
        }
        if self.count >= self.config.capacity {
            return Err(Error::Capacity { capacity: self.config.capacity });
        }
        match &self.table {
            None => {
                self.table = Some(Table::new(MIN_HOMES, self.config.key_bits, sb));
            }
            Some(t) => {
                let limit = (self.config.load_limit * t.m as f64).floor() as u64;
                if self.count + 1 > limit && t.m < self.max_homes() {
                    let target = ((t.m as f64 * GROWTH).ceil() as usize).min(self.max_homes());
                    self.relocate(target);
                    self.resizes += 1;
                }
            }
        }
        loop {
            let t = self.table.as_mut().unwrap();
            let (h, rem) = t.split(key);
            let payload = Self::payload_of(rem, sat, sb);
            if t.try_place(h, payload).is_ok() {
                break;
            }
            let target = (t.m as f64 * REBUILD_GROWTH).ceil() as usize;
            self.relocate(target);
            self.rebuilds += 1;
        }
        self.count += 1;
        self.max_count = self.max_count.max(self.count);
        self.epoch += 1;
        Ok(true)
    }

    /// Removes the exact pair; `true` if it was present.
    pub fn remove(&mut self, key: u128, sat: u64) -> bool {
        if self.check_record(key, sat).is_err() {
            return false;
        }
        let sb = self.config.sat_bits;
        let Some(t) = self.table.as_mut() else { return false };
        let (h, rem) = t.split(key);
        let payload = Self::payload_of(rem, sat, sb);
        let Some((j, start, end)) = t.find(h, payload) else { return false };
        t.remove_at(h, j, start, end);
        self.count -= 1;
        self.epoch += 1;
        true
    }

    /// Re-places every record into a table with `homes` homes, preserving
    /// run order (and with it insertion order among equal keys).
    fn relocate(&mut self, mut homes: usize) {
        let records = self.iter().collect::<Vec<_>>();
        let sb = self.config.sat_bits;
        'attempt: loop {
            let mut t = Table::new(homes, self.config.key_bits, sb);
            for r in &records {
                let (h, rem) = t.split(r.key);
                if t.try_place(h, Self::payload_of(rem, r.sat, sb)).is_err() {
                    homes = (homes as f64 * REBUILD_GROWTH).ceil() as usize;
                    self.rebuilds += 1;
                    continue 'attempt;
                }
            }
            self.table = Some(t);
            self.epoch += 1;
            return;
        }
    }

    #[inline]
    fn scan_run<F: FnMut(u64)>(&self, key: u128, mut f: F) -> u32 {
        let Some(t) = &self.table else { return 1 };
        if key >> 1 >> (self.config.key_bits - 1) != 0 {
            return 1;
        }
        let sb = self.config.sat_bits;
        let (h, rem) = t.split(key);
        if !bit(&t.occupied, h) {
            return 1;
        }
        let (start, end, words) = t.run_bounds(h);
        for s in start..=end {
            let p = t.payload.get(s);
            let (r, sat) = if sb == 0 { (p, 0) } else { (p >> sb, (p & ((1u128 << sb) - 1)) as u64) };
            if r == rem {
                f(sat);
            }
        }
        words + (end - start + 1) as u32
    }

    /// Satellites of every record with this key, in insertion order.
    pub fn lookup(&self, key: u128) -> Vec<u64> {
        let mut out = Vec::new();
        self.lookup_into(key, &mut out);
        out
    }

    pub fn lookup_into(&self, key: u128, out: &mut Vec<u64>) {
        out.clear();
        let probes = self.scan_run(key, |s| out.push(s));
        self.probes.record(probes);
    }

    pub fn contains_key(&self, key: u128) -> bool {
        let mut hit = false;
        let probes = self.scan_run(key, |_| hit = true);
        self.probes.record(probes);
        hit
    }

    /// Exact-pair membership; not counted as a query probe.
    pub fn contains(&self, key: u128, sat: u64) -> bool {
        let mut hit = false;
        self.scan_run(key, |s| hit |= s == sat);
        hit
    }

    /// Lookup that bypasses the probe counters (internal bookkeeping).
    pub fn lookup_quiet(&self, key: u128, out: &mut Vec<u64>) {
        out.clear();
        self.scan_run(key, |s| out.push(s));
    }

    pub fn iter(&self) -> Iter<'_> {
        Iter { dict: self, pos: self.table.as_ref().and_then(Table::first_pos) }
    }

    pub fn records(&self) -> Vec<DictRecord> {
        self.iter().collect()
    }

    pub fn cursor(&self) -> DictCursor {
        DictCursor { epoch: self.epoch, pos: None, fresh: true }
    }

    /// Up to `max` further records from `cursor`.
    pub fn next_batch(&self, cursor: &mut DictCursor, max: usize) -> Result<Vec<DictRecord>> {
        if cursor.epoch != self.epoch {
            return Err(Error::StaleCursor);
        }
        let Some(t) = &self.table else {
            cursor.fresh = false;
            return Ok(Vec::new());
        };
        if cursor.fresh {
            cursor.pos = t.first_pos();
            cursor.fresh = false;
        }
        let mut out = Vec::with_capacity(max.min(64));
        while out.len() < max {
            let Some(pos) = cursor.pos else { break };
            out.push(self.record_of(t, pos.0, t.payload.get(pos.1)));
            cursor.pos = t.advance(pos);
        }
        Ok(out)
    }

    /// First occupied home at or after `home`.
    pub fn next_home(&self, home: usize) -> Option<usize> {
        self.table.as_ref().and_then(|t| t.next_occupied(home))
    }

    /// Records whose key maps to `home`, in slot order.
    pub fn run_at(&self, home: usize) -> Vec<DictRecord> {
        let Some(t) = &self.table else { return Vec::new() };
        if home >= t.m || !bit(&t.occupied, home) {
            return Vec::new();
        }
        let (start, end, _) = t.run_bounds(home);
        (start..=end).map(|s| self.record_of(t, home, t.payload.get(s))).collect()
    }

    /// Home index a key maps to in the current table.
    pub fn home_of_key(&self, key: u128) -> Option<usize> {
        self.table.as_ref().map(|t| t.split(key).0)
    }

    /// Checks every layout invariant; used by tests and `verify`.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invariant(m));
        let Some(t) = &self.table else {
            return if self.count == 0 { Ok(()) } else { bad("records without a table".into()) };
        };
        let mut prev_end: Option<usize> = None;
        let mut seen = 0u64;
        let mut used_slots = vec![false; t.nslots];
        let mut run_homes = Vec::new();
        let mut h = t.next_occupied(0);
        while let Some(home) = h {
            let start = prev_end.map_or(home, |p| home.max(p + 1));
            let Some(end) = next_set(&t.runend, start, t.nslots) else {
                return bad(format!("run of home {home} has no end"));
            };
            let (s2, e2, _) = t.run_bounds(home);
            if (s2, e2) != (start, end) {
                return bad(format!("home {home}: located run {s2}..={e2}, walk gives {start}..={end}"));
            }
            let mut payloads = Vec::new();
            for (s, u) in used_slots.iter_mut().enumerate().take(end + 1).skip(start) {
                *u = true;
                payloads.push(t.payload.get(s));
            }
            let n = payloads.len();
            payloads.sort_unstable();
            payloads.dedup();
            if payloads.len() != n {
                return bad(format!("duplicate record in run of home {home}"));
            }
            seen += n as u64;
            run_homes.push((home, end));
            prev_end = Some(end);
            h = t.next_occupied(home + 1);
        }
        for (s, &u) in used_slots.iter().enumerate() {
            if u != bit(&t.used, s) {
                return bad(format!("used bit of slot {s} is {}, expected {u}", bit(&t.used, s)));
            }
            if !u && bit(&t.runend, s) {
                return bad(format!("runend set on empty slot {s}"));
            }
        }
        let ends = (0..t.nslots).filter(|&s| bit(&t.runend, s)).count();
        if ends != run_homes.len() {
            return bad(format!("{ends} runends for {} runs", run_homes.len()));
        }
        let (mut idx, mut last) = (0, None);
        for b in 0..t.spill.len() {
            let s = b * BLOCK;
            while idx < run_homes.len() && run_homes[idx].0 < s {
                last = Some(run_homes[idx].1);
                idx += 1;
            }
            let expect = last.map_or(0, |e| (e + 1).saturating_sub(s));
            if expect != t.spill[b] as usize {
                return bad(format!("spill of block {b} is {}, expected {expect}", t.spill[b]));
            }
        }
        if seen != self.count {
            return bad(format!("count {} but {seen} records stored", self.count));
        }
        Ok(())
    }

    /// Serializes configuration and table. Header fields are 32-bit
    /// little-endian, followed by the table words and spill bytes.
    pub fn snapshot(&self) -> Result<Vec<u8>> {
        let cap = u32::try_from(self.config.capacity)
            .map_err(|_| Error::Snapshot("capacity does not fit the 32-bit header".into()))?;
        let mut out = Vec::new();
        let t = self.table.as_ref();
        let header = [
            self.config.key_bits,
            self.config.sat_bits,
            cap,
            (self.config.load_limit as f32).to_bits(),
            t.map_or(0, |t| t.m as u32),
            self.count as u32,
            self.rebuilds as u32,
            self.resizes as u32,
        ];
        for h in header {
            out.extend_from_slice(&h.to_le_bytes());
        }
        if let Some(t) = t {
            for v in [&t.payload.words, &t.used, &t.runend, &t.occupied] {
                for w in v.iter() {
                    out.extend_from_slice(&w.to_le_bytes());
                }
            }
            out.extend_from_slice(&t.spill);
        }
        Ok(out)
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let snap = |m: &str| Error::Snapshot(m.to_string());
        if bytes.len() < 32 {
            return Err(snap("truncated header"));
        }
        let f = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let config = DictConfig {
            key_bits: f(0),
            sat_bits: f(1),
            capacity: f(2) as u64,
            load_limit: f32::from_bits(f(3)) as f64,
            mem_cap_bits: DEFAULT_MEM_CAP_BITS,
        };
        let mut d = Self::empty(config)?;
        d.count = f(5) as u64;
        d.max_count = d.count;
        d.rebuilds = f(6) as u64;
        d.resizes = f(7) as u64;
        let m = f(4) as usize;
        let mut rest = &bytes[32..];
        if m > 0 {
            let mut t = Table::new(m, config.key_bits, config.sat_bits);
            if t.m != m {
                return Err(snap("home count below minimum"));
            }
            for v in [&mut t.payload.words, &mut t.used, &mut t.runend, &mut t.occupied] {
                let need = v.len() * 8;
                if rest.len() < need {
                    return Err(snap("truncated table"));
                }
                for (w, c) in v.iter_mut().zip(rest[..need].chunks_exact(8)) {
                    *w = u64::from_le_bytes(c.try_into().unwrap());
                }
                rest = &rest[need..];
            }
            if rest.len() != t.spill.len() {
                return Err(snap("spill section has the wrong length"));
            }
            t.spill.copy_from_slice(rest);
            d.table = Some(t);
        } else if !rest.is_empty() {
            return Err(snap("trailing bytes after an unallocated table"));
        }
        d.check_invariants().map_err(|e| Error::Snapshot(e.to_string()))?;
        Ok(d)
    }
}

pub struct Iter<'a> {
    dict: &'a LevelDict,
    pos: Option<(usize, usize)>,
}

impl Iterator for Iter<'_> {
    type Item = DictRecord;

    fn next(&mut self) -> Option<DictRecord> {
        let t = self.dict.table.as_ref()?;
        let pos = self.pos?;
        let rec = self.dict.record_of(t, pos.0, t.payload.get(pos.1));
        self.pos = t.advance(pos);
        Some(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn key(s: &str) -> u128 {
        u128::from_str_radix(s, 2).unwrap()
    }

    #[test]
    fn packed_roundtrip_across_word_boundaries() {
        for width in [1u32, 7, 13, 63, 64, 65, 100, 128] {
            let mut p = Packed::new(50, width);
            let mask = if width == 128 { u128::MAX } else { (1u128 << width) - 1 };
            let vals: Vec<u128> = (0..50u128).map(|i| (i.wrapping_mul(0x9E37_79B9_7F4A_7C15_F39C_C060_5CED_C835)) & mask).collect();
            for (i, &v) in vals.iter().enumerate() {
                p.set(i, v);
            }
            for (i, &v) in vals.iter().enumerate() {
                assert_eq!(p.get(i), v, "width {width} index {i}");
            }
        }
    }

    #[test]
    fn insert_lookup_examples() {
        let mut d = LevelDict::new(DictConfig::new(4, 4, 16)).unwrap();
        assert_eq!(d.len(), 0);
        assert!(d.records().is_empty());
        assert!(d.insert(key("1010"), 0b0011).unwrap());
        assert_eq!(d.lookup(key("1010")), vec![0b0011]);
        assert!(!d.insert(key("1010"), 0b0011).unwrap());
        assert_eq!(d.len(), 1);
        d.insert(key("1010"), 0b1100).unwrap();
        assert_eq!(d.lookup(key("1010")), vec![0b0011, 0b1100]);
        assert!(d.lookup(key("0110")).is_empty());
        d.check_invariants().unwrap();
    }

    #[test]
    fn scramble_is_invertible() {
        assert_eq!(SCRAMBLE.wrapping_mul(UNSCRAMBLE), 1);
        let t = Table::new(1000, 29, 6);
        for key in [0u128, 1, 2, 63, (1 << 29) - 1, 0x1234_5678] {
            let (h, rem) = t.split(key);
            assert_eq!(t.join(h, rem), key);
        }
        // a family sharing all but its last six bits spreads over many homes
        let homes: std::collections::HashSet<usize> = (0..64u128).map(|s| t.split((0xabcd << 6) | s).0).collect();
        assert!(homes.len() > 40);
    }

    #[test]
    fn remove_examples() {
        let mut d = LevelDict::new(DictConfig::new(10, 12, 16)).unwrap();
        d.insert(5, 7).unwrap();
        assert!(d.remove(5, 7));
        assert!(d.lookup(5).is_empty());
        assert!(!d.remove(5, 7));
        d.insert(5, 7).unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn fresh_space_is_fixed_by_config() {
        // capacity 16 at load 0.85: 19 homes, 8 spare slots, quotient 4 bits,
        // 6 + 12 payload bits in 10 words, three 1-word bitvectors, 1 spill byte
        let d = LevelDict::new(DictConfig::new(10, 12, 16)).unwrap();
        assert_eq!((d.homes(), d.slots()), (19, 27));
        assert_eq!(d.space_bits(), HEADER_BITS + 64 * (10 + 3) + 8);
        for cap in [1000u64, 4096, 30_000] {
            let c = DictConfig::new(10, 12, cap);
            let d = LevelDict::new(c).unwrap();
            let homes = (cap as f64 / 0.85).ceil() as u64;
            let stored_key = 10 - (63 - homes.leading_zeros()).min(10);
            assert!(d.space_bits() <= 2 * homes * (stored_key as u64 + 12 + 3));
        }
        let bigger = LevelDict::new(DictConfig::new(10, 12, 64)).unwrap();
        assert!(bigger.space_bits() > d.space_bits());
    }

    #[test]
    fn capacity_is_enforced() {
        let mut d = LevelDict::new(DictConfig::new(16, 0, 3)).unwrap();
        for k in 0..3 {
            d.insert(k, 0).unwrap();
        }
        assert!(!d.insert(1, 0).unwrap());
        assert_eq!(d.insert(9, 0), Err(Error::Capacity { capacity: 3 }));
    }

    #[test]
    fn width_checks() {
        let mut d = LevelDict::new(DictConfig::new(8, 2, 10)).unwrap();
        assert!(matches!(d.insert(256, 0), Err(Error::RecordWidth { .. })));
        assert!(matches!(d.insert(1, 4), Err(Error::RecordWidth { .. })));
        assert!(matches!(
            LevelDict::new(DictConfig { mem_cap_bits: 99, ..DictConfig::new(8, 2, 10) }),
            Err(Error::Allocation { .. })
        ));
    }

    #[test]
    fn stale_cursor_detected() {
        let mut d = LevelDict::new(DictConfig::new(12, 0, 100)).unwrap();
        for k in 0..10 {
            d.insert(k * 7, 0).unwrap();
        }
        let mut c = d.cursor();
        assert_eq!(d.next_batch(&mut c, 4).unwrap().len(), 4);
        d.insert(1, 0).unwrap();
        assert_eq!(d.next_batch(&mut c, 4), Err(Error::StaleCursor));
        let mut c = d.cursor();
        let mut all = Vec::new();
        loop {
            let b = d.next_batch(&mut c, 3).unwrap();
            if b.is_empty() {
                break;
            }
            all.extend(b);
        }
        assert!(c.is_done());
        assert_eq!(all, d.records());
        assert_eq!(all.len(), 11);
    }

    #[test]
    fn lazy_growth_and_dense_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = DictConfig::new(40, 6, 20_000);
        let mut d = LevelDict::with_reserve(cfg, 0).unwrap();
        let mut shadow = Vec::new();
        for _ in 0..20_000 {
            let k = rng.gen::<u128>() & ((1 << 40) - 1);
            let s = rng.gen_range(0..64);
            d.insert(k, s).unwrap();
            shadow.push(DictRecord::new(k, s));
        }
        d.check_invariants().unwrap();
        let mut got = d.records();
        got.sort();
        shadow.sort();
        shadow.dedup();
        assert_eq!(got, shadow);
        assert!(d.resizes() > 0);
        assert!(d.homes() <= (cfg.full_homes() as f64 * 1.6) as usize);
    }

    #[test]
    fn wide_keys_roundtrip() {
        let mut d = LevelDict::new(DictConfig::new(73, 14, 500)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let recs: Vec<_> = (0..500)
            .map(|_| DictRecord::new(rng.gen::<u128>() & ((1 << 73) - 1), rng.gen_range(0..1 << 14)))
            .collect();
        for r in &recs {
            d.insert(r.key, r.sat).unwrap();
        }
        for r in &recs {
            assert!(d.lookup(r.key).contains(&r.sat));
        }
        d.check_invariants().unwrap();
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let mut d = LevelDict::with_reserve(DictConfig::new(20, 5, 3000), 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            d.insert(rng.gen_range(0..1 << 20), rng.gen_range(0..32)).unwrap();
        }
        let bytes = d.snapshot().unwrap();
        let back = LevelDict::restore(&bytes).unwrap();
        assert_eq!(back.records(), d.records());
        assert_eq!(back.snapshot().unwrap(), bytes);
        assert!(LevelDict::restore(&bytes[..bytes.len() - 1]).is_err());
        let empty = LevelDict::with_reserve(DictConfig::new(20, 5, 3000), 0).unwrap();
        let b2 = empty.snapshot().unwrap();
        assert_eq!(LevelDict::restore(&b2).unwrap().snapshot().unwrap(), b2);
    }

    #[test]
    fn probes_stay_short_at_target_load() {
        let cfg = DictConfig::new(30, 6, 8192);
        let mut total = ProbeSummary::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut d = LevelDict::new(cfg).unwrap();
            let fill = (0.85 * d.homes() as f64) as usize;
            let fill = fill.min(cfg.capacity as usize);
            for _ in 0..fill {
                d.insert(rng.gen_range(0..1 << 30), 0).unwrap();
            }
            for _ in 0..5000 {
                d.contains_key(rng.gen_range(0..1 << 30));
            }
            total.merge(&d.probe_summary());
        }
        assert!(total.mean() <= 4.0, "mean {}", total.mean());
        assert!(total.p99() <= 32, "p99 {}", total.p99());
    }
}
