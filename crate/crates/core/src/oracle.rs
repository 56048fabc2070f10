//! Brute-force references: exact sets over a logged stream and a
//! from-scratch recomputation of the growable filter's records.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::growable_filter::{extend_record, level_of_position, GrowConfig};
use crate::hashing::{Buffer, HashParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Insert(u64),
    Delete(u64),
}

impl Op {
    pub fn key(self) -> u64 {
        match self {
            Op::Insert(x) | Op::Delete(x) => x,
        }
    }
}

/// An ordered, replayable list of operations on `w`-bit keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamLog {
    pub w: u32,
    pub ops: Vec<Op>,
}

impl StreamLog {
    pub fn new(w: u32) -> Self {
        StreamLog { w, ops: Vec::new() }
    }

    pub fn from_inserts(w: u32, keys: impl IntoIterator<Item = u64>) -> Self {
        StreamLog { w, ops: keys.into_iter().map(Op::Insert).collect() }
    }

    pub fn push(&mut self, op: Op) {
        self.ops.push(op);
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn inserts(&self) -> impl Iterator<Item = u64> + '_ {
        self.ops.iter().filter_map(|op| match op {
            Op::Insert(x) => Some(*x),
            Op::Delete(_) => None,
        })
    }

    pub fn insert_count(&self) -> usize {
        self.inserts().count()
    }

    /// Hex digits per key.
    pub fn digits(&self) -> usize {
        self.w.div_ceil(4) as usize
    }

    /// One lowercase hex key per line, zero-padded, deletes prefixed by `-`.
    pub fn to_text(&self) -> String {
        let d = self.digits();
        let mut s = String::with_capacity(self.ops.len() * (d + 2));
        for op in &self.ops {
            match op {
                Op::Insert(x) => writeln!(s, "{x:0d$x}").unwrap(),
                Op::Delete(x) => writeln!(s, "-{x:0d$x}").unwrap(),
            }
        }
        s
    }

    pub fn parse(text: &str, w: u32) -> Result<Self> {
        if !(1..=64).contains(&w) {
            return Err(Error::Param(format!("universe width must lie in 1..=64, got {w}")));
        }
        let mut log = StreamLog::new(w);
        let max_digits = log.digits();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let (delete, hex) = match raw.strip_prefix('-') {
                Some(rest) => (true, rest),
                None => (false, raw),
            };
            let bad = |msg: &str| Error::Parse { line, msg: format!("{msg}: {raw:?}") };
            if hex.is_empty() || hex.len() > max_digits {
                return Err(bad(&format!("expected 1 to {max_digits} hex digits")));
            }
            if !hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
                return Err(bad("expected lowercase hex"));
            }
            let x = u64::from_str_radix(hex, 16).map_err(|_| bad("expected lowercase hex"))?;
            if w < 64 && x >> w != 0 {
                return Err(bad(&format!("key does not fit in {w} bits")));
            }
            log.push(if delete { Op::Delete(x) } else { Op::Insert(x) });
        }
        Ok(log)
    }
}

/// Set semantics: the last operation on a key wins.
#[derive(Clone, Debug, Default)]
pub struct ExactSet {
    members: HashSet<u64>,
}

impl ExactSet {
    pub fn from_log(log: &StreamLog) -> Self {
        let mut s = ExactSet::default();
        for op in &log.ops {
            s.apply(*op);
        }
        s
    }

    pub fn apply(&mut self, op: Op) {
        match op {
            Op::Insert(x) => {
                self.members.insert(x);
            }
            Op::Delete(x) => {
                self.members.remove(&x);
            }
        }
    }

    pub fn contains(&self, x: u64) -> bool {
        self.members.contains(&x)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.members.iter().copied()
    }
}

/// Multiplicity-tracking set used for streams with deletions.
#[derive(Clone, Debug, Default)]
pub struct ExactMultiset {
    counts: HashMap<u64, u64>,
}

impl ExactMultiset {
    pub fn from_log(log: &StreamLog) -> Result<Self> {
        let mut s = ExactMultiset::default();
        for op in &log.ops {
            s.apply(*op)?;
        }
        Ok(s)
    }

    /// Fails on a delete of an absent key.
    pub fn apply(&mut self, op: Op) -> Result<()> {
        match op {
            Op::Insert(x) => *self.counts.entry(x).or_default() += 1,
            Op::Delete(x) => match self.counts.get_mut(&x) {
                Some(c) if *c > 1 => *c -= 1,
                Some(_) => {
                    self.counts.remove(&x);
                }
                None => return Err(Error::ImproperDeletion),
            },
        }
        Ok(())
    }

    pub fn count(&self, x: u64) -> u64 {
        self.counts.get(&x).copied().unwrap_or(0)
    }

    pub fn contains(&self, x: u64) -> bool {
        self.count(x) > 0
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&k, &c)| (k, c))
    }
}

/// Whether `x` is in the set described by `log`.
pub fn exact_member(log: &StreamLog, x: u64) -> bool {
    let mut present = false;
    for op in &log.ops {
        match *op {
            Op::Insert(y) if y == x => present = true,
            Op::Delete(y) if y == x => present = false,
            _ => {}
        }
    }
    present
}

/// The records of one element at `level`, when it entered at `entry`.
pub fn element_records(params: &HashParams, x: u64, entry: u32, level: u32) -> Vec<(u128, Buffer)> {
    assert!(entry <= level, "an element cannot be viewed below its entry level");
    let (key, buf) = params.split_at_level(&params.full_sig(x), entry);
    let mut cur = vec![(key.value, buf)];
    for _ in entry..level {
        let mut next = Vec::with_capacity(cur.len() * 2);
        for (k, b) in cur {
            extend_record(k, b, |k2, b2| next.push((k2, b2)));
        }
        cur = next;
    }
    cur
}

/// Entry levels of the inserted elements, in stream order.
pub fn entry_levels(log: &StreamLog, i0: u32) -> Vec<(u64, u32)> {
    log.inserts().enumerate().map(|(p, x)| (x, level_of_position(p as u64 + 1, i0))).collect()
}

/// The record set the growable filter should hold at `level` after
/// ingesting `log`, recomputed element by element.
pub fn reference_records(log: &StreamLog, params: &HashParams, config: &GrowConfig, level: u32) -> Vec<(u128, Buffer)> {
    let r = params.r;
    let mut out = BTreeSet::new();
    for (x, entry) in entry_levels(log, config.i0) {
        for (k, b) in element_records(params, x, entry, level) {
            out.insert((k, b.encode()));
        }
    }
    out.into_iter().map(|(k, code)| (k, Buffer::decode(code, r).expect("valid buffer code"))).collect()
}

/// Record count before duplicate collapsing: an element entering at `j`
/// with `rj` real buffer bits contributes `2^max(0, i - j - rj)` records.
pub fn uncollapsed_count(log: &StreamLog, params: &HashParams, config: &GrowConfig, level: u32) -> u64 {
    entry_levels(log, config.i0)
        .into_iter()
        .map(|(x, j)| {
            let rj = params.split_at_level(&params.full_sig(x), j).1.real_len();
            1u64 << (level - j).saturating_sub(rj)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growable_filter::GrowableFilter;
    use crate::hashing::derive_params;
    use crate::Filter;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_member_examples() {
        let log = StreamLog::parse("0000dead\n-0000dead\n00000001\n", 32).unwrap();
        assert_eq!(log.ops, vec![Op::Insert(0xdead), Op::Delete(0xdead), Op::Insert(1)]);
        assert!(!exact_member(&log, 0xdead));
        assert!(exact_member(&log, 1));
        assert!(!exact_member(&log, 2));
        let s = ExactSet::from_log(&log);
        assert!(s.contains(1) && !s.contains(0xdead));
        assert_eq!(ExactMultiset::from_log(&log).unwrap().distinct(), 1);
        let bad = StreamLog::from_inserts(32, []);
        let mut m = ExactMultiset::from_log(&bad).unwrap();
        assert_eq!(m.apply(Op::Delete(3)), Err(Error::ImproperDeletion));
    }

    #[test]
    fn text_round_trip_and_errors() {
        assert!(StreamLog::parse("", 32).unwrap().is_empty());
        let log = StreamLog { w: 20, ops: vec![Op::Insert(0xfffff), Op::Delete(0), Op::Insert(0x1a)] };
        let text = log.to_text();
        assert_eq!(text, "fffff\n-00000\n0001a\n");
        assert_eq!(StreamLog::parse(&text, 20).unwrap(), log);
        for (bad, line) in [("00\nzz\n", 2), ("0000DEAD\n", 1), ("\n", 1), ("100000000\n", 1), ("1\n-\n", 2)] {
            match StreamLog::parse(bad, 32) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{bad:?}"),
                other => panic!("{bad:?} gave {other:?}"),
            }
        }
        assert!(StreamLog::parse("fffff\n", 16).is_err());
    }

    #[test]
    fn single_element_records() {
        let p = derive_params(1.0 / 8.0, 32, 5).unwrap();
        let x = 12345;
        let (k, b) = p.split_at_level(&p.full_sig(x), 4);
        assert_eq!(element_records(&p, x, 4, 4), vec![(k.value, b)]);
        // r true-bit steps then two branching steps
        let i = 4 + p.r + 2;
        let recs = element_records(&p, x, 4, i);
        assert_eq!(recs.len(), 4);
        let true_prefix = p.full_sig(x).prefix(p.level_bits(4) + p.r).value;
        let mut suffixes: Vec<u128> = recs.iter().map(|(k, _)| k & 3).collect();
        suffixes.sort();
        assert_eq!(suffixes, vec![0, 1, 2, 3]);
        assert!(recs.iter().all(|(k, b)| k >> 2 == true_prefix && b.is_exhausted()));
    }

    #[test]
    fn cardinality_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = GrowConfig::new(1.0 / 8.0, 32, 2).with_i0(2);
        let p = derive_params(cfg.epsilon, cfg.w, cfg.seed).unwrap();
        let log = StreamLog::from_inserts(32, (0..500).map(|_| rng.gen_range(0..1u64 << 32)));
        for level in 9..=14 {
            let by_formula: u64 = {
                let mut s = 0;
                for (j, size) in subsequence_sizes(&log, cfg.i0) {
                    s += size << (level - j).saturating_sub(p.r);
                }
                s
            };
            assert_eq!(uncollapsed_count(&log, &p, &cfg, level), by_formula);
            // branch records of early elements may coincide; those collapse
            let mut all: Vec<(u128, u64)> = Vec::new();
            for (x, j) in entry_levels(&log, cfg.i0) {
                all.extend(element_records(&p, x, j, level).into_iter().map(|(k, b)| (k, b.encode())));
            }
            assert_eq!(all.len() as u64, by_formula);
            let distinct: HashSet<_> = all.into_iter().collect();
            let collapsed = reference_records(&log, &p, &cfg, level).len() as u64;
            assert_eq!(collapsed, distinct.len() as u64);
            assert!(collapsed <= by_formula);
        }
    }

    fn subsequence_sizes(log: &StreamLog, i0: u32) -> Vec<(u32, u64)> {
        let mut m = std::collections::BTreeMap::new();
        for (_, j) in entry_levels(log, i0) {
            *m.entry(j).or_insert(0u64) += 1;
        }
        m.into_iter().collect()
    }

    #[test]
    fn agrees_with_live_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = GrowConfig::new(1.0 / 16.0, 32, 9).with_i0(3);
        let mut f = GrowableFilter::new(cfg).unwrap();
        let mut log = StreamLog::new(32);
        for _ in 0..700 {
            let x = rng.gen_range(0..1u64 << 32);
            f.insert(x).unwrap();
            log.push(Op::Insert(x));
        }
        let mut live = f.records();
        live.sort_by_key(|(k, b)| (*k, b.encode()));
        assert_eq!(live, reference_records(&log, f.params(), &cfg, f.level()));
    }
}
