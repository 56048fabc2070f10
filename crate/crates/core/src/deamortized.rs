//! Growable filter whose level transitions are spread over the inserts that
//! follow them. Each insert migrates at most [`MOVES_PER_INSERT`] source
//! records, and queries consult both dictionaries while a migration runs.
//! Keys are one bit longer than in [`crate::GrowableFilter`], which pays for
//! the second lookup.

use crate::compact_dict::{DictConfig, DictCursor, LevelDict};
use crate::error::{Error, Result};
use crate::growable_filter::{
    check_stream_room, extend_record, level_bound, level_capacity, level_of_position, GrowConfig,
};
use crate::hashing::{Buffer, HashParams};
use crate::stats::{ProbeSummary, QueryStats};
use crate::Filter;

pub const MOVES_PER_INSERT: usize = 8;
pub const KEY_OFFSET: u32 = 3;

#[derive(Clone, Debug)]
struct Migration {
    source: LevelDict,
    cursor: DictCursor,
    moved: u64,
}

/// Work accounting across the whole stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WorkStats {
    pub max_moves_per_insert: u64,
    pub max_dict_ops_per_insert: u64,
    pub migrations_started: u64,
    pub migrations_finished: u64,
    /// Migrations that finished after the midpoint of their subsequence.
    pub late_finishes: u64,
    /// Largest `(insert index within subsequence at completion) / max(1, half length)`.
    pub worst_finish_ratio_num: u64,
    pub worst_finish_ratio_den: u64,
}

#[derive(Clone, Debug)]
pub struct DeamortizedFilter {
    config: GrowConfig,
    params: HashParams,
    level: u32,
    inserted: u64,
    steps_per_insert: usize,
    target: LevelDict,
    migration: Option<Migration>,
    queries: QueryStats,
    retired_probes: ProbeSummary,
    retired_rebuilds: u64,
    peak_fill: f64,
    work: WorkStats,
}

impl DeamortizedFilter {
    pub fn new(config: GrowConfig) -> Result<Self> {
        Self::with_steps(config, MOVES_PER_INSERT)
    }

    pub fn with_steps(config: GrowConfig, steps_per_insert: usize) -> Result<Self> {
        config.validate()?;
        if steps_per_insert == 0 {
            return Err(Error::Config("migration needs at least one move per insert".into()));
        }
        let params = HashParams::derive(config.epsilon, config.w, config.seed, KEY_OFFSET, 1)?;
        let level = config.i0;
        let target = LevelDict::with_reserve(Self::dict_config(&params, &config, level), 0)?;
        Ok(DeamortizedFilter {
            config,
            params,
            level,
            inserted: 0,
            steps_per_insert,
            target,
            migration: None,
            queries: QueryStats::default(),
            retired_probes: ProbeSummary::default(),
            retired_rebuilds: 0,
            peak_fill: 0.0,
            work: WorkStats::default(),
        })
    }

    fn dict_config(params: &HashParams, config: &GrowConfig, level: u32) -> DictConfig {
        DictConfig::new(params.level_bits(level), Buffer::encoded_bits(params.r), level_capacity(level))
            .with_load_limit(config.load_limit)
    }

    pub fn params(&self) -> &HashParams {
        &self.params
    }

    pub fn work(&self) -> WorkStats {
        self.work
    }

    pub fn is_migrating(&self) -> bool {
        self.migration.is_some()
    }

    pub fn target(&self) -> &LevelDict {
        &self.target
    }

    pub fn source(&self) -> Option<&LevelDict> {
        self.migration.as_ref().map(|m| &m.source)
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    fn sub_count(&self) -> u64 {
        let start = if self.level == self.config.i0 { 0 } else { (1u64 << (self.level - 1)) - 1 };
        self.inserted - start
    }

    fn begin_migration(&mut self) -> Result<()> {
        if self.migration.is_some() {
            return Err(Error::Invariant(format!(
                "migration into level {} still running when the next one is due",
                self.level
            )));
        }
        let next = self.level + 1;
        if next > self.config.w {
            return Err(Error::UniverseExhausted(self.config.w));
        }
        let n = self.target.len();
        let fresh = LevelDict::with_reserve(Self::dict_config(&self.params, &self.config, next), n + n / 4 + 16)?;
        let source = std::mem::replace(&mut self.target, fresh);
        let cursor = source.cursor();
        self.migration = Some(Migration { source, cursor, moved: 0 });
        self.level = next;
        self.work.migrations_started += 1;
        Ok(())
    }

    /// Moves up to `steps_per_insert` records; returns (moves, target inserts).
    fn migrate_slice(&mut self) -> Result<(u64, u64)> {
        let Some(mig) = self.migration.as_mut() else { return Ok((0, 0)) };
        let batch = mig.source.next_batch(&mut mig.cursor, self.steps_per_insert)?;
        let r = self.params.r;
        let mut ops = 0;
        let mut failure = None;
        for rec in &batch {
            let buf = Buffer::decode(rec.sat, r).ok_or_else(|| Error::Invariant("corrupt buffer".into()))?;
            extend_record(rec.key, buf, |k, b| {
                ops += 1;
                if failure.is_none() {
                    if let Err(e) = self.target.insert(k, b.encode()) {
                        failure = Some(e);
                    }
                }
            });
        }
        if let Some(e) = failure {
            return Err(capacity_is_invariant(e, self.level));
        }
        mig.moved += batch.len() as u64;
        if mig.cursor.is_done() {
            self.finish_migration();
        }
        Ok((batch.len() as u64, ops))
    }

    fn finish_migration(&mut self) {
        let mig = self.migration.take().expect("migration in progress");
        self.retired_probes.merge(&mig.source.probe_summary());
        self.retired_rebuilds += mig.source.rebuilds();
        self.work.migrations_finished += 1;
        // subsequence of level i has 2^(i-1) inserts; its midpoint is 2^(i-2)
        let half = if self.level >= 2 { 1u64 << (self.level - 2) } else { 1 };
        let at = self.sub_count();
        if at > half.max(1) {
            self.work.late_finishes += 1;
        }
        let (n, d) = (self.work.worst_finish_ratio_num, self.work.worst_finish_ratio_den.max(1));
        if at as u128 * d as u128 > n as u128 * half as u128 {
            self.work.worst_finish_ratio_num = at;
            self.work.worst_finish_ratio_den = half;
        }
    }

    /// Drives any running migration to completion (test and teardown helper).
    pub fn finish_pending(&mut self) -> Result<()> {
        while self.migration.is_some() {
            self.migrate_slice()?;
        }
        Ok(())
    }

    fn note_fill(&mut self) {
        let fill = self.target.len() as f64 / level_bound(self.level) as f64;
        if fill > self.peak_fill {
            self.peak_fill = fill;
        }
    }
}

fn capacity_is_invariant(e: Error, level: u32) -> Error {
    match e {
        Error::Capacity { .. } => Error::Invariant(format!("level {level} overflowed its capacity bound")),
        e => e,
    }
}

impl Filter for DeamortizedFilter {
    fn insert(&mut self, x: u64) -> Result<()> {
        check_stream_room(self.inserted, self.config.w)?;
        let pos = self.inserted + 1;
        if level_of_position(pos, self.config.i0) > self.level {
            self.begin_migration()?;
        }
        self.inserted = pos;
        let (moves, mut ops) = self.migrate_slice()?;
        let full = self.params.full_sig(x);
        let (key, buf) = self.params.split_at_level(&full, self.level);
        self.target.insert(key.value, buf.encode()).map_err(|e| capacity_is_invariant(e, self.level))?;
        ops += 1;
        self.work.max_moves_per_insert = self.work.max_moves_per_insert.max(moves);
        self.work.max_dict_ops_per_insert = self.work.max_dict_ops_per_insert.max(ops);
        self.note_fill();
        Ok(())
    }

    fn contains(&self, x: u64) -> bool {
        let full = self.params.full_sig(x);
        let hit = self.target.contains_key(full.prefix(self.params.level_bits(self.level)).value);
        match &self.migration {
            None => {
                self.queries.record(1);
                hit
            }
            Some(m) => {
                let old = m.source.contains_key(full.prefix(self.params.level_bits(self.level - 1)).value);
                self.queries.record(2);
                hit | old
            }
        }
    }

    fn space_bits(&self) -> u64 {
        self.target.space_bits() + self.migration.as_ref().map_or(0, |m| m.source.space_bits())
    }

    fn level(&self) -> u32 {
        self.level
    }

    fn record_count(&self) -> u64 {
        self.target.len() + self.migration.as_ref().map_or(0, |m| m.source.len())
    }

    fn probe_summary(&self) -> ProbeSummary {
        let mut s = self.retired_probes.clone();
        s.merge(&self.target.probe_summary());
        if let Some(m) = &self.migration {
            s.merge(&m.source.probe_summary());
        }
        s
    }

    fn query_stats(&self) -> &QueryStats {
        &self.queries
    }

    fn rebuilds(&self) -> u64 {
        self.retired_rebuilds + self.target.rebuilds() + self.migration.as_ref().map_or(0, |m| m.source.rebuilds())
    }

    fn peak_fill(&self) -> f64 {
        self.peak_fill
    }
}
