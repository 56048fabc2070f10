//! Measurement driver behind the command-line tool: FPR, space curves,
//! timing, and verification against the oracles. Output is CSV.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::amq_fixed::Backend;
use crate::chain_filter::{ChainConfig, ChainFilter};
use crate::deamortized::DeamortizedFilter;
use crate::deletions::DeletableFilter;
use crate::error::{Error, Result};
use crate::growable_filter::{BucketedFilter, GrowConfig, GrowableFilter, DEFAULT_DELTA, DEFAULT_I0};
use crate::hashing::derive_seed;
use crate::oracle::{reference_records, ExactSet, Op, StreamLog};
use crate::par;
use crate::stats::{ProbeSummary, QueryStats};
use crate::Filter;

pub const CSV_COLUMNS: &str = "variant,epsilon,w,seed,trial,n,level,records,space_bits,bits_per_element,fpr,fpr_stderr,mean_probes,p99_probes,rebuilds,wall_ns_per_op";

/// Smallest query count accepted for FPR runs.
pub const MIN_FPR_QUERIES: u64 = 10_000;
/// Verification compares full record sets only up to this many inserts.
pub const ORACLE_LIMIT: u64 = 4096;
/// Share of generated operations that delete a live element.
pub const GENERATED_DELETE_RATE: f64 = 0.25;
const QUERY_CHUNK: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Chain,
    Grow,
    GrowBucketed,
    GrowDeamortized,
    GrowDeletions,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Chain, Variant::Grow, Variant::GrowBucketed, Variant::GrowDeamortized, Variant::GrowDeletions];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Chain => "chain",
            Variant::Grow => "grow",
            Variant::GrowBucketed => "grow-bucketed",
            Variant::GrowDeamortized => "grow-deamortized",
            Variant::GrowDeletions => "grow-deletions",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub variant: Variant,
    pub epsilon: f64,
    pub w: u32,
    /// Inserts per trial (ignored when `input` is set).
    pub n: u64,
    pub queries: u64,
    pub trials: u32,
    pub seed: u64,
    pub i0: u32,
    pub delta: f64,
    pub backend: Backend,
    pub deletions: bool,
    /// Checkpoints are the powers of two from `2^checkpoint_lo` up to `n`, plus `n`.
    pub checkpoint_lo: u32,
    pub input: Option<PathBuf>,
    /// Verification only: drop one element's records before the final check.
    pub inject_fault: bool,
}

impl RunSpec {
    pub fn new(variant: Variant, epsilon: f64, w: u32, n: u64) -> Self {
        RunSpec {
            variant,
            epsilon,
            w,
            n,
            queries: 1_000_000,
            trials: 1,
            seed: 1,
            i0: DEFAULT_I0,
            delta: DEFAULT_DELTA,
            backend: Backend::Sigset,
            deletions: false,
            checkpoint_lo: DEFAULT_I0,
            input: None,
            inject_fault: false,
        }
    }

    /// The variant after applying the `deletions` switch.
    pub fn effective_variant(&self) -> Result<Variant> {
        match (self.variant, self.deletions) {
            (v, false) => Ok(v),
            (Variant::Grow | Variant::GrowDeletions, true) => Ok(Variant::GrowDeletions),
            (Variant::GrowDeamortized, true) => {
                Err(Error::Config("deletions cannot be combined with the de-amortized variant".into()))
            }
            (v, true) => Err(Error::Config(format!("variant {v} does not support deletions"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_variant()?;
        if self.trials == 0 {
            return Err(Error::Config("at least one trial is required".into()));
        }
        if !(8..=64).contains(&self.w) {
            return Err(Error::Config(format!("universe width must lie in 8..=64, got {}", self.w)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.input.is_none() && self.w < 64 && self.n > 1u64 << (self.w - 1) {
            return Err(Error::Config(format!("{} distinct keys do not fit comfortably in {} bits", self.n, self.w)));
        }
        Ok(())
    }

    fn grow_config(&self, seed: u64) -> GrowConfig {
        GrowConfig { i0: self.i0, delta: self.delta, ..GrowConfig::new(self.epsilon, self.w, seed) }
    }

    fn trial_seed(&self, trial: u32) -> u64 {
        derive_seed(self.seed, trial as u64)
    }

    fn describe(&self) -> String {
        let input = self.input.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        format!(
            "variant={} epsilon={} w={} n={} queries={} trials={} seed={} i0={} delta={} backend={} deletions={} checkpoint_lo={} input={}",
            self.variant, self.epsilon, self.w, self.n, self.queries, self.trials, self.seed, self.i0, self.delta,
            self.backend, self.deletions, self.checkpoint_lo, input
        )
    }
}

/// Any of the filter variants behind one concrete type.
#[derive(Clone, Debug)]
pub enum AnyFilter {
    Chain(ChainFilter),
    Grow(GrowableFilter),
    Bucketed(BucketedFilter),
    Deamortized(DeamortizedFilter),
    Deletions(DeletableFilter),
}

macro_rules! each {
    ($s:expr, $f:ident => $e:expr) => {
        match $s {
            AnyFilter::Chain($f) => $e,
            AnyFilter::Grow($f) => $e,
            AnyFilter::Bucketed($f) => $e,
            AnyFilter::Deamortized($f) => $e,
            AnyFilter::Deletions($f) => $e,
        }
    };
}

impl AnyFilter {
    pub fn build(variant: Variant, spec: &RunSpec, seed: u64) -> Result<Self> {
        let cfg = spec.grow_config(seed);
        Ok(match variant {
            Variant::Chain => AnyFilter::Chain(ChainFilter::new(ChainConfig {
                backend: spec.backend,
                ..ChainConfig::new(spec.epsilon, spec.w, seed)
            })?),
            Variant::Grow => AnyFilter::Grow(GrowableFilter::new(cfg)?),
            Variant::GrowBucketed => AnyFilter::Bucketed(BucketedFilter::new(cfg)?),
            Variant::GrowDeamortized => AnyFilter::Deamortized(DeamortizedFilter::new(cfg)?),
            Variant::GrowDeletions => AnyFilter::Deletions(DeletableFilter::new(cfg)?),
        })
    }

    /// Serialized hash parameters, when the variant has a single set.
    pub fn params_hex(&self) -> Option<String> {
        match self {
            AnyFilter::Chain(_) => None,
            AnyFilter::Grow(f) => Some(f.params().to_hex()),
            AnyFilter::Bucketed(f) => Some(f.buckets()[0].params().to_hex()),
            AnyFilter::Deamortized(f) => Some(f.params().to_hex()),
            AnyFilter::Deletions(f) => Some(f.params().to_hex()),
        }
    }

    pub fn interleaved_space_bits(&self) -> Option<u64> {
        match self {
            AnyFilter::Bucketed(f) => Some(f.interleaved_space_bits()),
            _ => None,
        }
    }
}

impl Filter for AnyFilter {
    fn insert(&mut self, x: u64) -> Result<()> {
        each!(self, f => f.insert(x))
    }

    fn contains(&self, x: u64) -> bool {
        each!(self, f => f.contains(x))
    }

    fn delete(&mut self, x: u64) -> Result<()> {
        each!(self, f => f.delete(x))
    }

    fn supports_delete(&self) -> bool {
        each!(self, f => f.supports_delete())
    }

    fn space_bits(&self) -> u64 {
        each!(self, f => f.space_bits())
    }

    fn level(&self) -> u32 {
        each!(self, f => f.level())
    }

    fn record_count(&self) -> u64 {
        each!(self, f => f.record_count())
    }

    fn probe_summary(&self) -> ProbeSummary {
        each!(self, f => f.probe_summary())
    }

    fn query_stats(&self) -> &QueryStats {
        each!(self, f => f.query_stats())
    }

    fn rebuilds(&self) -> u64 {
        each!(self, f => f.rebuilds())
    }

    fn peak_fill(&self) -> f64 {
        each!(self, f => f.peak_fill())
    }
}

/// One CSV row. `trial` is `None` for pooled rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub variant: String,
    pub epsilon: f64,
    pub w: u32,
    pub seed: u64,
    pub trial: Option<u32>,
    pub n: u64,
    pub level: u32,
    pub records: u64,
    pub space_bits: u64,
    pub fpr: Option<f64>,
    pub fpr_stderr: Option<f64>,
    pub mean_probes: f64,
    pub p99_probes: u32,
    pub rebuilds: u64,
    pub wall_ns_per_op: Option<f64>,
}

impl ReportRow {
    pub fn bits_per_element(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.space_bits as f64 / self.n as f64
        }
    }

    fn csv_line(&self) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map_or(String::new(), |v| format!("{v:.prec$}"));
        format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{},{},{:.6},{},{},{}",
            self.variant,
            self.epsilon,
            self.w,
            self.seed,
            self.trial.map_or("pooled".to_string(), |t| t.to_string()),
            self.n,
            self.level,
            self.records,
            self.space_bits,
            self.bits_per_element(),
            opt(self.fpr, 9),
            opt(self.fpr_stderr, 9),
            self.mean_probes,
            self.p99_probes,
            self.rebuilds,
            opt(self.wall_ns_per_op, 1),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub trial: u32,
    pub key: u64,
    pub level: u32,
    pub op_index: usize,
    pub what: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trial {} op {}: key {:#x} at level {}: {}", self.trial, self.op_index, self.key, self.level, self.what)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub metadata: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Largest records-to-bound ratio any dictionary reached, over all trials.
    pub peak_fill: f64,
    /// Largest dictionary lookup count of any single query.
    pub max_query_lookups: u64,
    /// Verification failures (empty for other run kinds or on success).
    pub failures: Vec<Failure>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn pooled(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.trial.is_none())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for m in &self.metadata {
            writeln!(s, "# {m}").unwrap();
        }
        writeln!(s, "{CSV_COLUMNS}").unwrap();
        for r in &self.rows {
            writeln!(s, "{}", r.csv_line()).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Reads a stream file: one lowercase hex key per line, `-` marks a delete.
pub fn ingest(path: &Path, w: u32) -> Result<StreamLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    StreamLog::parse(&text, w)
}

fn uniform_key(rng: &mut ChaCha8Rng, w: u32) -> u64 {
    if w == 64 {
        rng.gen()
    } else {
        rng.gen_range(0..1u64 << w)
    }
}

/// `n` distinct uniform keys; with `deletions`, proper deletes of live keys
/// are interleaved as well.
pub fn generate_stream(n: u64, w: u32, seed: u64, deletions: bool) -> StreamLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(n as usize);
    let mut live: Vec<u64> = Vec::new();
    let mut log = StreamLog::new(w);
    let mut inserted = 0;
    while inserted < n {
        if deletions && !live.is_empty() && rng.gen_bool(GENERATED_DELETE_RATE) {
            let i = rng.gen_range(0..live.len());
            log.push(Op::Delete(live.swap_remove(i)));
            continue;
        }
        let x = uniform_key(&mut rng, w);
        if seen.insert(x) {
            log.push(Op::Insert(x));
            live.push(x);
            inserted += 1;
        }
    }
    log
}

/// `q` uniform keys outside `set`.
pub fn negative_queries(set: &ExactSet, q: u64, w: u32, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(q as usize);
    while (out.len() as u64) < q {
        let x = uniform_key(&mut rng, w);
        if !set.contains(x) {
            out.push(x);
        }
    }
    out
}

/// Powers of two from `2^lo` below `n`, then `n` itself.
pub fn checkpoints(n: u64, lo: u32) -> Vec<u64> {
    let mut c: Vec<u64> = (lo..64).map(|e| 1u64 << e).take_while(|&p| p < n).collect();
    if n > 0 {
        c.push(n);
    }
    c
}

struct Prepared {
    variant: Variant,
    input: Option<StreamLog>,
}

fn prepare(spec: &RunSpec) -> Result<Prepared> {
    spec.validate()?;
    let variant = spec.effective_variant()?;
    let input = spec.input.as_deref().map(|p| ingest(p, spec.w)).transpose()?;
    if let Some(log) = &input {
        if !variant_supports_delete(variant) && log.ops.iter().any(|op| matches!(op, Op::Delete(_))) {
            return Err(Error::Config(format!("input contains deletes but variant {variant} does not support them")));
        }
    }
    Ok(Prepared { variant, input })
}

fn variant_supports_delete(v: Variant) -> bool {
    v == Variant::GrowDeletions
}

impl Prepared {
    fn stream(&self, spec: &RunSpec, trial: u32) -> StreamLog {
        match &self.input {
            Some(log) => log.clone(),
            None => generate_stream(spec.n, spec.w, derive_seed(spec.trial_seed(trial), 2), self.variant == Variant::GrowDeletions),
        }
    }
}

fn base_row(spec: &RunSpec, variant: &str, trial: Option<u32>, n: u64, f: &AnyFilter) -> ReportRow {
    let probes = f.probe_summary();
    ReportRow {
        variant: variant.to_string(),
        epsilon: spec.epsilon,
        w: spec.w,
        seed: spec.seed,
        trial,
        n,
        level: f.level(),
        records: f.record_count(),
        space_bits: f.space_bits(),
        fpr: None,
        fpr_stderr: None,
        mean_probes: probes.mean(),
        p99_probes: probes.p99(),
        rebuilds: f.rebuilds(),
        wall_ns_per_op: None,
    }
}

fn apply(f: &mut AnyFilter, op: Op) -> Result<()> {
    match op {
        Op::Insert(x) => f.insert(x),
        Op::Delete(x) => f.delete(x),
    }
}

fn metadata(spec: &RunSpec, kind: &str, params: &[Option<String>]) -> Vec<String> {
    let mut m = vec![format!("run {kind}"), format!("spec {}", spec.describe())];
    for (t, p) in params.iter().enumerate() {
        m.push(match p {
            Some(hex) => format!("hash_params trial={t} {hex}"),
            None => format!("hash_params trial={t} per-link seeds derived from {}", spec.trial_seed(t as u32)),
        });
    }
    m.push("hash_params layout: a u128 le, b u128 le, ell u16, r u16, w u16, eps_bits u16, higher coefficients u128 le".into());
    m
}

struct FprTrial {
    row: ReportRow,
    positives: u64,
    queries: u64,
    params: Option<String>,
    peak_fill: f64,
    max_lookups: u64,
    probes: ProbeSummary,
}

fn fpr_trial(spec: &RunSpec, prep: &Prepared, trial: u32, timed: bool) -> Result<FprTrial> {
    let seed = spec.trial_seed(trial);
    let log = prep.stream(spec, trial);
    let mut f = AnyFilter::build(prep.variant, spec, derive_seed(seed, 1))?;
    let t0 = Instant::now();
    for op in &log.ops {
        apply(&mut f, *op)?;
    }
    let insert_ns = t0.elapsed().as_nanos();
    let truth = ExactSet::from_log(&log);
    let queries = negative_queries(&truth, spec.queries, spec.w, derive_seed(seed, 3));
    let (positives, query_ns) = if timed {
        let t1 = Instant::now();
        let p = par::count_matching_seq(&queries, |&x| f.contains(x));
        (p, t1.elapsed().as_nanos())
    } else {
        (par::count_matching(&queries, QUERY_CHUNK, |&x| f.contains(x)), 0)
    };
    let n = log.insert_count() as u64;
    let mut row = base_row(spec, prep.variant.name(), Some(trial), n, &f);
    let q = queries.len() as u64;
    let fpr = if q == 0 { 0.0 } else { positives as f64 / q as f64 };
    row.fpr = Some(fpr);
    row.fpr_stderr = Some(stderr(fpr, q));
    if timed {
        let ops = log.len() as u128 + q as u128;
        row.wall_ns_per_op = Some(if ops == 0 { 0.0 } else { (insert_ns + query_ns) as f64 / ops as f64 });
    }
    Ok(FprTrial {
        row,
        positives,
        queries: q,
        params: f.params_hex(),
        peak_fill: f.peak_fill(),
        max_lookups: f.query_stats().max_lookups(),
        probes: f.probe_summary(),
    })
}

fn stderr(p: f64, q: u64) -> f64 {
    if q == 0 {
        0.0
    } else {
        (p * (1.0 - p) / q as f64).sqrt()
    }
}

fn fpr_like(spec: &RunSpec, kind: &str, timed: bool) -> Result<RunReport> {
    let prep = prepare(spec)?;
    if spec.queries < MIN_FPR_QUERIES {
        return Err(Error::Config(format!("FPR runs need at least {MIN_FPR_QUERIES} queries, got {}", spec.queries)));
    }
    let run = |t: usize| fpr_trial(spec, &prep, t as u32, timed);
    let trials: Vec<FprTrial> = if timed {
        // timing runs one trial at a time
        par::map_indices_seq(spec.trials as usize, run)
    } else {
        par::map_indices(spec.trials as usize, run)
    }
    .into_iter()
    .collect::<Result<_>>()?;

    let mut report = RunReport {
        metadata: metadata(spec, kind, &trials.iter().map(|t| t.params.clone()).collect::<Vec<_>>()),
        ..RunReport::default()
    };
    let t = trials.len() as u64;
    let mut probes = ProbeSummary::default();
    let (mut pos, mut q) = (0, 0);
    for tr in &trials {
        report.rows.push(tr.row.clone());
        report.peak_fill = report.peak_fill.max(tr.peak_fill);
        report.max_query_lookups = report.max_query_lookups.max(tr.max_lookups);
        probes.merge(&tr.probes);
        pos += tr.positives;
        q += tr.queries;
    }
    let fpr = if q == 0 { 0.0 } else { pos as f64 / q as f64 };
    let first = &trials[0].row;
    report.rows.push(ReportRow {
        trial: None,
        level: trials.iter().map(|t| t.row.level).max().unwrap_or(0),
        records: trials.iter().map(|t| t.row.records).sum::<u64>() / t,
        space_bits: trials.iter().map(|t| t.row.space_bits).sum::<u64>() / t,
        fpr: Some(fpr),
        fpr_stderr: Some(stderr(fpr, q)),
        mean_probes: probes.mean(),
        p99_probes: probes.p99(),
        rebuilds: trials.iter().map(|t| t.row.rebuilds).sum(),
        wall_ns_per_op: timed.then(|| trials.iter().map(|t| t.row.wall_ns_per_op.unwrap_or(0.0)).sum::<f64>() / t as f64),
        ..first.clone()
    });
    Ok(report)
}

/// Measured false-positive rate on rejection-sampled true negatives, per
/// trial and pooled.
pub fn run_fpr(spec: &RunSpec) -> Result<RunReport> {
    fpr_like(spec, "fpr", false)
}

/// Like [`run_fpr`] but sequential and timed; the only run that fills
/// `wall_ns_per_op`.
pub fn run_bench(spec: &RunSpec) -> Result<RunReport> {
    fpr_like(spec, "bench", true)
}

struct SpaceTrial {
    rows: Vec<ReportRow>,
    params: Option<String>,
    peak_fill: f64,
}

/// Space after each checkpoint.
pub fn run_space(spec: &RunSpec) -> Result<RunReport> {
    let prep = prepare(spec)?;
    let trials: Vec<SpaceTrial> = par::map_indices(spec.trials as usize, |t| {
        let t = t as u32;
        let log = prep.stream(spec, t);
        let n = log.insert_count() as u64;
        let marks = checkpoints(n, spec.checkpoint_lo);
        let mut f = AnyFilter::build(prep.variant, spec, derive_seed(spec.trial_seed(t), 1))?;
        let mut rows = Vec::with_capacity(marks.len());
        let mut next = 0;
        let mut inserted = 0u64;
        for op in &log.ops {
            apply(&mut f, *op)?;
            if matches!(op, Op::Insert(_)) {
                inserted += 1;
                if next < marks.len() && inserted == marks[next] {
                    rows.push(base_row(spec, prep.variant.name(), Some(t), inserted, &f));
                    if let Some(bits) = f.interleaved_space_bits() {
                        let name = format!("{}/interleaved", prep.variant.name());
                        rows.push(ReportRow { space_bits: bits, ..base_row(spec, &name, Some(t), inserted, &f) });
                    }
                    next += 1;
                }
            }
        }
        Ok(SpaceTrial { rows, params: f.params_hex(), peak_fill: f.peak_fill() })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut report = RunReport {
        metadata: metadata(spec, "space", &trials.iter().map(|t| t.params.clone()).collect::<Vec<_>>()),
        ..RunReport::default()
    };
    for t in trials {
        report.rows.extend(t.rows);
        report.peak_fill = report.peak_fill.max(t.peak_fill);
    }
    Ok(report)
}

struct VerifyTrial {
    rows: Vec<ReportRow>,
    params: Option<String>,
    peak_fill: f64,
    failure: Option<Failure>,
}

fn verify_trial(spec: &RunSpec, prep: &Prepared, t: u32) -> Result<VerifyTrial> {
    let log = prep.stream(spec, t);
    let n = log.insert_count() as u64;
    let marks = checkpoints(n, 0);
    let cfg = spec.grow_config(derive_seed(spec.trial_seed(t), 1));
    let mut f = AnyFilter::build(prep.variant, spec, cfg.seed)?;
    let check_records = prep.variant == Variant::Grow && n <= ORACLE_LIMIT;
    let mut truth = ExactSet::default();
    let mut rows = Vec::new();
    let mut next = 0;
    let mut inserted = 0u64;
    let mut prefix = StreamLog::new(log.w);
    let fail = |op_index: usize, key: u64, level: u32, what: String| Failure { trial: t, key, level, op_index, what };

    for (i, &op) in log.ops.iter().enumerate() {
        let before = f.level();
        if let Err(e) = apply(&mut f, op) {
            if e == Error::ImproperDeletion || e.is_internal() {
                let failure = fail(i, op.key(), f.level(), format!("operation rejected: {e}"));
                return Ok(VerifyTrial { rows, params: f.params_hex(), peak_fill: f.peak_fill(), failure: Some(failure) });
            }
            return Err(e);
        }
        truth.apply(op);
        if check_records {
            prefix.push(op);
        }
        let Op::Insert(_) = op else { continue };
        inserted += 1;
        let at_mark = next < marks.len() && inserted == marks[next];
        if at_mark {
            next += 1;
            if inserted == n && spec.inject_fault {
                if let AnyFilter::Grow(g) = &mut f {
                    g.inject_fault_drop_element(op.key());
                }
            }
            let missing = truth.iter().filter(|&x| !f.contains(x)).min();
            if let Some(x) = missing {
                let failure = fail(i, x, f.level(), "false negative".into());
                return Ok(VerifyTrial { rows, params: f.params_hex(), peak_fill: f.peak_fill(), failure: Some(failure) });
            }
            rows.push(base_row(spec, prep.variant.name(), Some(t), inserted, &f));
        }
        if check_records && (f.level() != before || at_mark) {
            let AnyFilter::Grow(g) = &f else { unreachable!() };
            let mut live = g.records();
            live.sort_by_key(|(k, b)| (*k, b.encode()));
            let want = reference_records(&prefix, g.params(), &cfg, g.level());
            if live != want {
                let what = format!("record set differs from reference ({} live, {} expected)", live.len(), want.len());
                let failure = fail(i, op.key(), g.level(), what);
                return Ok(VerifyTrial { rows, params: f.params_hex(), peak_fill: f.peak_fill(), failure: Some(failure) });
            }
        }
    }
    Ok(VerifyTrial { rows, params: f.params_hex(), peak_fill: f.peak_fill(), failure: None })
}

/// Replays the stream and checks for false negatives at every checkpoint
/// (and, for small plain runs, the exact record set after every transition).
pub fn run_verify(spec: &RunSpec) -> Result<RunReport> {
    let prep = prepare(spec)?;
    let trials: Vec<VerifyTrial> = par::map_indices(spec.trials as usize, |t| verify_trial(spec, &prep, t as u32))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut report = RunReport {
        metadata: metadata(spec, "verify", &trials.iter().map(|t| t.params.clone()).collect::<Vec<_>>()),
        ..RunReport::default()
    };
    for t in trials {
        report.rows.extend(t.rows);
        report.peak_fill = report.peak_fill.max(t.peak_fill);
        report.failures.extend(t.failure);
    }
    Ok(report)
}
