//! Probe counters shared by the dictionaries and the filters built on them.
//!
//! Counters are atomics so that lookups can stay `&self` and filters can be
//! queried from several threads at once.

use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

/// Probe counts at or above this value share the last histogram bin.
pub const HIST_BINS: usize = 65;

#[derive(Debug)]
pub struct ProbeStats {
    lookups: AtomicU64,
    probes: AtomicU64,
    hist: [AtomicU64; HIST_BINS],
}

impl Default for ProbeStats {
    fn default() -> Self {
        ProbeStats {
            lookups: AtomicU64::new(0),
            probes: AtomicU64::new(0),
            hist: std::array::from_fn(|_| AtomicU64::new(0)),
        }
    }
}

impl Clone for ProbeStats {
    fn clone(&self) -> Self {
        let s = ProbeStats::default();
        s.absorb(&self.summary());
        s
    }
}

impl ProbeStats {
    #[inline]
    pub fn record(&self, probes: u32) {
        self.lookups.fetch_add(1, Relaxed);
        self.probes.fetch_add(probes as u64, Relaxed);
        self.hist[(probes as usize).min(HIST_BINS - 1)].fetch_add(1, Relaxed);
    }

    pub fn absorb(&self, other: &ProbeSummary) {
        self.lookups.fetch_add(other.lookups, Relaxed);
        self.probes.fetch_add(other.probes, Relaxed);
        for (bin, &c) in self.hist.iter().zip(&other.hist) {
            bin.fetch_add(c, Relaxed);
        }
    }

    pub fn reset(&self) {
        self.lookups.store(0, Relaxed);
        self.probes.store(0, Relaxed);
        for bin in &self.hist {
            bin.store(0, Relaxed);
        }
    }

    pub fn summary(&self) -> ProbeSummary {
        ProbeSummary {
            lookups: self.lookups.load(Relaxed),
            probes: self.probes.load(Relaxed),
            hist: self.hist.iter().map(|b| b.load(Relaxed)).collect(),
        }
    }
}

/// A plain snapshot of [`ProbeStats`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeSummary {
    pub lookups: u64,
    pub probes: u64,
    pub hist: Vec<u64>,
}

impl Default for ProbeSummary {
    fn default() -> Self {
        ProbeSummary { lookups: 0, probes: 0, hist: vec![0; HIST_BINS] }
    }
}

impl ProbeSummary {
    pub fn merge(&mut self, other: &ProbeSummary) {
        self.lookups += other.lookups;
        self.probes += other.probes;
        for (a, b) in self.hist.iter_mut().zip(&other.hist) {
            *a += b;
        }
    }

    pub fn mean(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.probes as f64 / self.lookups as f64
        }
    }

    /// Smallest probe count `v` such that at least a `q` fraction of lookups used `<= v` probes.
    pub fn quantile(&self, q: f64) -> u32 {
        if self.lookups == 0 {
            return 0;
        }
        let target = (q * self.lookups as f64).ceil().max(1.0) as u64;
        let mut seen = 0;
        for (v, &c) in self.hist.iter().enumerate() {
            seen += c;
            if seen >= target {
                return v as u32;
            }
        }
        (HIST_BINS - 1) as u32
    }

    pub fn p99(&self) -> u32 {
        self.quantile(0.99)
    }

    pub fn max(&self) -> u32 {
        self.hist.iter().rposition(|&c| c > 0).unwrap_or(0) as u32
    }
}

/// Filter-level counters: membership queries and the dictionary lookups they issued.
#[derive(Debug, Default)]
pub struct QueryStats {
    queries: AtomicU64,
    lookups: AtomicU64,
    max_lookups: AtomicU64,
}

impl Clone for QueryStats {
    fn clone(&self) -> Self {
        QueryStats {
            queries: AtomicU64::new(self.queries.load(Relaxed)),
            lookups: AtomicU64::new(self.lookups.load(Relaxed)),
            max_lookups: AtomicU64::new(self.max_lookups.load(Relaxed)),
        }
    }
}

impl QueryStats {
    #[inline]
    pub fn record(&self, lookups: u64) {
        self.queries.fetch_add(1, Relaxed);
        self.lookups.fetch_add(lookups, Relaxed);
        self.max_lookups.fetch_max(lookups, Relaxed);
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Relaxed)
    }

    pub fn lookups(&self) -> u64 {
        self.lookups.load(Relaxed)
    }

    /// Most dictionary lookups issued by a single query.
    pub fn max_lookups(&self) -> u64 {
        self.max_lookups.load(Relaxed)
    }

    pub fn reset(&self) {
        self.queries.store(0, Relaxed);
        self.lookups.store(0, Relaxed);
        self.max_lookups.store(0, Relaxed);
    }
}
