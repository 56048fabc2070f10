//! A chain of fixed-capacity filters. Link `i` holds `2^i` elements with
//! error budget `(6/pi^2) eps / i^2`, so the budgets sum to `eps`.

use crate::amq_fixed::{Amq, AmqConfig, Backend};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::stats::{ProbeSummary, QueryStats};
use crate::Filter;

const SIX_OVER_PI_SQ: f64 = 6.0 / (std::f64::consts::PI * std::f64::consts::PI);

/// Error budget of link `i` (1-based).
pub fn chain_epsilon_at(epsilon: f64, i: u32) -> f64 {
    assert!(i >= 1, "links are numbered from 1");
    SIX_OVER_PI_SQ * epsilon / (i as f64 * i as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainConfig {
    pub epsilon: f64,
    pub w: u32,
    pub backend: Backend,
    /// Index of the first link; 1 follows the schedule literally.
    pub initial_level: u32,
    pub seed: u64,
}

impl ChainConfig {
    pub fn new(epsilon: f64, w: u32, seed: u64) -> Self {
        ChainConfig { epsilon, w, backend: Backend::Sigset, initial_level: 1, seed }
    }
}

#[derive(Clone, Debug)]
pub struct Link {
    pub index: u32,
    pub capacity: u64,
    pub epsilon: f64,
    pub amq: Amq,
}

#[derive(Clone, Debug)]
pub struct ChainFilter {
    config: ChainConfig,
    links: Vec<Link>,
    inserted_in_current: u64,
    queries: QueryStats,
}

impl ChainFilter {
    pub fn new(config: ChainConfig) -> Result<Self> {
        if !(config.epsilon > 0.0 && config.epsilon < 1.0) {
            return Err(Error::Param(format!("epsilon must lie in (0, 1), got {}", config.epsilon)));
        }
        if !(8..=64).contains(&config.w) {
            return Err(Error::Param(format!("universe width must lie in 8..=64, got {}", config.w)));
        }
        if config.initial_level == 0 || config.initial_level >= 63 {
            return Err(Error::Param("initial level must lie in 1..63".into()));
        }
        Ok(ChainFilter { config, links: Vec::new(), inserted_in_current: 0, queries: QueryStats::default() })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn level_count(&self) -> usize {
        self.links.len()
    }

    fn open_link(&mut self) -> Result<()> {
        let index = self.links.last().map_or(self.config.initial_level, |l| l.index + 1);
        if index >= 63 {
            return Err(Error::UniverseExhausted(self.config.w));
        }
        let capacity = 1u64 << index;
        let epsilon = chain_epsilon_at(self.config.epsilon, index);
        let amq = Amq::new_lazy(AmqConfig {
            capacity,
            epsilon,
            backend: self.config.backend,
            seed: derive_seed(self.config.seed, 100 + index as u64),
        })?;
        self.links.push(Link { index, capacity, epsilon, amq });
        self.inserted_in_current = 0;
        Ok(())
    }
}

impl Filter for ChainFilter {
    fn insert(&mut self, x: u64) -> Result<()> {
        let full = self.links.last().is_none_or(|l| self.inserted_in_current >= l.capacity);
        if full {
            self.open_link()?;
        }
        self.links.last_mut().unwrap().amq.insert(x)?;
        self.inserted_in_current += 1;
        Ok(())
    }

    fn contains(&self, x: u64) -> bool {
        // every link is consulted; no early exit
        let hit = self.links.iter().fold(false, |acc, l| l.amq.contains(x) | acc);
        self.queries.record(self.links.len() as u64);
        hit
    }

    fn space_bits(&self) -> u64 {
        self.links.iter().map(|l| l.amq.space_bits()).sum()
    }

    fn level(&self) -> u32 {
        self.links.last().map_or(0, |l| l.index)
    }

    fn record_count(&self) -> u64 {
        self.links.iter().map(|l| l.amq.len()).sum()
    }

    fn probe_summary(&self) -> ProbeSummary {
        let mut s = ProbeSummary::default();
        for l in &self.links {
            s.merge(&l.amq.probe_summary());
        }
        s
    }

    fn query_stats(&self) -> &QueryStats {
        &self.queries
    }

    fn rebuilds(&self) -> u64 {
        self.links.iter().map(|l| l.amq.rebuilds()).sum()
    }

    fn peak_fill(&self) -> f64 {
        self.links.iter().map(|l| l.amq.len() as f64 / l.capacity as f64).fold(0.0, f64::max)
    }
}
