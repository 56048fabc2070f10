//! Approximate membership filters that grow with their input.
//!
//! * [`ChainFilter`] keeps a chain of fixed-capacity filters with shrinking
//!   error budgets; queries consult every link.
//! * [`GrowableFilter`] keeps a single dictionary of prefix signatures and
//!   lengthens them as the set grows, so each query is one lookup.
//!   [`BucketedFilter`] spreads keys over independent instances,
//!   [`DeamortizedFilter`] spreads each rebuild over the following inserts,
//!   and [`DeletableFilter`] adds deletions.
//!
//! The [`harness`] module drives measurements and the [`oracle`] module
//! holds brute-force references.

pub mod amq_fixed;
pub mod chain_filter;
pub mod compact_dict;
pub mod deamortized;
pub mod deletions;
pub mod error;
pub mod growable_filter;
pub mod harness;
pub mod hashing;
pub mod oracle;
pub mod par;
pub mod stats;

pub use amq_fixed::{Amq, AmqConfig, Backend};
pub use chain_filter::{chain_epsilon_at, ChainConfig, ChainFilter};
pub use compact_dict::{DictConfig, DictRecord, LevelDict};
pub use deamortized::DeamortizedFilter;
pub use deletions::DeletableFilter;
pub use error::{Error, Result};
pub use growable_filter::{BucketedFilter, GrowConfig, GrowableFilter};
pub use hashing::{derive_params, HashParams};
pub use stats::{ProbeSummary, QueryStats};

/// The interface shared by every filter variant.
pub trait Filter: Send + Sync {
    fn insert(&mut self, x: u64) -> Result<()>;

    fn contains(&self, x: u64) -> bool;

    fn delete(&mut self, _x: u64) -> Result<()> {
        Err(Error::Unsupported("delete"))
    }

    fn supports_delete(&self) -> bool {
        false
    }

    /// Allocated bits across all live structures.
    fn space_bits(&self) -> u64;

    /// Current level index.
    fn level(&self) -> u32;

    /// Records (or fingerprints) currently stored.
    fn record_count(&self) -> u64;

    /// Dictionary-internal probes of all membership queries so far.
    fn probe_summary(&self) -> ProbeSummary;

    /// Membership queries and the dictionary lookups they issued.
    fn query_stats(&self) -> &QueryStats;

    /// Structural dictionary rebuilds so far.
    fn rebuilds(&self) -> u64;

    /// Largest observed `records / bound` over every dictionary this filter
    /// has held, where the bound is the per-level capacity guarantee.
    fn peak_fill(&self) -> f64;
}
