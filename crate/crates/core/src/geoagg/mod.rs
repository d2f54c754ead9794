//! Geohash-level anonymous voting and population aggregation.

pub mod aggregate;
pub mod catalog;
pub mod export;
pub mod geohash;
pub mod graph;
pub mod individual;
pub mod votes;

pub use aggregate::{
    aggregate_grid, aggregate_individual, aggregate_population, histogram, roll_up, AggregateCell, AggregateError,
    Contribution, DailySeries, ExactSum, IndicatorStats, IndividualRecord, ScopeKind,
};
pub use catalog::{indicator_catalog, Axis, IndicatorSpec, Sensor};
pub use geohash::{encode as geohash_encode, Geohash, GeohashError};
pub use graph::{build_mobility_graph, MobilityGraph};
pub use individual::{IndicatorConfig, MinuteRecord};
pub use votes::{cast_vote, voter_tag, GeohashVote, VoteError, VoteStore};
