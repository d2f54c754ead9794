// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activity;
pub mod dsp;
pub mod eval;
pub mod geo;
pub mod geoagg;
pub mod ingest;
pub mod location;
pub mod ml;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod sleep;
pub mod transport;
