//! Segmentation of categorical panel data and analysis of segment
//! trajectories.
//!
//! The pipeline runs in stages:
//!
//! 1. [`data`]: panel records, CSV ingestion, synthetic rotating panels.
//! 2. [`mca`]: multiple correspondence analysis of the active variables.
//! 3. [`som`]: Kohonen map over the factor coordinates.
//! 4. [`ward`]: Ward clustering of the map units into segments.
//! 5. [`markov`]: per-year transition estimation, homogeneity testing,
//!    simulation, mean chain and limit distribution.
//! 6. [`trajectory`]: SOM strings over simulated trajectories.
//!
//! [`pipeline`] wires the stages to on-disk artifacts and [`report`] renders
//! SVG summaries.

pub mod data;
pub mod markov;
pub mod matrix;
pub mod mca;
pub mod pipeline;
pub mod report;
pub mod som;
pub mod stats;
pub mod trajectory;
pub mod ward;
