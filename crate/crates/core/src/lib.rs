//! Kantorovich-Rubinstein (first Wasserstein) distances between finitely
//! supported measures, with closed forms on discrete, line, and circle
//! geometries validated against an exact transportation solver; trend
//! statistics for 2 x c contingency tables; classifier error bounds driven
//! by the transport distance; and optimal feature selection by branch and
//! bound over projected class-conditional measures.

pub mod classify;
pub mod ingest;
pub mod kr_closed;
pub mod kr_exact;
pub mod measures;
pub mod metrics;
pub mod select;
pub mod trend;
