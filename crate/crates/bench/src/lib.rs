//! Criterion benchmarks for the placement hot paths; see `benches/`.
