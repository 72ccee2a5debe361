//! Criterion benchmarks for the streamforge runtime live in `benches/`.
