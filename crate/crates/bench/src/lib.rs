//! Criterion benchmarks for the estimator live under `benches/`.
