//! Criterion benchmarks for the metric kernels and a mock pipeline run.
//! See `benches/`.
