//! Criterion benchmarks for the alignment kernels; see `benches/`.
