//! Criterion benchmarks for the game kernels live in `benches/`.
