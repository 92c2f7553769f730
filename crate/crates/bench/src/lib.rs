//! Criterion benchmarks for `ssm-core` live under `benches/`.
