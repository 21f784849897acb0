//! Criterion benchmarks for qinvert-core live in `benches/`.
