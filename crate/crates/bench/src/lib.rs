//! Criterion benchmarks for `fafpca`; see `benches/`.
