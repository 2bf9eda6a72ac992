//! Criterion benchmarks for `khessian-core`; see `benches/`.
