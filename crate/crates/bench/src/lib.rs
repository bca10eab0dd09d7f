//! Criterion benchmarks for `aircomp-gpr`; see `benches/`.
