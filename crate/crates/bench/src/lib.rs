//! Criterion benchmarks for the solver; see `benches/subproblems.rs`.
