//! Benchmark-only crate; see `benches/robust_eval.rs`.
