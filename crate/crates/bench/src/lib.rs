//! Criterion benchmarks for emk-core live under `benches/`; run them with
//! `cargo bench -p emk-bench`.
