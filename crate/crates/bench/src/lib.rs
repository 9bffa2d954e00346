//! Benchmarks for `mdtrack-core` live in `benches/`; run them with
//! `cargo bench -p mdtrack-bench`.
