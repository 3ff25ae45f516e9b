//! Benchmark-only crate; see `benches/tracker.rs`.
