//! Benchmarks live in `benches/`; run them with `cargo bench -p rd2v-bench`.
