//! Benchmarks live under `benches/`; run them with `cargo bench -p posterior-pose-bench`.
