//! Benchmarks for the fitting hot paths live under `benches/`.
