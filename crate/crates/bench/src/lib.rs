//! Intentionally empty: this crate exists to host the criterion benchmarks
//! in `benches/` without pulling criterion into the library build.
