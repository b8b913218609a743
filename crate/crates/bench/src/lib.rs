//! Criterion benchmarks for the convolution kernels and the full network; see `benches/`.
