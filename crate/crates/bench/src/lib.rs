//! Criterion benchmarks for the hot paths: rasterization, encoding, one
//! training step and voxelization. Run with `cargo bench -p derender-bench`.
