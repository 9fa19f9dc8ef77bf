//! Benchmark fixtures; the benches themselves live in `benches/`.

use splitguard::data::{gaussian_blobs, BlobParams, SplitSpec};
use splitguard::Dataset;

/// 4-class blobs in 16 dimensions, `per_class` points each.
pub fn blobs(per_class: usize) -> Dataset {
    gaussian_blobs(
        &BlobParams {
            classes: 4,
            dim: 16,
            per_class,
            center_scale: 4.0,
            noise: 1.0,
            seed: 1,
        },
        SplitSpec::default(),
    )
    .expect("blob parameters are valid")
}
