//! Benchmark fixtures shared by the criterion targets.

use robusthide::synthetic::corpus;
use robusthide::{BundleSpec, ImageTensor};

/// Small bundle spec used across benchmarks.
pub fn bench_spec() -> BundleSpec {
    BundleSpec { depth: 3, base_channels: 8, disc_base_channels: 8, ..Default::default() }
}

/// `count` stacked natural images of side `side`.
pub fn images(count: usize, side: usize) -> ImageTensor {
    ImageTensor::stack(&corpus(7, count, side).expect("corpus")).expect("stack")
}
