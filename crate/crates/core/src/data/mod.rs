//! Training-pair synthesis, teacher supervision and correspondence sampling.

pub mod dataset;
pub mod heatmap;
pub mod homography;
pub mod image;
pub mod pair;
pub mod sampler;
pub mod shapes;

pub use dataset::{generate_samples, load_dataset, write_dataset, ManifestRecord, ManifestSummary};
pub use heatmap::{import_teacher_heatmaps, TeacherHeatmaps};
pub use homography::Homography;
pub use image::Raster;
pub use pair::{synthesize_pair, synthetic_sample, TrainingPair, TrainingSample};
pub use sampler::{sample_correspondences, Correspondences};
pub use shapes::{synthetic_corner_labels, PseudoLabelMap, Scene, Shape};

/// Derives an independent stream seed (SplitMix64 finaliser).
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
