//! Training objectives and their verification helpers.

pub mod detector;
pub mod gradcheck;
pub mod triplet;

pub use detector::{detector_loss, detector_loss_tensor, total_loss, weighted_bce};
pub use triplet::{
    atrip_loss, atrip_loss_tensor, hardest_negative_distances, hardest_negatives,
    positive_distances, softmax_weights, triplet_terms, CorrespondenceBatch, TripletStats,
};
