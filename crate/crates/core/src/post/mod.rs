//! Gaze preprocessing, fixation detection, saliency maps and object
//! salience ranking.

mod fixation;
mod preprocess;
mod salience;
mod saliency;

pub use fixation::{
    detect_fixations, fixation_labels, read_fixations_csv, write_fixations_csv, FixationEvent, EYEMMV_T0, EYEMMV_T1,
    MIN_FIXATION,
};
pub use preprocess::{fill_invalid, preprocess_gaze, resample};
pub use salience::{rank_object_salience, FrameWeights, NodeWeight, RankedObject};
pub use saliency::{
    blur_sigma, build_saliency_map, fixations_per_frame, gaussian_blur, read_map_csv, write_map_csv, write_pgm,
    SaliencyMap,
};
