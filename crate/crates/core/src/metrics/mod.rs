//! Sequence, scanpath, saliency and spectral evaluation metrics.

mod saliency;
mod scanpath;
mod sequence;
mod spectral;

pub use saliency::{auc, center_prior, information_gain, nss, IG_EPS};
pub use scanpath::{aoi_tff, fixation_stats, gaze_state_dynamics, FixationStats, StateDynamics};
pub use sequence::{
    dtw, dtw_pixels, dtw_points, edit_distance, levenshtein_scanpath, mean_std, pair_best_match, temporal_correlation,
    tokenize, Match, PairingResult, SequenceMetric, LEV_GRID,
};
pub use spectral::{
    band_power, band_ratio, residual_psd, residuals, welch, SpectralProfile, WelchConfig, HIGH_BAND, LOW_BAND,
};
