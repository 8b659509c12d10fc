//! Signal kernels shared by both pipelines.

pub mod image;
pub mod spectral;

pub use image::{
    build_patches, normalize_min_max, patch_label, patch_origins, patches_from_waterfall,
    sobel_mag, write_pgm, GreyImage, Waterfall, WaterfallPatch, COLS_PER_SECOND,
    DEFAULT_LOWPASS_ALPHA, PATCH_COLS, PATCH_COL_HOP, PATCH_HOP_SECONDS, PATCH_SECONDS,
    PATCH_SENSORS, PATCH_SENSOR_HOP,
};
pub use spectral::{
    feature_fft100, feature_fft100_with, fft_mag, lowpass, lowpass_values, rms_block_len,
    rms_series, spectral_energy, spectrum_stats, time_energy, zero_crossing_rate, FeatureVector,
    RmsSeries, SpectrumAnalyzer, SpectrumStats, FEATURE_LEN,
};
