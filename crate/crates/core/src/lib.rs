//! Surface-EMG movement classification with kernel methods and
//! cross-subject adaptation.
//!
//! The crate covers the full desk-scale pipeline for myoelectric control
//! studies:
//!
//! 1. **Data** ([`emg_data`]): multichannel recordings (CSV in the NinaPro
//!    column layout, or synthetic cohorts), segmentation into constant-label
//!    runs, sliding-window extraction, repetition-based train/test splits and
//!    stream subsampling.
//! 2. **Features** ([`features`]): mean absolute value, variance and waveform
//!    length per window/channel, an amplitude histogram, and the combined
//!    feature (mean of the three standardized families).
//! 3. **Kernels** ([`kernels`]): RBF and linear kernels plus Gram matrices.
//! 4. **Baseline learner** ([`lssvm`]): binary and one-vs-all multiclass
//!    least-squares SVMs with a closed-form bordered linear system, stratified
//!    cross-validated grid search, and the prior-features stacking baseline.
//! 5. **Adaptation** ([`multi_adapt`], [`mkal`], [`hl2l`]): three ways to move
//!    knowledge from previously recorded subjects onto a new subject with very
//!    little calibration data — convex combination of source hyperplanes with
//!    leave-one-out tuned mixing weights, online multi-kernel learning over
//!    raw-feature and source-prediction blocks, and a two-layer stack over
//!    confidence vectors.
//! 6. **Evaluation** ([`evaluation`]): balanced accuracy, column-normalized
//!    confusion matrices, top-k class histograms, overlap percentages,
//!    cross-setting class correlation, and the learning-curve harness that
//!    grows the target's training set step by step.
//!
//! Everything is deterministic: every stochastic choice (synthetic data,
//! subset shuffles, online sampling) flows from an explicit seed.

pub mod emg_data;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod hl2l;
pub mod kernels;
pub mod linalg;
pub mod lssvm;
pub mod mkal;
pub mod multi_adapt;

pub use error::{Error, Result};
pub use kernels::KernelSpec;
