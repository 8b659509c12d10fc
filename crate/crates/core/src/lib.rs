//! Excavation event detection for distributed acoustic sensing (DAS).
//!
//! Two detection pipelines share one set of signal kernels:
//!
//! * **classic**: per sensor and per second, the first 100 spectral
//!   magnitudes feed a classifier (polynomial SVM, decision tree, pruned tree
//!   or a small feed-forward network); hits are associated into tracks and an
//!   alarm is raised once a track holds enough consecutive detections.
//! * **image**: 10 ms RMS envelopes are smoothed, decimated and passed
//!   through a Sobel gradient to form a grey waterfall image, which is tiled
//!   into patches and classified by a single-block convolutional network.
//!
//! Synthetic scenes ([`synthgen`]) stand in for field recordings and provide
//! the ground truth every test and benchmark is measured against.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod classic;
pub mod cnn;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod optim;
pub mod synthgen;
pub mod tracker;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Event class attached to sources, label cells and patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceKind {
    Excavator,
    Highway,
    Walking,
    None,
}

impl SourceKind {
    pub fn is_excavator(self) -> bool {
        self == SourceKind::Excavator
    }
}

/// Binary target used by every classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    Excavator,
    Other,
}

impl Class {
    /// Column index of the class in one-hot targets and probability vectors.
    pub fn index(self) -> usize {
        match self {
            Class::Excavator => 0,
            Class::Other => 1,
        }
    }

    pub fn from_index(i: usize) -> Class {
        if i == 0 {
            Class::Excavator
        } else {
            Class::Other
        }
    }

    pub fn from_kind(kind: SourceKind) -> Class {
        if kind.is_excavator() {
            Class::Excavator
        } else {
            Class::Other
        }
    }
}
