//! Convolutional sparse coding transfer learning.
//!
//! Kernel banks are learned from an unlabelled source feature dataset with a
//! relaxed ADMM solver, a labelled target dataset is encoded into sparse
//! feature maps, features are ranked with Relief, and classification is
//! evaluated with a linear SVM under leave-one-subject-out cross-validation.
//! A seeded kernel search selects the bank that classifies a held-out
//! kernel-optimisation split best.

pub mod augment;
pub mod classify;
pub mod config;
pub mod error;
pub mod fft;
pub mod io;
pub mod ops;
pub mod par;
pub mod search;
pub mod selection;
pub mod solver;
pub mod synthetic;
pub mod transfer;

pub use error::{Error, Result};
