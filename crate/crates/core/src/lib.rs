//! Dual-branch HOI detection toolkit: a DETR-style instance branch paired
//! with a spatial-context branch, trained jointly with contrastive layout
//! constraints and evaluated with HICO-style mAP.
//!
//! The numeric substrate is a small reverse-mode tape over `f64` matrices
//! ([`autodiff`]); everything differentiable is composed from its ops so that
//! finite-difference checks stay meaningful at double precision.

pub mod aggregator;
pub mod autodiff;
pub mod constraints;
pub mod data;
pub mod error;
pub mod eval;
pub mod explorer;
pub mod geometry;
pub mod loss;
pub mod gradcheck;
pub mod matching;
pub mod model;
pub mod optim;
pub mod rng;
pub mod teacher;

pub use error::{Error, Result};
