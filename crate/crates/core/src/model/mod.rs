//! Model components: encoder, decoder branches, prediction heads.

pub mod bundle;
pub mod decoder;
pub mod encoder;
pub mod full;
pub mod layers;
pub mod params;

pub use bundle::{mask_column, pair_reduce, FeatureBundle};
pub use params::{ParamStore, Session};
