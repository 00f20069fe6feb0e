//! Low-rank decomposition of transformer linear layers.
//!
//! A dense layer `y = W x + b` with `W` of shape `d1 × d2` is replaced by
//! `y = B (A x) + b̃` with `B` of shape `d1 × r` and `A` of shape `r × d2`.
//! The crate provides the factorizations ([`decompose`]), the parameter
//! accounting that decides which layers are worth factoring ([`planner`]), a
//! small forward-only transformer to calibrate and evaluate on ([`model`]),
//! timing ([`bench`]) and file formats ([`io`]).

pub mod bench;
pub mod decompose;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod planner;

pub use error::{ErrorClass, LordError, Result};
pub use linalg::{Matrix, OutputStats};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/factored-layers.md")]
    mod factored_layers {}
    #[doc = include_str!("../../../book/src/afm.md")]
    mod afm {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/toy-models.md")]
    mod toy_models {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
}
