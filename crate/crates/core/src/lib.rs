//! Behavior-aware MLP (BMLP) for heterogeneous sequential recommendation.
//!
//! This crate is the allocation-only core: dense numerics with hand-derived
//! backward passes, input encoding, the heterogeneous-interest and
//! purchase-intent towers, the gated scorer, the data preprocessing
//! transforms and the ranking metrics. Everything that touches the file
//! system, clocks or threads lives in the `bmlp` companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

/// Implements [`numerics::Visit`] for a struct by visiting the listed fields
/// in order, naming each tensor by its field path.
macro_rules! visit_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::numerics::Visit for $ty {
            fn visit<'a>(
                &'a self,
                prefix: &str,
                out: &mut alloc::vec::Vec<(alloc::string::String, &'a $crate::numerics::Tensor)>,
            ) {
                $( $crate::numerics::Visit::visit(
                    &self.$field,
                    &$crate::numerics::join(prefix, stringify!($field)),
                    out,
                ); )*
            }
            fn visit_mut<'a>(
                &'a mut self,
                out: &mut alloc::vec::Vec<&'a mut $crate::numerics::Tensor>,
            ) {
                $( $crate::numerics::Visit::visit_mut(&mut self.$field, out); )*
            }
        }
    };
}

pub mod data;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod exec;
pub mod hip;
pub mod model;
pub mod numerics;
pub mod pip;

pub use error::{Error, Result};
pub use numerics::{Mode, RngStream, Tensor};
