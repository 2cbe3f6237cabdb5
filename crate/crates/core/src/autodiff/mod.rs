//! Dense tensors, a reverse-mode tape, Adam, and a finite-difference oracle.
//!
//! Everything is `f64`. A [`Tape`] records one forward computation; parameters
//! live in a [`ParamStore`] and are copied onto the tape with [`Tape::param`].
//! After [`Tape::backward_into`] the store holds accumulated gradients that
//! [`Adam::step`] consumes.

mod adam;
mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{cosine_similarity, Gradients, SparseMatrix, Tape, Var};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use tape::{
    check_offsets, gather_rows, log_sum_exp, relu, segment_max, segment_sum, sigmoid, sq_dist,
};
