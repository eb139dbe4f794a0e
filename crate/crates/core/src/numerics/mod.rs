//! Dense tensor substrate, GEMM wrappers, the reproducible RNG, the parameter
//! store and the finite-difference gradient oracle.

mod gemm;
mod gradcheck;
pub(crate) mod par;
mod params;
mod real;
mod rng;
mod tensor;

pub use gemm::{gemm, matmul_nn, matmul_nt, matmul_tn_acc};
pub use gradcheck::{finite_difference_gradient, max_relative_error, relative_error};
pub use params::{glorot_bound, Param, ParamId, ParamStore};
pub use real::Real;
pub use rng::{derive_seed, rng_uniform, SplitMix64};
pub use tensor::{argsort_rows_ascending, concat_cols, scatter_add_rows, split_cols, IndexMatrix, Tensor};
