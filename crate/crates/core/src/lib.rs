// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod evaluation;
pub mod io;
pub mod linalg;
pub mod mixture;
pub mod special_fn;
pub mod vb_mnig;
pub mod vb_unig;
