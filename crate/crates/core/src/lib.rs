// Negated float comparisons are used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod metrics;
pub mod model;
pub mod signal;
pub mod tensor;
pub mod training;
