#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod dsp;
pub mod grad;
pub mod model;
pub mod rollout;
pub mod viz;
pub mod train;
pub mod project;
