// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atten;
pub mod cli;
pub mod domain;
pub mod error;
pub mod fixtures;
pub mod forward;
pub mod inversion;
pub mod linmap;
pub mod pmatrix;
pub mod redundant;
pub mod spectra;
pub mod scan;
