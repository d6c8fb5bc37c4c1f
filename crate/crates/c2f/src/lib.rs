//! Coarse-to-fine text classification from coarse labels plus fine label names.
//!
//! The pipeline extracts exclusive label-name mentions as weak supervision,
//! trains a label-conditioned language model with a margin regularizer,
//! generates a pseudo-labeled corpus per fine label, trains a naive Bayes
//! classifier on it, and optionally bootstraps the weak supervision from the
//! classifier's most confident predictions for further iterations.

pub mod classifier;
pub mod corpus;
pub mod eval;
pub mod langmodel;
pub mod pipeline;
pub mod seeds;
pub mod weaksup;
