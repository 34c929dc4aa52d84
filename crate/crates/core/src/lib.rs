//! Dysarthric speech detection and severity classification toolkit.
//!
//! Baseline spectral features ([`dsp`]), layer-wise pretrained embeddings
//! ([`embeddings`]), an RBF kernel SVM trained with SMO ([`svm`]) and the two
//! speaker-independent evaluation protocols ([`eval`]) over a manifest-driven
//! corpus ([`corpus`]).

pub mod cache;
pub mod corpus;
pub mod dsp;
pub mod embeddings;
pub mod eval;
pub mod extract;
pub mod svm;
