//! Test-only support: straightforward reference implementations used as
//! oracles, and generators for small synthetic corpora.

pub mod dsp_oracle;
pub mod leakage;
pub mod qp_oracle;
pub mod svm_data;
pub mod synth;
