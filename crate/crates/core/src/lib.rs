//! Synthetic buffer-write benchmark: program generation, exact labeling,
//! tokenization, an end-to-end memory network classifier and the evaluation
//! harness that scores it (and external analyzer reports) against the labels.

pub mod ast;
pub mod codegen;
pub mod eval;
pub mod experiment;
pub mod fixtures;
pub mod memnet;
pub mod oracle;
pub mod seeds;
pub mod tokenize;
