//! DNA sequence classification toolkit: k-mer and BPE tokenizers, three
//! positional-encoding schemes, a small Transformer encoder with exact
//! gradients, AdamW training with MCC evaluation, and a resumable grid
//! runner.

pub mod corpus;
pub mod experiment;
pub mod model;
pub mod position;
pub mod tensor;
pub mod tokenize;
pub mod train;
