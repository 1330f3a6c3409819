//! Text-dependent speaker verification: GMM-UBM, i-vector, GMM-HMM and
//! i-vector/HMM systems with Viterbi and forward-backward alignment, an
//! acoustic front-end, detection metrics and a synthetic corpus generator.

pub mod corpus_io;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod hmm;
pub mod ivector;
pub mod math;
pub mod pipeline;
