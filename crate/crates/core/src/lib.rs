//! Acoustic byte-pair encoding toolkit.
//!
//! Discrete token streams (k-means cluster ids over feature frames) are
//! compressed with byte-pair encoding, modelled with an autoregressive
//! n-gram sequence model and evaluated with compression, syntax
//! discrimination, diversity, cross-entropy and rescoring measurements.

pub mod binio;
pub mod bpe;
pub mod codec;
pub mod corpus_io;
pub mod discretizer;
pub mod error;
pub mod metrics;
pub mod rescore;
pub mod slm;

pub use bpe::BpeModel;
pub use corpus_io::{Corpus, FeatureMatrix, SynthSpec, TokenSequence};
pub use discretizer::KMeansModel;
pub use error::{Error, Result};
pub use rescore::{CandidateSet, RescoreResult};
pub use slm::{Decoding, NGramModel, SeqModel, Smoothing};
