//! Superpixel-region image captioning: SLIC region extraction, pluggable region
//! embeddings, a multi-resolution encoder-decoder transformer with reverse-mode
//! training, beam search, and BLEU / ROUGE-L / CIDEr scoring.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, image codecs, HTTP and
//! the command line live in the `supercap` crate.
#![no_std]

extern crate alloc;

pub mod error;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod regions;
pub mod rng;
pub mod superpixel;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use error::*;
