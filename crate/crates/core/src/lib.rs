//! Iterative paraphrastic augmentation of frame-annotated corpora.
//!
//! A seed sentence with a labeled trigger span is paraphrased by a beam
//! search that may not emit any inflection of triggers already used
//! ([`decoder`], [`constraints`]). The trigger is then located in the
//! paraphrase by a span aligner ([`aligner`]), and the paraphrase becomes the
//! next seed ([`pipeline`]). Outputs can be filtered by threshold rules or
//! small classifiers ([`filters`]) and scored against gold spans ([`eval`]).
//! An IBM Model 2 word aligner ([`wordalign`]) serves as an alignment
//! baseline.

// Dense layers read more clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod aligner;
pub mod constraints;
pub mod decoder;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod filters;
pub mod io;
pub mod lexicon;
pub mod model;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod synthetic;
pub mod wordalign;

pub use error::{Error, Result};
pub use lexicon::InflectionLexicon;
pub use model::{AlignmentExample, AugmentationRecord, FrameAnnotation, LexicalUnit, Span, TokenizedSentence};
