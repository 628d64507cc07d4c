//! Pipeline engine for few-shot composed image retrieval.
//!
//! Stage one turns a pure image corpus into pseudo triplets (masked image,
//! caption, original image). Stage two scores unlabeled reference/target pairs
//! by how far a composed query lands from its target, picks annotation
//! candidates from the top of that score distribution, and evaluates
//! retrieval with Recall@k.

pub mod captioner;
pub mod challenge_scoring;
pub mod composer;
pub mod embedding_store;
pub mod evaluation;
pub mod hashing;
pub mod mask_plan;
pub mod pseudo_triplets;
pub mod selection;
