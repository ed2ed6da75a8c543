//! Noun-phrase canonicalization for open knowledge bases.
//!
//! Phrases are embedded from word vectors and augmented with the mean of
//! their knowledge-graph neighbors. A preliminary agglomerative clustering
//! provides weak labels and initializes a Gaussian mixture over latents that
//! are drawn through a short forward diffusion and a reparameterized linear
//! head. The mixture, the latent heads, a denoising network, relation
//! embeddings and side-information constraints are trained jointly in two
//! stages; the final clusters are the argmax of the mixture posterior.
//!
//! The crate is organized bottom-up:
//!
//! * [`corpus`]: triples, gold labels, neighbor index
//! * [`embedding`]: word vectors, phrase embeddings, neighbor augmentation
//! * [`side_info`]: paraphrase / entity-link / morphological / IDF evidence
//! * [`hac`]: agglomerative clustering for weak labels
//! * [`mixture`]: Gaussian mixture posterior and clustering loss
//! * [`diffusion`]: noise schedule, forward/reverse steps, latent heads, noise loss
//! * [`kge`]: HolE / TransE scores, negative sampling, KGE loss
//! * [`trainer`]: joint objective, gradients, two-stage optimization, inference
//! * [`metrics`]: macro / micro / pair F1
//! * [`pipeline`]: end-to-end runs, sweeps and report files
//! * [`synthetic`]: a seeded generator of toy knowledge bases with known entities

pub mod autodiff;
pub mod corpus;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod hac;
pub mod kge;
pub mod metrics;
pub mod mixture;
pub mod pipeline;
pub mod side_info;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
