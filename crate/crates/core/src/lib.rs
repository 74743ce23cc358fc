//! Inference-time core for open-vocabulary video instance segmentation on
//! pre-extracted embeddings and feature maps.
//!
//! The crate covers class-agnostic mask and score heads, temporal top-K
//! query matching with a per-video memory bank, weighted open-vocabulary
//! mask classification, the training losses with analytic gradients, a
//! video-AP evaluator, and a file-based pipeline (binary tensor container,
//! bundle manifests, synthetic scenario generation, and a strategy
//! ablation harness).
//!
//! With the default `parallel` feature the data-parallel inner loops run
//! on rayon; disabling it yields a sequential build with bit-identical
//! outputs.

pub mod classifier;
pub mod error;
pub mod evaluator;
pub mod mask_head;
pub mod matcher;
pub mod par;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{MlpParams, Tensor};
