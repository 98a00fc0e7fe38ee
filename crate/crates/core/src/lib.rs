//! Contrastive self-supervised learning for phonocardiogram classification.
//!
//! The crate covers the full pipeline: dataset ingestion ([`dataio`]),
//! resampling and windowing ([`dsp`]), the time-domain augmentation suite
//! ([`augment`]), a small reverse-mode autodiff engine with a 1-D conv
//! backbone and optimizers ([`nncore`]), NT-Xent pretraining ([`ssl`]),
//! frozen-backbone task heads with patient-level aggregation ([`classify`]),
//! challenge-style metrics and the augmentation grid harness ([`eval`]),
//! plus orchestration glue ([`pipeline`]) and a synthetic-corpus generator
//! for tests and demos ([`synth`]).

pub mod augment;
pub mod classify;
pub mod dataio;
pub mod dsp;
pub mod eval;
pub mod nncore;
pub mod pipeline;
pub mod seed;
pub mod ssl;
pub mod synth;
