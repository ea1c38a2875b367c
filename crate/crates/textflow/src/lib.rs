//! Closed-loop text generation as flow control in a rectified latent space.
//!
//! The crate is organized around one pipeline and the instrumentation for it:
//!
//! * [`tensor`] — dense f64 tensors with reverse-mode autodiff.
//! * [`corpus`] — synthetic corpora with validity oracles, tokenization,
//!   corruption operators, and token-group padding.
//! * [`vae`] — locality-preserving convolutional text VAE (the coordinate
//!   map from token space into the latent control space).
//! * [`controller`] — bidirectional transformer velocity field.
//! * [`flow`] — flow-matching training with boundary-mask curricula and
//!   condition dropout.
//! * [`sampler`] — ODE integration under boundary constraints, guidance
//!   mixing, and length detection.
//! * [`likelihood`] — flow-prior densities, ELBO perplexity, and
//!   generation statistics.
//! * [`diagnostics`] — trajectory curvature, field stiffness, kinetic
//!   action, and loss-landscape slices.
//! * [`soclab`] — four generative dynamics on analytic toy densities with
//!   energy and perturbation-response measurements.
//! * [`config`], [`checkpoint`], [`plot`], [`pipeline`] — the operator
//!   surface used by the `textflow` binary.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability.

pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod corpus;
pub mod diagnostics;
pub mod flow;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod vae;
pub mod likelihood;
pub mod mask;
pub mod mlp;
pub mod rng;
pub mod sampler;
pub mod soclab;
pub mod stats;
pub mod tensor;
