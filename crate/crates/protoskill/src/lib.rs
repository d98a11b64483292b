//! Compositional skill-prototype discovery and one-shot cross-embodiment
//! imitation on a synthetic two-embodiment benchmark.
//!
//! The pipeline: generate demonstrations on a shared set of motion
//! primitives ([`simgen`]), embed observation windows into a latent space
//! ([`encoder`]), discover a prototype dictionary by soft assignment and
//! pick its size from the assignment-entropy curve ([`protodisc`]), train a
//! prototype-conditioned diffusion action head ([`policy`]), and execute
//! held-out compositions on the robot embodiment by aligning its stream
//! against a one-shot human prompt ([`align`]).

pub mod align;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod numkit;
pub mod pipeline;
pub mod policy;
pub mod protodisc;
pub mod simgen;

pub use error::{Error, Result};
