//! Core building blocks for constructing, running and analysing 2D-CNN and
//! 3D-CNN video action recognition models under one framework.
//!
//! Everything here is pure computation over in-memory data and builds
//! without the standard library (`alloc` is required). File formats, data
//! loading, the training engine and the CLI live in the `stzoo` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod archspec;
pub mod backbones;
mod error;
pub mod factory;
pub mod flops;
pub mod graph;
pub mod init;
pub mod kernels;
pub mod optim;
mod real;
pub mod sampling;
pub mod schedule;
pub mod temporal;
pub mod tensor;

pub use archspec::{ArchSpec, Backbone, Family, Placement};
pub use error::{Error, Result};
pub use factory::{assemble, AssembledModel, Consensus, Init};
pub use real::Real;
pub use tensor::{Layout, Tensor, VideoTensor};
