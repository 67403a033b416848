//! Temporal stability for image-to-image CNNs trained on single frames.
//!
//! The crate trains small convolutional networks whose output should not
//! flicker when the input moves, using regularizers built from a second,
//! perturbed forward pass through the same weights. It provides:
//!
//! - [`ImageTensor`] and affine warps with their adjoint ([`transform`]),
//! - an encoder-decoder network with exact gradients and Adam ([`nn`]),
//! - the blended objectives ([`loss`]),
//! - a seeded HDR scene generator ([`procgen`]),
//! - PSNR and temporal smoothness ([`metrics`]),
//! - the sweep harness behind the `tempstab` binary ([`harness`]).
//!
//! ```
//! use tempstab::loss::{evaluate_total, LossConfig, RegKind};
//! use tempstab::nn::{Network, NetworkConfig};
//! use tempstab::procgen::{generate_training_set, SceneSpec};
//! use tempstab::seed::rng_for;
//!
//! let pairs = generate_training_set(&SceneSpec::default(), 2)?;
//! let batch: Vec<_> = pairs.iter().map(|p| (p.x.clone(), p.y.clone())).collect();
//! let net = Network::init(&NetworkConfig::hdr(&[4, 8]), &mut rng_for(0, 3, 0))?;
//! let cfg = LossConfig::new(RegKind::SparseJacobian, 0.5);
//! let out = evaluate_total(&net, &batch, &cfg, &mut rng_for(0, 5, 0))?;
//! assert!(out.total > 0.0);
//! # Ok::<(), tempstab::Error>(())
//! ```
//!
//! The guide in `book/` walks through each part; its code blocks run as doc-tests.

pub mod error;
pub mod harness;
pub mod kv;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod pgm;
pub mod procgen;
pub mod seed;
pub mod tensor;
pub mod transform;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, Mask};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/transforms.md")]
    mod transforms {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
