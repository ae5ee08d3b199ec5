//! Desk-scale cone-beam CT simulation and projection-domain metal-trace
//! inpainting.
//!
//! The crate covers the full pipeline:
//!
//! 1. [`phantom`] — procedural soft-tissue/bone phantoms and implant placement;
//! 2. [`projector`] — ray-driven forward projection onto a circular-orbit
//!    flat-panel detector described by [`geometry`];
//! 3. [`artefact`] — polychromatic beam hardening and photon-counting noise;
//! 4. [`score`] / [`sampler`] — score-based diffusion inpainting of masked
//!    implant traces in the projection stack, with two perpendicular slice
//!    models and measurement-consistency guidance;
//! 5. [`baseline`] — classical per-projection linear interpolation;
//! 6. [`recon`] — filtered-backprojection (FDK) reconstruction;
//! 7. [`metrics`] / [`benchmark`] — SSIM/PSNR/RMSE scoring and the seeded
//!    end-to-end comparison suite.
//!
//! All randomness flows through counter-based streams ([`rng`]) keyed by seed
//! and array coordinates, so every stage is reproducible byte-for-byte at any
//! thread count.

pub mod artefact;
pub mod baseline;
pub mod benchmark;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod projector;
pub mod recon;
pub mod rng;
pub mod sampler;
pub mod score;

pub use error::{Error, Result};
pub use geometry::{ConeBeamGeometry, DomainTag, ProjectionStack, Volume, VolumeGrid};
