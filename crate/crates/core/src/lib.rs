//! Limited-angle parallel-beam tomography for transmission X-ray microscopy.
//!
//! The crate covers the whole numerical path of a synthetic limited-angle
//! experiment: randomized ellipsoid phantoms, a ray-driven parallel-beam
//! projector, Poisson photon-counting noise, projection-domain PWLS
//! denoising, Ram-Lak filtered back-projection, a small U-Net that predicts
//! the limited-angle artifact image, and RMSE/SSIM evaluation.
//!
//! Everything here is `no_std` + `alloc`; file formats, the CLI and the
//! experiment pipeline live in the `txm` companion crate.
//!
//! Units: attenuation in μm⁻¹, pixel sizes in nm, line integrals
//! dimensionless.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub mod fbp;
pub mod grid;
pub mod math;
pub mod metrics;
pub mod noise;
pub mod phantom;
pub mod projection;
pub mod pwls;
pub mod rng;
pub mod unet;

pub use error::{Error, Result};
pub use grid::{Slice, Volume};
