//! Joint multi-class list-mode reconstruction for three-photon PET and
//! Compton-telescope imaging.
//!
//! The crate covers the whole chain of a simulation study:
//!
//! * [`geometry`]: voxel grid and the cylindrical detection annulus,
//! * [`physics`]: Compton kinematics, Klein–Nishina sampling, energy blur,
//! * [`simulate`]: Monte-Carlo decays, transport and the five detection classes,
//! * [`sysmodel`]: per-class continuous kernels and Monte-Carlo sensitivity maps,
//! * [`infer`]: per-class likelihoods, Fisher information and the multi-class
//!   list-mode MLEM update,
//! * [`phantom`], [`config`] and [`io`]: the plumbing used by the command line.
//!
//! All randomness flows from a single 64-bit seed through counter-based
//! streams (see [`rng`]), so every result is independent of the number of
//! worker threads.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod class;
pub mod config;
pub mod error;
pub mod geometry;
pub mod infer;
pub mod io;
pub mod par;
pub mod phantom;
pub mod physics;
pub mod rng;
pub mod simulate;
pub mod sysmodel;

pub use class::{ClassSet, ClassTag};
pub use error::{Error, Result};
pub use geometry::{DetectorAnnulus, Direction3, Point3, Vec3, VoxelGrid};
pub use infer::ActivityImage;
pub use physics::{ComptonCone, PhysicsParams};
pub use simulate::DetectionEvent;
pub use sysmodel::{KernelParams, SensitivityMap};
