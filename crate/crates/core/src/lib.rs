//! Core engine for a reconfigurable quantum internet service provider.
//!
//! The crate is layered bottom-up the same way the running service is:
//!
//! * [`topology`] and [`fabric`]: the physical star network and the optical
//!   switches that act as quantum routers.
//! * [`scheduler`], [`journal`] and [`engine`]: exclusive time-windowed
//!   reservations of source and detector channels, their on-time allocation
//!   and recovery, and crash-safe persistence.
//! * [`photonics`], [`analysis`] and [`scenario`]: the simulated physical
//!   layer and the coincidence analysis used to witness entanglement through
//!   non-local dispersion cancellation.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod export;
pub mod fabric;
pub mod journal;
pub mod photonics;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod status;
pub mod topology;

pub use config::QispConfig;
pub use fabric::{ChannelKind, FabricSpec, FabricState, UserId};
pub use topology::{NodeId, OpticalPath, Topology};

/// The bundled campus network description.
pub const DEFAULT_CONFIG: &str = include_str!("../../../inquire.json");
