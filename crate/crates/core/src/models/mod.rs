//! Network configurations, assembly and parameter accounting.

mod config;
mod network;

pub use config::{LayerSpec, NetworkConfig, ParamCount, Skip, PRESET_NAMES};
pub use network::{Gradients, Layer, Mode, Network, ParamKind};
