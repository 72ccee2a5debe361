//! The emulated offload device: arena allocator, executor and timing model.

pub mod arena;
pub mod config;
pub(crate) mod device;
pub mod timing;

pub use arena::ArenaStats;
pub use config::RuntimeConfig;
pub use timing::{TimingModel, TimingSettings};
