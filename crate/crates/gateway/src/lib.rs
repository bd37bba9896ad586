//! Command line verbs and the HTTP service around a live session.

pub mod cli;
pub mod service;

use hearth_core::system::ConfigError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("port {0} is unavailable: {1}")]
    PortUnavailable(u16, std::io::Error),
    #[error("{0}")]
    Input(String),
}
