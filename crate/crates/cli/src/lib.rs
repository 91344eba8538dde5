//! Command-line tool and HTTP service over the exercise pipeline.

pub mod cli;
pub mod config;
pub mod error;
pub mod jobs;
pub mod ops;
pub mod server;

pub use config::Config;
pub use error::{ApiError, ErrorCode};
pub use ops::Context;
