//! Demo models behind the `aghq` command-line tool.

pub mod demos;
pub mod error;
pub mod models;
pub mod oracle;

pub use demos::{run, DemoConfig, DemoOutput, Format, Model};
pub use error::CliError;
