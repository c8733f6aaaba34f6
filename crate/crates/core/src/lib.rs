pub mod config;
pub mod error;
pub mod dnmap;
pub mod field;
pub mod forward;
pub mod grid;
pub mod inversion;
pub mod io;
pub mod oracle;
pub mod pipeline;
pub mod quad;
pub mod spacefrac;
pub mod special;
pub mod timefrac;

pub use error::{Error, Result};
