pub mod compensation;
pub mod config;
pub mod distribution;
pub mod dump;
pub mod error;
pub mod experiment;
pub mod fisher;
pub mod model;
pub mod music;
pub mod partition;
pub mod rates;
pub mod synthesis;

pub use error::{IsacError, Result};
