//! Talking-face forgery detection: temporal, audio-visual and frequency
//! streams over face clips, plus dataset tooling and a training harness.

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod dctam;
pub mod error;
pub mod harness;
pub mod head;
pub mod lfs;
pub mod media_io;
pub mod model;
pub mod params;
pub mod rsfdm;
pub mod scenario;
pub mod vafm;

pub use error::{Error, Result};
pub use tfgc_autograd as autograd;
