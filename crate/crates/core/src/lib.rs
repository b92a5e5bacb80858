pub mod beamform;
pub mod channel;
pub mod ekf;
pub mod error;
pub mod fim;
pub mod geometry;
pub mod linalg;
pub mod sdp;
pub mod sim;

pub use error::{Error, Result};
