//! EEG emotion recognition with a 3D-CNN and position/spectral/temporal
//! attention over 4D differential-entropy features.

mod error;

pub mod attention;
pub mod checkpoint;
pub mod dataio;
pub mod features;
pub mod layout;
pub mod model;
pub mod params;
pub mod train;

pub use error::{Error, Result};
