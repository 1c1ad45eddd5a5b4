pub mod clt;
pub mod datagen;
pub mod empirical;
pub mod error;
pub mod montecarlo;
pub mod mp;
pub mod panel_io;
pub mod spectra;
pub mod sphericity;

pub use error::{Error, Result};
