//! Pixel data model, color conversion, file I/O, synthetic rain, and
//! rainy/clean dataset ingestion.

mod dataset;
mod image;
mod io;
mod rain;
mod scene;

pub use dataset::{PairDataset, PatchPair};
pub use image::Image;
pub use io::{load_image, save_image};
pub use rain::{synth_rain, RainConfig};
pub use scene::synth_clean_scene;
