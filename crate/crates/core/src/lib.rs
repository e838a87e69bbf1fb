pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod gan;
pub mod imageio;
pub mod legend;
pub mod metrics;
pub mod nets;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod synthcity;
pub mod tile;

pub use error::{Error, Result};
pub use legend::{Legend, LegendEntry, Role};
pub use raster::{class_histogram, encode_classmap, quantize_to_classes, ClassMap, RasterImage};
pub use tile::{tile, Origin, TileSpec};
pub use synthcity::{generate_corpus, generate_scene, split_corpus, Corpus, SceneParams, SceneQuad};
