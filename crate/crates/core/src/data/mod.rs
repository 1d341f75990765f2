//! Synthetic chest-like scenes, template reports and the preprocessing chain.

pub mod dataset;
pub mod image;
pub mod io;
pub mod render;
pub mod report;
pub mod scene;
pub mod vocab;

pub use dataset::{generate_dataset, split, DatasetConfig, Sample, Split};
pub use image::{normalize, pad_to_square, preprocess, resize, Image};
pub use io::{load_dataset, write_dataset, Dataset, Example, ManifestRecord};
pub use render::{rasterize_mask, render_image};
pub use report::make_report;
pub use scene::{AbnormalitySpec, Ellipse, Laterality, Region, SceneSpec};
pub use vocab::Vocabulary;
