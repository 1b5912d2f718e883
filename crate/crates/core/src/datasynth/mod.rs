//! Synthetic drilling-pattern dataset: class catalog, point sampling, dot
//! rasters, numeric records and the on-disk dataset layout.

pub mod catalog;
pub mod dataset;
pub mod raster;
pub mod record;

pub use catalog::{ase_catalog, validate_catalog, ClassSpec};
pub use dataset::{build_dataset, sample_points, stratified_test_counts, Dataset, Provenance, Sample, Split, SynthConfig, TextPlan};
pub use raster::{rasterize, RasterImage, RasterMeta};
pub use record::{summarize, NumericRecord, RingEdges};
