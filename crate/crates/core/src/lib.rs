//! Synthetic object-detection data generation with a software rasterizer,
//! COCO-style detection metrics, and a small trainable network for
//! frozen-feature transfer experiments.

pub mod cli;
pub mod compositor;
pub mod config;
pub mod datagen;
pub mod evalmetrics;
pub mod geometry;
pub mod renderer;
pub mod substream;
pub mod transferlab;
pub mod viewsampler;
