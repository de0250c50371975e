//! Model container format, graph validation, image I/O and toy models.

pub mod exec;
pub mod graph;
pub mod image;
pub mod manifest;
pub mod toy;

pub use exec::{argmax, forward, forward_traced, BlockTrace, ForwardTrace, NodeTrace};
pub use graph::{
    BnSpec, BottleneckSpec, ConvSpec, FcSpec, ModelGraph, NodePath, NodeSpec, PoolSpec, Preprocess,
    SkipSpec,
};
pub use image::{
    load_ppm, read_attribution_csv, read_ppm, write_attribution, write_ppm, ImageSample,
};
pub use manifest::{load_model, save_model, Manifest, TensorEntry};
pub use toy::generate_toy_resnet;
