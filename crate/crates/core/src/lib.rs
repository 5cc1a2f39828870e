pub mod camera;
pub mod env;
pub mod image_io;
pub mod mesh;
pub mod metrics;
pub mod raster;
pub mod service;
pub mod splat;
pub mod transform;
