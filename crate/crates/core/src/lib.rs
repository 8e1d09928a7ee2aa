pub mod bench;
pub mod codec;
pub mod error;
pub mod eval;
pub mod formats;
pub mod geometry;
pub mod image;
pub mod linker;
pub mod loss;
pub mod maps;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod weight_file;
