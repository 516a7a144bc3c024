pub mod activations;
pub mod bench;
pub mod data;
pub mod model;
pub mod spline;
pub mod training;
pub mod uncertainty;
pub use nalgebra;
