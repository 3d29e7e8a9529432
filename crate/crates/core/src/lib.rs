pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod grad;
pub mod losses;
pub mod model;
pub mod render;
pub mod training;
