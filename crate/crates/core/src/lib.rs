pub mod eval;
pub mod geometry;
pub mod neuralnet;
pub mod perception;
pub mod reward;
pub mod rollout;
pub mod simenv;
pub mod trainer;
