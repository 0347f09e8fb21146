pub mod align;
pub mod analytics;
pub mod corpus;
pub mod distance;
pub mod embedding;
pub mod entity;
pub mod frame;
mod hash;
pub mod perturb;
pub mod synthetic;
