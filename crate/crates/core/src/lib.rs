pub mod algorithms;
pub mod diffcore;
pub mod episodes;
pub mod harness;
pub mod models;
pub mod rng;
