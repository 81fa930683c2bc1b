pub mod config;
pub mod persist;
pub mod ppm;
pub mod runner;
