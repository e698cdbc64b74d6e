//! Geolocation by classification over an adaptive spherical mesh.

pub mod data;
pub mod features;
pub mod mesh;
pub mod metrics;
pub mod models;
pub mod sphere;
