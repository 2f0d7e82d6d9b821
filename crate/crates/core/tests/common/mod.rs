//! Oracles and fixtures shared by several test targets.
#![allow(dead_code)]

pub mod stub;
pub mod transport;
pub mod zbuffer;
