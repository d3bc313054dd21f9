//! Capacity, Wiener-type tests and h-Brownian motion for the heat operator
//! with a boundary pole.

pub mod error;
pub mod appell;
pub mod averaging;
pub mod capacity;
pub mod geometry;
pub mod hbrownian;
pub mod kernel;
pub mod measure;
pub mod wiener;

pub use error::{Error, Result};
