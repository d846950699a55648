//! Zone-based training toolkit for ultrasound RF tissue classification.
//!
//! The library covers the full pipeline: pixel-exact patch extraction from
//! RF frames ([`geometry`]), a synthetic phantom generator for desk-scale
//! experiments ([`synthphantom`]), dataset assembly with normalization and
//! augmentation ([`datapipe`]), a compact AlexNet-style classifier with its
//! own optimizer ([`model`], [`nn`], [`trainer`]), experiment harnesses and
//! sweeps ([`evalkit`]), and binary frame/checkpoint containers plus dataset
//! acquisition ([`ingest`]).

pub mod datapipe;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod par;
pub mod seeds;
pub mod synthphantom;
pub mod trainer;

pub use error::{Error, Result};
