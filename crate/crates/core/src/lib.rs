//! IVOCT pullback analysis: guidewire and lumen preprocessing, calcium gating and
//! segmentation, stent strut analysis, serial registration and quantification.

pub mod config;
pub mod dp;
pub mod filter;
pub mod io;
pub mod model;
pub mod morph;
pub mod phantom;
pub mod pipeline;
pub mod plaque;
pub mod preprocess;
pub mod quant;
pub mod registration;
pub mod stent;
