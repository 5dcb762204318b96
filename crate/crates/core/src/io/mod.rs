//! Plain-text configuration and dataset formats.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! file reads back to bit-identical values.

mod config;
mod formats;
mod params;

pub use params::{read_params, write_params, PARAM_HEADER};
pub use config::{parse_config, render_config, Settings};
pub use formats::{
    read_multiview, read_scenes, read_voxgrid, write_multiview, write_scenes, write_voxgrid, MULTIVIEW_HEADER,
    SCENE_HEADER, VOXGRID_HEADER,
};
