//! Theory checks and loss-landscape scans.

mod landscape;
mod theory;

pub use landscape::{
    coordinates, displaced, scan_landscape, scan_with_directions, sharpness, write_landscape_csv, Directions,
    GridSpec, LandscapeGrid, LandscapeMeta, Sharpness,
};
pub use theory::{half_decade_grid, log_log_slope, verify_first_order, write_equivalence_csv, EquivalenceReport, SurrogateForm};
