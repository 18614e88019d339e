//! File formats, report rendering and the `pooltest` command line.

pub mod app;
pub mod formats;
pub mod report;
