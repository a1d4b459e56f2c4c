//! Scenario-class coverage for recorded driving runs.
//!
//! ```no_run
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! use std::path::Path;
//! use tscov::{ingest, metrics, tsc, urban};
//!
//! let lib = urban::library();
//! let tree = urban::classifier(&lib);
//! let run = ingest::load_path(Path::new("run.ndjson"))?;
//! let segments = ingest::segment_run(&run, false, &ingest::SegmentOptions::default())?;
//! let results = tsc::Classifier::new(&tree)?.classify_all(&segments);
//! let report = metrics::CoverageReport::build(&tree, "full", &results, &Default::default())?;
//! println!("{}", report.to_json());
//! # Ok(())
//! # }
//! ```

pub mod dsl;
pub mod ingest;
pub mod logic;
pub mod metrics;
pub mod sanity;
pub mod scene;
pub mod signature;
pub mod simgen;
pub mod tsc;
pub mod urban;
