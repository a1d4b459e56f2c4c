//! The urban case-study bundle: predicate library, the full urban
//! classifier with its six projections, and the three-feature junction
//! classifier.

use crate::dsl::Library;
use crate::tsc::Tsc;

/// Predicate definitions, in the formula language.
pub const FORMULAS: &str = include_str!("../assets/urban.tscf");
/// Full urban classifier document.
pub const CLASSIFIER: &str = include_str!("../assets/urban.toml");
/// Root with three optional features: left turn, oncoming traffic,
/// pedestrian crossing.
pub const MOTIVATION: &str = include_str!("../assets/motivation.toml");

/// Projection names of the urban classifier, in file order.
pub const PROJECTIONS: [&str; 6] = [
    "full",
    "layer-1+2",
    "layer-4",
    "layer-1+2+4",
    "layer-(4)+5",
    "pedestrian",
];

pub fn library() -> Library {
    Library::parse(FORMULAS).expect("bundled formulas parse")
}

pub fn classifier(lib: &Library) -> Tsc {
    Tsc::from_toml(CLASSIFIER, lib).expect("bundled classifier is valid")
}

pub fn motivation(lib: &Library) -> Tsc {
    Tsc::from_toml(MOTIVATION, lib).expect("bundled classifier is valid")
}
