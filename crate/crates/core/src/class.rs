use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Whether a sample (or a class-pure minibatch) contains overlapped speech.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapClass {
    Overlap,
    #[serde(rename = "nonoverlap")]
    NonOverlap,
}

impl fmt::Display for OverlapClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapClass::Overlap => "overlap",
            OverlapClass::NonOverlap => "nonoverlap",
        })
    }
}

impl FromStr for OverlapClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "overlap" => Ok(OverlapClass::Overlap),
            "nonoverlap" => Ok(OverlapClass::NonOverlap),
            other => Err(format!("unknown overlap class {other:?}")),
        }
    }
}
