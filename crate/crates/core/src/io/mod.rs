//! Persistence: binary containers, CSV, structured-text documents, and
//! deterministic dataset splitting.

pub mod container;
pub mod csv;
pub mod report;
pub mod split;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub use self::container::{
    read_container, read_zone_container, write_container, write_zone_container,
};
pub use self::csv::{read_csv, write_csv};
pub use self::split::{split, SplitSpec};

use crate::domain::ScoreMapSet;
use crate::error::Result;

/// Loads a score set, choosing the format by extension (`.csv` or container).
pub fn load_scores(path: &Path) -> Result<ScoreMapSet> {
    let reader = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv(reader)
    } else {
        read_container(reader)
    }
}

pub fn save_scores(path: &Path, set: &ScoreMapSet) -> Result<u64> {
    let writer = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        write_csv(set, writer)?;
        Ok(std::fs::metadata(path)?.len())
    } else {
        write_container(set, writer)
    }
}
