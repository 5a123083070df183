//! Delimited interaction files.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use lfagcl_core::RawInteractions;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no valid interactions ({malformed} malformed lines)")]
    NoInteractions { path: String, malformed: usize },
}

/// Line accounting for one loaded file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines_read: usize,
    pub blank_lines: usize,
    pub duplicates: usize,
    pub malformed: usize,
}

/// Parses `user<d>item[<d>rating[<d>...]]` lines. A third field is taken as
/// the rating when it parses as a finite number; later fields are ignored.
pub fn parse_interactions<R: BufRead>(reader: R, delimiter: char) -> std::io::Result<(RawInteractions, LoadStats)> {
    let mut raw = RawInteractions::new();
    let mut stats = LoadStats::default();
    for line in reader.lines() {
        let line = line?;
        stats.lines_read += 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            stats.blank_lines += 1;
            continue;
        }
        let mut fields = line.split(delimiter).map(str::trim);
        let (Some(user), Some(item)) = (fields.next(), fields.next()) else {
            stats.malformed += 1;
            continue;
        };
        if user.is_empty() || item.is_empty() {
            stats.malformed += 1;
            continue;
        }
        let rating = fields
            .next()
            .and_then(|r| r.parse::<f64>().ok())
            .filter(|r| r.is_finite());
        if !raw.push(user, item, rating) {
            stats.duplicates += 1;
        }
    }
    if stats.malformed > 0 {
        log::warn!("skipped {} malformed lines", stats.malformed);
    }
    Ok((raw, stats))
}

pub fn load_interactions(path: &Path, delimiter: char) -> Result<(RawInteractions, LoadStats), LoadError> {
    let io_err = |source| LoadError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let (raw, stats) = parse_interactions(BufReader::new(file), delimiter).map_err(io_err)?;
    if raw.is_empty() {
        return Err(LoadError::NoInteractions {
            path: path.display().to_string(),
            malformed: stats.malformed,
        });
    }
    Ok((raw, stats))
}

/// Formats `x` with six significant digits, switching to exponent form
/// outside `[1e-4, 1e6)`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&magnitude) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}
