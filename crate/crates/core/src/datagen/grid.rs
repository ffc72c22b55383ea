//! Plain-text float grids for saliency maps.
//!
//! ```text
//! SALGRID <width> <height>
//! <v00> <v01> ... <v0,w-1>
//! ...
//! ```
//!
//! One header line, then `height` lines of `width` space-separated values in
//! shortest round-trip decimal form, each line ending in `\n`.

use std::fmt::Write as _;
use std::path::Path;

use super::DatagenError;
use crate::metrics::SaliencyMap;

pub const MAGIC: &str = "SALGRID";

pub fn encode(map: &SaliencyMap) -> String {
    let mut out = String::with_capacity(map.values().len() * 3 + 32);
    writeln!(out, "{MAGIC} {} {}", map.width(), map.height()).unwrap();
    for row in map.values().chunks(map.width().max(1)) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn decode(text: &str) -> Result<SaliencyMap, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(format!("missing {MAGIC} header"));
    }
    let mut dim = |name: &str| -> Result<usize, String> {
        parts
            .next()
            .ok_or(format!("missing {name}"))?
            .parse()
            .map_err(|e| format!("bad {name}: {e}"))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let mut values = Vec::with_capacity(width * height);
    for r in 0..height {
        let line = lines.next().ok_or(format!("missing row {r}"))?;
        let before = values.len();
        for tok in line.split_whitespace() {
            values.push(tok.parse::<f64>().map_err(|e| format!("row {r}: {e}"))?);
        }
        if values.len() - before != width {
            return Err(format!("row {r} has {} values, expected {width}", values.len() - before));
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err("trailing data after last row".into());
    }
    SaliencyMap::from_values(width, height, values).map_err(|e| e.to_string())
}

pub fn write(path: &Path, map: &SaliencyMap) -> Result<(), DatagenError> {
    std::fs::write(path, encode(map)).map_err(|e| DatagenError::io(path, e))
}

pub fn read(path: &Path) -> Result<SaliencyMap, DatagenError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatagenError::io(path, e))?;
    decode(&text).map_err(|message| DatagenError::Grid { path: path.to_path_buf(), message })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let m = SaliencyMap::from_values(3, 2, vec![0.0, 0.55, 1.0, 0.125, 0.0, 2.5e-7]).unwrap();
        assert_eq!(encode(&m), "SALGRID 3 2\n0 0.55 1\n0.125 0 0.00000025\n");
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode("").is_err());
        assert!(decode("GRID 1 1\n0\n").is_err());
        assert!(decode("SALGRID 2 1\n0\n").is_err());
        assert!(decode("SALGRID 1 2\n0\n").is_err());
        assert!(decode("SALGRID 1 1\n-1\n").is_err());
        assert!(decode("SALGRID 1 1\n1\n1\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trips_exactly(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let values: Vec<f64> = (0..w * h)
                .map(|i| (seed.wrapping_mul(i as u64 + 1) % 1000) as f64 / 7.0)
                .collect();
            let m = SaliencyMap::from_values(w, h, values).unwrap();
            prop_assert_eq!(decode(&encode(&m)).unwrap(), m);
        }
    }
}
