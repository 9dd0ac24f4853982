//! Error map text files, for replaying one corruption exactly.
//!
//! ```text
//! # ber=0.001 seed=42
//! conv1.weight	1203	30
//! conv2.weight	7	31
//! ```
//!
//! Each site line is `tensor_id<TAB>element<TAB>bit`, where bit 0 is the
//! least significant bit of the binary32 word.

use std::fmt::Write as _;
use std::path::Path;

use gnnfi_core::inject::{ErrorMap, FlipSite, ShapeCensus};

use crate::error::{read_to_string, write, Error, Result};

pub fn render_error_map(map: &ErrorMap) -> String {
    let mut s = format!("# ber={} seed={}\n", map.ber, map.seed);
    for site in map.sites() {
        let _ = writeln!(s, "{}\t{}\t{}", map.tensor_id(site), site.element, site.bit);
    }
    s
}

/// Parses a map file against the census of the tensors it will be applied to.
pub fn parse_error_map(text: &str, census: &ShapeCensus, file: &str) -> Result<ErrorMap> {
    let mut lines = text.lines().enumerate();
    let (ber, seed) = match lines.next() {
        Some((_, header)) => parse_header(header).ok_or_else(|| {
            Error::parse(file, 1, "expected header `# ber=<probability> seed=<integer>`")
        })?,
        None => return Err(Error::format(file, "empty error map")),
    };
    let mut sites = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [id, element, bit] = parts[..] else {
            return Err(Error::parse(file, lineno, "expected `tensor<TAB>element<TAB>bit`"));
        };
        let tensor = census
            .iter()
            .position(|(name, _)| name == id)
            .ok_or_else(|| Error::parse(file, lineno, format!("unknown tensor `{id}`")))?;
        let element = element
            .parse()
            .map_err(|_| Error::parse(file, lineno, format!("bad element index `{element}`")))?;
        let bit: u8 = bit
            .parse()
            .ok()
            .filter(|&b| b < 32)
            .ok_or_else(|| Error::parse(file, lineno, format!("bad bit index `{bit}`")))?;
        sites.push(FlipSite { tensor, element, bit });
    }
    sites.sort_unstable();
    Ok(ErrorMap::new(ber, seed, census.clone(), sites)?)
}

fn parse_header(line: &str) -> Option<(f64, u64)> {
    let rest = line.strip_prefix('#')?.trim();
    let mut ber = None;
    let mut seed = None;
    for part in rest.split_whitespace() {
        match part.split_once('=')? {
            ("ber", v) => ber = v.parse::<f64>().ok(),
            ("seed", v) => seed = v.parse::<u64>().ok(),
            _ => return None,
        }
    }
    Some((ber?, seed?))
}

pub fn write_error_map(map: &ErrorMap, path: &Path) -> Result<()> {
    write(path, render_error_map(map))
}

pub fn read_error_map(path: &Path, census: &ShapeCensus) -> Result<ErrorMap> {
    parse_error_map(&read_to_string(path)?, census, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gnnfi_core::inject::generate_error_map;

    fn census() -> ShapeCensus {
        vec![("conv1.weight".into(), 40), ("conv2.weight".into(), 12)]
    }

    #[test]
    fn round_trip() {
        let map = generate_error_map(&census(), 0.05, 17).unwrap();
        assert!(!map.is_empty());
        let text = render_error_map(&map);
        assert!(text.starts_with("# ber=0.05 seed=17\n"));
        assert_eq!(parse_error_map(&text, &census(), "m").unwrap(), map);
    }

    #[test]
    fn lines_are_sorted_on_read() {
        let text = "# ber=0 seed=1\nconv2.weight\t0\t3\nconv1.weight\t5\t31\n";
        let map = parse_error_map(text, &census(), "m").unwrap();
        assert_eq!(map.sites()[0].tensor, 0);
    }

    #[test]
    fn rejects_bad_lines() {
        let bad = [
            "",
            "ber=1 seed=2\n",
            "# ber=0 seed=1\nconv9.weight\t0\t0\n",
            "# ber=0 seed=1\nconv1.weight\t40\t0\n",
            "# ber=0 seed=1\nconv1.weight\t0\t32\n",
            "# ber=0 seed=1\nconv1.weight\t0\n",
            "# ber=0 seed=1\nconv1.weight\t0\t1\nconv1.weight\t0\t1\n",
        ];
        for text in bad {
            assert!(parse_error_map(text, &census(), "m").is_err(), "{text:?}");
        }
        let err = parse_error_map("# ber=0 seed=1\n\nconv1.weight\tx\t0\n", &census(), "m").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }
}
