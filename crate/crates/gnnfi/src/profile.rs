//! Range profile text files: `component<TAB>min<TAB>max`, with both bounds
//! as hexadecimal binary32 words so they survive a round trip bit for bit.
//!
//! ```text
//! weights	0xbfdb22d1	0x3fe8f5c3
//! activations	0xc1a00000	0x00000000
//! ```

use std::fmt::Write as _;
use std::path::Path;

use gnnfi_core::mitigation::{ClipRange, RangeProfile};

use crate::error::{read_to_string, write, Error, Result};

pub fn render_profile(p: &RangeProfile) -> String {
    let mut s = String::new();
    for (name, range) in [("weights", p.weights), ("activations", p.activations)] {
        if let Some(r) = range {
            let _ = writeln!(s, "{name}\t{:#010x}\t{:#010x}", r.floor().to_bits(), r.ceiling().to_bits());
        }
    }
    s
}

fn parse_word(s: &str) -> Option<f32> {
    let hex = s.strip_prefix("0x")?;
    if hex.len() != 8 {
        return None;
    }
    u32::from_str_radix(hex, 16).ok().map(f32::from_bits)
}

pub fn parse_profile(text: &str, file: &str) -> Result<RangeProfile> {
    let mut p = RangeProfile::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [component, lo, hi] = parts[..] else {
            return Err(Error::parse(file, lineno, "expected `component<TAB>min<TAB>max`"));
        };
        let word = |s: &str| {
            parse_word(s).ok_or_else(|| Error::parse(file, lineno, format!("`{s}` is not a 0x-prefixed binary32 word")))
        };
        let range = ClipRange::new(word(lo)?, word(hi)?).map_err(|e| Error::parse(file, lineno, e.to_string()))?;
        let slot = match component {
            "weights" => &mut p.weights,
            "activations" => &mut p.activations,
            other => return Err(Error::parse(file, lineno, format!("unknown component `{other}`"))),
        };
        if slot.replace(range).is_some() {
            return Err(Error::parse(file, lineno, format!("duplicate `{component}` entry")));
        }
    }
    Ok(p)
}

pub fn write_profile(p: &RangeProfile, path: &Path) -> Result<()> {
    write(path, render_profile(p))
}

pub fn read_profile(path: &Path) -> Result<RangeProfile> {
    parse_profile(&read_to_string(path)?, &path.display().to_string())
}
