//! Plain (P2) 8-bit PGM images for map dumps. Row 0 of the file is grid row
//! 0, so images appear flipped relative to the usual y-up map convention.

use std::io::{Read, Write};

use crate::error::{Error, Result};

const FORMAT: &str = "PGM";
const MAX_PIXELS: usize = 1 << 24;
const MAX_INPUT: u64 = 256 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

/// Maps `[lo, hi]` to `0..=255`; non-finite values become 0.
pub fn to_u8(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    values
        .iter()
        .map(|&v| if v.is_finite() { (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8 } else { 0 })
        .collect()
}

pub fn write_pgm<W: Write>(mut w: W, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::DimensionMismatch { expected: width * height, got: pixels.len() });
    }
    writeln!(w, "P2\n{width} {height}\n255")?;
    for row in pixels.chunks(width.max(1)) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pgm<R: Read>(r: R) -> Result<Pgm> {
    let mut text = String::new();
    r.take(MAX_INPUT).read_to_string(&mut text).map_err(|e| Error::format(FORMAT, e.to_string()))?;
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_ascii_whitespace);
    if tokens.next() != Some("P2") {
        return Err(Error::format(FORMAT, "expected P2 magic"));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = tokens.next().ok_or_else(|| Error::format(FORMAT, format!("missing {what}")))?;
        t.parse().map_err(|_| Error::format(FORMAT, format!("bad {what}: {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(Error::format(FORMAT, "maxval must be in 1..=65535"));
    }
    let n = width.checked_mul(height).filter(|&n| n <= MAX_PIXELS).ok_or_else(|| Error::format(FORMAT, "image too large"))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let v = num("pixel")?;
        if v > maxval {
            return Err(Error::format(FORMAT, format!("pixel {v} exceeds maxval {maxval}")));
        }
        data.push(v as u16);
    }
    if tokens.next().is_some() {
        return Err(Error::format(FORMAT, "trailing data"));
    }
    Ok(Pgm { width, height, maxval: maxval as u16, data })
}
