//! File formats.
//!
//! * Texture files: one ASCII header line `FSEG1 <rows> <cols>\n` followed by
//!   `rows·cols` little-endian `f64`, row-major.
//! * Raw grids: bare little-endian `f64` (`.f64`) with a text sidecar
//!   (`.hdr`) holding `key = value` lines.
//! * Masks: binary PGM (`P5`, maxval 255, labels stored as 0/255) or raw
//!   bytes (one `0`/`1` byte per pixel).

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gridops::{Mask, ScalarField};

pub const TEXTURE_MAGIC: &str = "FSEG1";

pub fn write_raw_f64(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raw_f64(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f64(path, &bytes)
}

fn decode_f64(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::format(path, "payload length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_texture(path: &Path, field: &ScalarField) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = format!("{TEXTURE_MAGIC} {} {}\n", field.rows(), field.cols()).into_bytes();
    buf.reserve(field.len() * 8);
    for v in field.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_texture(path: &Path) -> Result<ScalarField> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != TEXTURE_MAGIC {
        return Err(Error::format(path, format!("bad header {header:?}")));
    }
    let rows: usize = parts[1]
        .parse()
        .map_err(|_| Error::format(path, "bad row count"))?;
    let cols: usize = parts[2]
        .parse()
        .map_err(|_| Error::format(path, "bad column count"))?;
    let mut payload = Vec::new();
    reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    let data = decode_f64(path, &payload)?;
    if data.len() != rows * cols {
        return Err(Error::format(
            path,
            format!("header says {rows}x{cols} but payload has {} values", data.len()),
        ));
    }
    ScalarField::new(rows, cols, data)
}

/// Raw grid plus `.hdr` sidecar; `extra` entries are appended to the sidecar.
pub fn write_grid_with_sidecar(
    path: &Path,
    field: &ScalarField,
    extra: &[(&str, String)],
) -> Result<()> {
    write_raw_f64(path, field.as_slice())?;
    let hdr = path.with_extension("hdr");
    let mut text = format!("rows = {}\ncols = {}\n", field.rows(), field.cols());
    for (k, v) in extra {
        text.push_str(&format!("{k} = {v}\n"));
    }
    fs::write(&hdr, text).map_err(|e| Error::io(&hdr, e))
}

pub fn read_grid_with_sidecar(path: &Path) -> Result<ScalarField> {
    let hdr = path.with_extension("hdr");
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let mut rows = None;
    let mut cols = None;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            match k.trim() {
                "rows" => rows = v.trim().parse().ok(),
                "cols" => cols = v.trim().parse().ok(),
                _ => {}
            }
        }
    }
    let (rows, cols) = rows
        .zip(cols)
        .ok_or_else(|| Error::format(&hdr, "missing rows/cols"))?;
    let data = read_raw_f64(path)?;
    if data.len() != rows * cols {
        return Err(Error::format(path, "payload does not match sidecar dims"));
    }
    ScalarField::new(rows, cols, data)
}

pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", mask.cols(), mask.rows()).into_bytes();
    buf.extend(mask.as_slice().iter().map(|&v| if v == 0 { 0u8 } else { 255 }));
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a binary PGM; any non-zero sample becomes label 1.
pub fn read_pgm_mask(path: &Path) -> Result<Mask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PGM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::format(path, "not a binary PGM (P5)"));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad PGM header field {s:?}")))
    };
    let cols = parse(&tokens[1])?;
    let rows = parse(&tokens[2])?;
    let maxval = parse(&tokens[3])?;
    if maxval > 255 {
        return Err(Error::format(path, "16-bit PGM masks are not supported"));
    }
    let payload = bytes
        .get(pos..pos + rows * cols)
        .ok_or_else(|| Error::format(path, "truncated PGM payload"))?;
    Mask::new(rows, cols, payload.iter().map(|&v| u8::from(v != 0)).collect())
}

pub fn write_mask_raw(path: &Path, mask: &Mask) -> Result<()> {
    fs::write(path, mask.as_slice()).map_err(|e| Error::io(path, e))
}
