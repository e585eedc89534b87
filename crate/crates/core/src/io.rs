//! File formats: FIMG images, PGM previews, TPPA checkpoints and CSV reports.
//!
//! FIMG: `FIMG0001`, u32 LE width, u32 LE height, then width·height f64 LE
//! samples in row-major order.
//!
//! TPPA: `TPPA0001`, u32 LE fields T, K (= 4), P, degree, tied, shrink_approx,
//! then f64 LE Δ, the step parameters α and the spline coefficients in
//! (t, k, p) order. A tied checkpoint stores a single α and a single set of
//! coefficients while T still records the depth.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::haar4::CHANNELS;
use crate::network::{Theta, ThetaLayout};
use crate::shrinkage::{Degree, SplineGrid};
use crate::{Error, Image, Result};

pub const FIMG_MAGIC: &[u8; 8] = b"FIMG0001";
pub const TPPA_MAGIC: &[u8; 8] = b"TPPA0001";

/// Largest width or height accepted by the decoders.
pub const MAX_DIM: usize = 1 << 16;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], format: &'static str) -> Self {
        Reader { bytes, pos: 0, format }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.format, format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::format(self.format, "bad magic"));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.format, "sample count overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.format,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn dim(value: u32, what: &str, format: &'static str) -> Result<usize> {
    let v = value as usize;
    if v == 0 || v > MAX_DIM {
        return Err(Error::format(format, format!("{what} {v} outside 1..={MAX_DIM}")));
    }
    Ok(v)
}

fn u32_field(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::invalid(format!("{what} {value} does not fit in 32 bits")))
}

pub fn encode_fimg(img: &Image) -> Result<Vec<u8>> {
    let (rows, cols) = img.dims();
    let mut out = Vec::with_capacity(16 + 8 * img.len());
    out.extend_from_slice(FIMG_MAGIC);
    out.extend_from_slice(&u32_field(cols, "width")?.to_le_bytes());
    out.extend_from_slice(&u32_field(rows, "height")?.to_le_bytes());
    for v in img.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fimg(bytes: &[u8]) -> Result<Image> {
    let mut r = Reader::new(bytes, "FIMG");
    r.magic(FIMG_MAGIC)?;
    let cols = dim(r.u32()?, "width", "FIMG")?;
    let rows = dim(r.u32()?, "height", "FIMG")?;
    let data = r.f64s(rows * cols)?;
    r.finish()?;
    Image::from_vec(rows, cols, data)
}

/// PGM sample depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

/// Binary PGM with `[0, 1]` mapped linearly onto `0..=maxval`; values
/// outside the range are clamped.
pub fn encode_pgm(img: &Image, depth: PgmDepth) -> Vec<u8> {
    let (rows, cols) = img.dims();
    let maxval = depth.maxval();
    let mut out = format!("P5\n{cols} {rows}\n{maxval}\n").into_bytes();
    for &v in img.as_slice() {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        let q = (v * maxval as f64).round() as u32;
        match depth {
            PgmDepth::Eight => out.push(q as u8),
            PgmDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
                    *pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("PGM", format!("expected a number at byte {start}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("ascii digits")
        .parse()
        .map_err(|_| Error::format("PGM", "header number out of range"))
}

/// Reads a binary (P5) PGM, scaling samples to `[0, 1]` by `maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format("PGM", "not a binary PGM (P5)"));
    }
    let mut pos = 2;
    let cols = dim(pgm_token(bytes, &mut pos)?, "width", "PGM")?;
    let rows = dim(pgm_token(bytes, &mut pos)?, "height", "PGM")?;
    let maxval = pgm_token(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("PGM", format!("maxval {maxval} outside 1..=65535")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("PGM", "missing whitespace after header"));
    }
    pos += 1;
    let width = if maxval < 256 { 1 } else { 2 };
    let n = rows * cols;
    let body = &bytes[pos..];
    if body.len() < n * width {
        return Err(Error::format(
            "PGM",
            format!("expected {} sample bytes, found {}", n * width, body.len()),
        ));
    }
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let raw = if width == 1 {
            body[i] as u32
        } else {
            u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as u32
        };
        if raw > maxval {
            return Err(Error::format("PGM", format!("sample {raw} exceeds maxval {maxval}")));
        }
        data.push(raw as f64 * scale);
    }
    Image::from_vec(rows, cols, data)
}

pub fn encode_checkpoint(theta: &Theta) -> Result<Vec<u8>> {
    let layout = theta.layout();
    let grid = layout.grid;
    let mut out = Vec::with_capacity(32 + 8 * (1 + theta.dim()));
    out.extend_from_slice(TPPA_MAGIC);
    for field in [
        u32_field(layout.layers, "layer count")?,
        CHANNELS as u32,
        u32_field(grid.half_width(), "spline half-width")?,
        grid.degree().order() as u32,
        layout.tied as u32,
        layout.shrink_approx as u32,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    out.extend_from_slice(&grid.delta().to_le_bytes());
    for v in theta.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn flag(value: u32, what: &str) -> Result<bool> {
    match value {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::format(
            "TPPA",
            format!("{what} flag must be 0 or 1, got {value}"),
        )),
    }
}

/// Upper bound on the parameter count a checkpoint may declare.
pub const MAX_PARAMS: usize = 1 << 28;

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Theta> {
    let mut r = Reader::new(bytes, "TPPA");
    r.magic(TPPA_MAGIC)?;
    let layers = r.u32()? as usize;
    let channels = r.u32()?;
    if channels as usize != CHANNELS {
        return Err(Error::format(
            "TPPA",
            format!("expected {CHANNELS} channels, got {channels}"),
        ));
    }
    let half_width = r.u32()? as usize;
    let degree = Degree::try_from(r.u32()?).map_err(|e| Error::format("TPPA", e.to_string()))?;
    let tied = flag(r.u32()?, "tied")?;
    let shrink_approx = flag(r.u32()?, "shrink_approx")?;
    let delta = r.f64s(1)?[0];
    let grid = SplineGrid::new(half_width, delta, degree).map_err(|e| Error::format("TPPA", e.to_string()))?;
    let slabs = if tied { layers.min(1) } else { layers };
    let dim = (2 * half_width as u128 + 1) * CHANNELS as u128 * slabs as u128 + slabs as u128;
    if dim > MAX_PARAMS as u128 {
        return Err(Error::format(
            "TPPA",
            format!("declared parameter count {dim} is too large"),
        ));
    }
    let layout = ThetaLayout {
        layers,
        grid,
        tied,
        shrink_approx,
    };
    let params = r.f64s(layout.dim())?;
    r.finish()?;
    Theta::from_params(layout, params)
}

pub fn read_fimg(path: impl AsRef<Path>) -> Result<Image> {
    decode_fimg(&fs::read(path)?)
}

pub fn write_fimg(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    Ok(fs::write(path, encode_fimg(img)?)?)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Image, depth: PgmDepth) -> Result<()> {
    Ok(fs::write(path, encode_pgm(img, depth))?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Theta> {
    decode_checkpoint(&fs::read(path)?)
}

pub fn write_checkpoint(path: impl AsRef<Path>, theta: &Theta) -> Result<()> {
    Ok(fs::write(path, encode_checkpoint(theta)?)?)
}

/// Reads an image by extension: `.pgm` as PGM, anything else as FIMG.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        read_pgm(path)
    } else {
        read_fimg(path)
    }
}

/// One line of an evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub image_id: String,
    pub method: String,
    pub psf_size: usize,
    pub snr_in_db: f64,
    pub snr_out_db: f64,
}

pub const REPORT_HEADER: [&str; 5] = ["image_id", "method", "psf_size", "snr_in_db", "snr_out_db"];

pub fn write_report<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for row in rows {
        w.write_record([
            row.image_id.clone(),
            row.method.clone(),
            row.psf_size.to_string(),
            row.snr_in_db.to_string(),
            row.snr_out_db.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(bytes: &[u8]) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(Error::format("report CSV", "unexpected header"));
    }
    let number = |s: &str, what: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::format("report CSV", format!("bad {what} {s:?}")))
    };
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(ReportRow {
                image_id: rec[0].to_string(),
                method: rec[1].to_string(),
                psf_size: rec[2]
                    .parse()
                    .map_err(|_| Error::format("report CSV", format!("bad psf_size {:?}", &rec[2])))?,
                snr_in_db: number(&rec[3], "snr_in_db")?,
                snr_out_db: number(&rec[4], "snr_out_db")?,
            })
        })
        .collect()
}

/// `iteration,<name>` rows, numbering from `first`.
pub fn write_series<W: Write>(out: W, name: &str, first: usize, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", name])?;
    for (i, e) in values.iter().enumerate() {
        w.write_record([(first + i).to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `iteration,E` rows starting at iteration 0.
pub fn write_loss_trace<W: Write>(out: W, trace: &[f64]) -> Result<()> {
    write_series(out, "E", 0, trace)
}
