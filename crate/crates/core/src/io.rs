//! Image stack, track, diagnostics and parameter file formats.
//!
//! Frames and track labels are 1-based in every file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{theta_names, theta_values};
use crate::model::{ImageStack, ModelParams, TargetState, Track};
use crate::sampler::Diagnostics;

pub const MAGIC: &[u8; 4] = b"MTS1";

/// Encodes a stack as `MTS1`, three little-endian u32 (frames, rows, cols)
/// and row-major little-endian f32 pixels.
pub fn encode_mts(y: &ImageStack) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * y.data().len());
    out.extend_from_slice(MAGIC);
    for d in [y.frames(), y.rows(), y.cols()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in y.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_mts(bytes: &[u8]) -> Result<ImageStack> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated { expected: 16, found: bytes.len() });
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, rows, cols) = (dim(0), dim(1), dim(2));
    let count = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let expected = 16 + 4 * count;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - expected)));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ImageStack::new(n, rows, cols, data)
}

pub fn write_mts(path: &Path, y: &ImageStack) -> Result<()> {
    std::fs::write(path, encode_mts(y))?;
    Ok(())
}

pub fn read_mts(path: &Path) -> Result<ImageStack> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_mts(&bytes)
}

fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{:04}.csv", t + 1))
}

/// Writes one headerless CSV per frame, values rounded to f32.
pub fn write_frame_dir(dir: &Path, y: &ImageStack) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for t in 0..y.frames() {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(frame_path(dir, t))?;
        for row in y.frame(t).chunks(y.cols()) {
            w.write_record(row.iter().map(|v| (*v as f32).to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn read_frame_dir(dir: &Path) -> Result<ImageStack> {
    let mut data = Vec::new();
    let (mut rows, mut cols, mut n) = (0, 0, 0);
    while frame_path(dir, n).exists() {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(frame_path(dir, n))?;
        let mut frame_rows = 0;
        for rec in r.records() {
            let rec = rec?;
            if n == 0 && frame_rows == 0 {
                cols = rec.len();
            }
            if rec.len() != cols {
                return Err(Error::Dimension(format!("frame {} row {} has {} columns, expected {cols}", n + 1, frame_rows + 1, rec.len())));
            }
            for field in rec.iter() {
                let v: f32 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("frame {}: cannot parse {field:?}", n + 1)))?;
                data.push(v as f64);
            }
            frame_rows += 1;
        }
        if n == 0 {
            rows = frame_rows;
        } else if frame_rows != rows {
            return Err(Error::Dimension(format!("frame {} has {frame_rows} rows, expected {rows}", n + 1)));
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Format(format!("no frame_0001.csv in {}", dir.display())));
    }
    ImageStack::new(n, rows, cols, data)
}

/// Reads either a `.mts` file or a directory of frame CSVs.
pub fn read_stack(path: &Path) -> Result<ImageStack> {
    if path.is_dir() {
        read_frame_dir(path)
    } else {
        read_mts(path)
    }
}

const TRACK_HEADER: [&str; 8] = ["sample", "track", "frame", "a", "sx", "sy", "vx", "vy"];

/// Streaming writer for `sample,track,frame,a,sx,sy,vx,vy` rows.
pub struct TracksWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl TracksWriter<File> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(File::create(path)?)
    }
}

impl<W: Write> TracksWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        inner.write_record(TRACK_HEADER)?;
        Ok(Self { inner })
    }

    /// Writes the tracks of one sample; labels follow slice order.
    pub fn write(&mut self, sample: usize, tracks: &[Track]) -> Result<()> {
        for (i, k) in tracks.iter().enumerate() {
            for (j, x) in k.states.iter().enumerate() {
                self.inner.write_record(&[
                    sample.to_string(),
                    (i + 1).to_string(),
                    (k.birth + j + 1).to_string(),
                    x.a.to_string(),
                    x.s[0].to_string(),
                    x.s[1].to_string(),
                    x.v[0].to_string(),
                    x.v[1].to_string(),
                ])?;
            }
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

#[derive(Debug, serde::Deserialize)]
struct TrackRow {
    sample: usize,
    track: usize,
    frame: usize,
    a: f64,
    sx: f64,
    sy: f64,
    vx: f64,
    vy: f64,
}

/// Reads a tracks CSV into tracks per sample index.
pub fn read_tracks<R: Read>(r: R) -> Result<BTreeMap<usize, Vec<Track>>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows: BTreeMap<(usize, usize), Vec<(usize, TargetState)>> = BTreeMap::new();
    for rec in rd.deserialize::<TrackRow>() {
        let r = rec?;
        if r.frame == 0 {
            return Err(Error::Format("frames are numbered from 1".into()));
        }
        rows.entry((r.sample, r.track))
            .or_default()
            .push((r.frame - 1, TargetState::new(r.a, [r.sx, r.sy], [r.vx, r.vy])));
    }
    let mut out: BTreeMap<usize, Vec<Track>> = BTreeMap::new();
    for ((sample, label), mut states) in rows {
        states.sort_by_key(|(t, _)| *t);
        let birth = states[0].0;
        if states.iter().enumerate().any(|(i, (t, _))| *t != birth + i) {
            return Err(Error::Format(format!("track {label} of sample {sample} skips a frame")));
        }
        out.entry(sample).or_default().push(Track::new(birth, states.into_iter().map(|(_, x)| x).collect()));
    }
    Ok(out)
}

pub fn read_tracks_file(path: &Path) -> Result<BTreeMap<usize, Vec<Track>>> {
    read_tracks(File::open(path)?)
}

/// Line-delimited JSON diagnostics.
pub struct DiagnosticsWriter<W: Write> {
    inner: W,
}

impl DiagnosticsWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { inner: BufWriter::new(File::create(path)?) })
    }
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn write(&mut self, d: &Diagnostics) -> Result<()> {
        serde_json::to_writer(&mut self.inner, d)?;
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_diagnostics<R: Read>(r: R) -> Result<Vec<Diagnostics>> {
    let mut out = Vec::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Parameter samples with one column per θ component.
pub struct ParamsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl ParamsWriter<File> {
    pub fn create(path: &Path, frames: usize) -> Result<Self> {
        Self::new(File::create(path)?, frames)
    }
}

impl<W: Write> ParamsWriter<W> {
    pub fn new(w: W, frames: usize) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        let mut header = vec!["iter".to_string()];
        header.extend(theta_names(frames));
        inner.write_record(&header)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, iter: usize, p: &ModelParams) -> Result<()> {
        let mut rec = vec![iter.to_string()];
        rec.extend(theta_values(p).iter().map(|v| v.to_string()));
        self.inner.write_record(&rec)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads a parameter CSV as (header, rows).
pub fn read_params<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|f| f.parse::<f64>().map_err(|_| Error::Format(format!("cannot parse {f:?}"))))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok((header, rows))
}
