//! On-disk formats.
//!
//! * CSV with `#`-prefixed metadata lines followed by a column header row.
//! * `BPF2`: a real or complex matrix with its grid spacings.
//! * `BPFS`: a stack of `u16` photon-count frames, readable frame by frame.
//!
//! All binary fields are little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::detector::{AcquisitionParams, FrameStack};
use crate::error::{Error, Result};
use crate::grid::Axis;
use crate::profile::{FringeProfile, Jpd2D, ProfileKind};
use crate::propagation::Field2D;

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const BPF2_MAGIC: &[u8; 4] = b"BPF2";
const BPFS_MAGIC: &[u8; 4] = b"BPFS";
const BPF2_REAL: u32 = 1;
const BPF2_COMPLEX: u32 = 2;
const BPFS_VERSION: u32 = 1;
const BPFS_HEADER_LEN: u64 = 4 + 4 * 4 + 8 + 8;

/// Provenance written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
}

impl Provenance {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("{TOOL_NAME} {TOOL_VERSION}"),
            format!("config_sha256 {}", self.config_hash),
        ]
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Writes metadata lines, a header row and numeric rows.
pub fn write_csv<I>(path: &Path, meta: &[String], header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut out = create(path)?;
    for line in meta {
        writeln!(out, "# {line}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        // Display for f64 is the shortest representation that parses back exactly.
        w.write_record(row.iter().map(|v| v.to_string())).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parsed CSV: metadata lines (without `# `), header and numeric rows.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub meta: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
    let meta = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .collect();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 1)))?;
        if row.len() != header.len() {
            return Err(Error::format(path, format!("row {} has {} fields", line + 1, row.len())));
        }
        rows.push(row);
    }
    Ok(CsvTable { meta, header, rows })
}

fn abscissa_name(kind: ProfileKind) -> &'static str {
    match kind {
        ProfileKind::Correlation | ProfileKind::AntiCorrelation => "lag_m",
        ProfileKind::Marginal | ProfileKind::Intensity => "x_m",
    }
}

pub fn write_profile(path: &Path, prov: &Provenance, profile: &FringeProfile) -> Result<()> {
    let mut meta = prov.lines();
    meta.push(format!("kind {}", profile.kind.as_str()));
    write_csv(
        path,
        &meta,
        &[abscissa_name(profile.kind), "value"],
        profile.abscissa.iter().zip(&profile.values).map(|(x, v)| vec![*x, *v]),
    )
}

pub fn read_profile(path: &Path) -> Result<FringeProfile> {
    let t = read_csv(path)?;
    if t.header.len() != 2 || t.header[1] != "value" {
        return Err(Error::format(path, "expected columns (x_m | lag_m, value)"));
    }
    let kind = match t.meta_value("kind") {
        Some(k) => ProfileKind::parse(k).ok_or_else(|| Error::format(path, format!("unknown profile kind `{k}`")))?,
        None if t.header[0] == "lag_m" => ProfileKind::Correlation,
        None => ProfileKind::Marginal,
    };
    let abscissa = t.rows.iter().map(|r| r[0]).collect();
    let values = t.rows.iter().map(|r| r[1]).collect();
    FringeProfile::new(abscissa, values, kind).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_jpd_csv(path: &Path, prov: &Provenance, jpd: &Jpd2D) -> Result<()> {
    let x = jpd.axis.coords();
    let n = jpd.n();
    write_csv(
        path,
        &prov.lines(),
        &["x1_m", "x2_m", "value"],
        (0..n * n).map(|idx| vec![x[idx / n], x[idx % n], jpd.values[idx]]),
    )
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn bpf2_header(version: u32, n1: usize, n2: usize, s1: f64, s2: f64) -> Vec<u8> {
    let mut h = Vec::with_capacity(32);
    h.extend_from_slice(BPF2_MAGIC);
    put_u32(&mut h, version);
    put_u32(&mut h, n1 as u32);
    put_u32(&mut h, n2 as u32);
    put_f64(&mut h, s1);
    put_f64(&mut h, s2);
    h
}

pub fn write_bpf2_jpd(path: &Path, jpd: &Jpd2D) -> Result<()> {
    let n = jpd.n();
    let mut out = create(path)?;
    let mut buf = bpf2_header(BPF2_REAL, n, n, jpd.axis.spacing, jpd.axis.spacing);
    buf.reserve(8 * jpd.values.len());
    jpd.values.iter().for_each(|v| put_f64(&mut buf, *v));
    out.write_all(&buf).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_bpf2_field(path: &Path, field: &Field2D) -> Result<()> {
    let mut out = create(path)?;
    let mut buf = bpf2_header(BPF2_COMPLEX, field.axis1.n, field.axis2.n, field.axis1.spacing, field.axis2.spacing);
    for v in &field.values {
        put_f64(&mut buf, v.re);
        put_f64(&mut buf, v.im);
    }
    out.write_all(&buf).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

/// Matrix read from a `BPF2` file.
#[derive(Debug, Clone, PartialEq)]
pub enum Bpf2Matrix {
    Real { axis1: Axis, axis2: Axis, values: Vec<f64> },
    Complex { axis1: Axis, axis2: Axis, values: Vec<Complex64> },
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format(self.path, "file is truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_bpf2(path: &Path) -> Result<Bpf2Matrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { path, bytes: &bytes, pos: 0 };
    if c.take(4)? != BPF2_MAGIC {
        return Err(Error::format(path, "missing BPF2 magic"));
    }
    let version = c.u32()?;
    let (n1, n2) = (c.u32()? as usize, c.u32()? as usize);
    let (s1, s2) = (c.f64()?, c.f64()?);
    let (axis1, axis2) = (Axis::new(n1, s1), Axis::new(n2, s2));
    let count = n1 * n2;
    let per = match version {
        BPF2_REAL => 8,
        BPF2_COMPLEX => 16,
        v => return Err(Error::format(path, format!("unsupported BPF2 version {v}"))),
    };
    if bytes.len() != c.pos + count * per {
        return Err(Error::format(path, format!("expected {} data bytes, found {}", count * per, bytes.len() - c.pos)));
    }
    Ok(if version == BPF2_REAL {
        let values = (0..count).map(|_| c.f64()).collect::<Result<_>>()?;
        Bpf2Matrix::Real { axis1, axis2, values }
    } else {
        let values = (0..count)
            .map(|_| Ok(Complex64::new(c.f64()?, c.f64()?)))
            .collect::<Result<_>>()?;
        Bpf2Matrix::Complex { axis1, axis2, values }
    })
}

/// Header of a `BPFS` frame stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpfsHeader {
    pub frames: u32,
    pub ny: u32,
    pub nx: u32,
    pub pixel_pitch: f64,
    pub seed: u64,
}

impl BpfsHeader {
    fn encode(&self) -> Vec<u8> {
        let mut h = Vec::with_capacity(BPFS_HEADER_LEN as usize);
        h.extend_from_slice(BPFS_MAGIC);
        put_u32(&mut h, BPFS_VERSION);
        put_u32(&mut h, self.frames);
        put_u32(&mut h, self.ny);
        put_u32(&mut h, self.nx);
        put_f64(&mut h, self.pixel_pitch);
        h.extend_from_slice(&self.seed.to_le_bytes());
        h
    }

    pub fn frame_len(&self) -> usize {
        self.nx as usize * self.ny as usize
    }
}

/// Streaming `BPFS` writer; the frame count is fixed up front.
pub struct BpfsWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: BpfsHeader,
    written: u32,
    buf: Vec<u8>,
}

impl BpfsWriter {
    pub fn create(path: &Path, header: BpfsHeader) -> Result<Self> {
        let mut out = create(path)?;
        out.write_all(&header.encode()).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            header,
            written: 0,
            buf: Vec::with_capacity(2 * header.frame_len()),
        })
    }

    pub fn write_frame(&mut self, frame: &[u16]) -> Result<()> {
        if frame.len() != self.header.frame_len() || self.written >= self.header.frames {
            return Err(Error::Precondition("frame does not fit the declared stack".into()));
        }
        self.buf.clear();
        frame.iter().for_each(|c| self.buf.extend_from_slice(&c.to_le_bytes()));
        self.out.write_all(&self.buf).map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.frames {
            return Err(Error::Precondition(format!(
                "declared {} frames but wrote {}",
                self.header.frames, self.written
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Streaming `BPFS` reader validating magic, version and size.
pub struct BpfsReader {
    path: PathBuf,
    input: BufReader<File>,
    pub header: BpfsHeader,
    remaining: u32,
    buf: Vec<u8>,
}

impl BpfsReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut input = open(path)?;
        let mut head = [0u8; BPFS_HEADER_LEN as usize];
        input
            .read_exact(&mut head)
            .map_err(|_| Error::format(path, "file shorter than the BPFS header"))?;
        let mut c = Cursor { path, bytes: &head, pos: 0 };
        if c.take(4)? != BPFS_MAGIC {
            return Err(Error::format(path, "missing BPFS magic"));
        }
        let version = c.u32()?;
        if version != BPFS_VERSION {
            return Err(Error::format(path, format!("unsupported BPFS version {version}")));
        }
        let header = BpfsHeader {
            frames: c.u32()?,
            ny: c.u32()?,
            nx: c.u32()?,
            pixel_pitch: c.f64()?,
            seed: c.u64()?,
        };
        if header.frames == 0 || header.nx == 0 || header.ny == 0 || !(header.pixel_pitch > 0.0) {
            return Err(Error::format(path, "BPFS header has empty dimensions or non-positive pitch"));
        }
        let len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        let expected = BPFS_HEADER_LEN + 2 * header.frames as u64 * header.frame_len() as u64;
        if len != expected {
            return Err(Error::format(path, format!("file has {len} bytes, header implies {expected}")));
        }
        Ok(Self {
            path: path.to_path_buf(),
            input,
            header,
            remaining: header.frames,
            buf: vec![0u8; 2 * header.frame_len()],
        })
    }

    /// Reads the next frame into `out`; `Ok(false)` once the stack is exhausted.
    pub fn next_frame(&mut self, out: &mut [u16]) -> Result<bool> {
        if self.remaining == 0 {
            return Ok(false);
        }
        self.input.read_exact(&mut self.buf).map_err(|e| Error::io(&self.path, e))?;
        for (o, b) in out.iter_mut().zip(self.buf.chunks_exact(2)) {
            *o = u16::from_le_bytes([b[0], b[1]]);
        }
        self.remaining -= 1;
        Ok(true)
    }

    /// Acquisition metadata recoverable from the header; rates are unknown.
    pub fn acquisition(&self) -> AcquisitionParams {
        AcquisitionParams {
            frames: self.header.frames as usize,
            nx: self.header.nx as usize,
            ny: self.header.ny as usize,
            pixel_pitch: self.header.pixel_pitch,
            seed: self.header.seed,
            ..Default::default()
        }
    }
}

pub fn write_stack(path: &Path, stack: &FrameStack) -> Result<()> {
    let a = &stack.acquisition;
    let mut w = BpfsWriter::create(
        path,
        BpfsHeader {
            frames: a.frames as u32,
            ny: a.ny as u32,
            nx: a.nx as u32,
            pixel_pitch: a.pixel_pitch,
            seed: a.seed,
        },
    )?;
    stack.iter_frames().try_for_each(|f| w.write_frame(f))?;
    w.finish()
}

pub fn read_stack(path: &Path) -> Result<FrameStack> {
    let mut r = BpfsReader::open(path)?;
    let a = r.acquisition();
    let len = a.frame_len();
    let mut counts = vec![0u16; a.frames * len];
    for chunk in counts.chunks_exact_mut(len) {
        r.next_frame(chunk)?;
    }
    FrameStack::new(a, counts)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::format(path, e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub files: Vec<ManifestEntry>,
}

/// Hashes `files` (relative to `dir`) into `dir/manifest.json`.
pub fn write_manifest(dir: &Path, command: &str, prov: &Provenance, files: &[String]) -> Result<()> {
    let entries = files
        .iter()
        .map(|f| {
            let p = dir.join(f);
            let mut hasher = Sha256::new();
            let mut r = open(&p)?;
            loop {
                let buf = r.fill_buf().map_err(|e| Error::io(&p, e))?;
                if buf.is_empty() {
                    break;
                }
                hasher.update(buf);
                let n = buf.len();
                r.consume(n);
            }
            Ok(ManifestEntry {
                file: f.clone(),
                sha256: hex::encode(hasher.finalize()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            config_sha256: prov.config_hash.clone(),
            files: entries,
        },
    )
}
