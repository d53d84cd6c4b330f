//! Canonical data model for stacks of 2-D sections and the VOL1 on-disk format.
//!
//! A stack is a z-indexed sequence of y-by-x sections. Elevation maps
//! (border probabilities) are `ScalarStack`s with values in [0, 1];
//! segmentations are `LabelStack`s with label 0 reserved for background.
//!
//! VOL1 layout: bytes 0-3 ASCII `VOL1`; byte 4 dtype code (0=u8, 1=u16,
//! 2=u32, 3=f32); bytes 5-7 zero padding; bytes 8-19 three little-endian
//! u32 `z y x`; then `z*y*x` values little-endian, z-major then row-major.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Default voxel budget: u32::MAX voxels.
pub const DEFAULT_MAX_VOXELS: u64 = u32::MAX as u64;

/// Size in bytes of the VOL1 header.
pub const HEADER_LEN: u64 = 20;

const MAGIC: [u8; 4] = *b"VOL1";

/// Stack dimensions: section count `z`, rows `y`, columns `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Dims {
    /// Validate against the default voxel budget.
    pub fn new(z: usize, y: usize, x: usize) -> Result<Dims> {
        Dims::with_limit(z, y, x, DEFAULT_MAX_VOXELS)
    }

    pub fn with_limit(z: usize, y: usize, x: usize, limit: u64) -> Result<Dims> {
        let product = (z as u64)
            .checked_mul(y as u64)
            .and_then(|p| p.checked_mul(x as u64));
        match product {
            Some(p) if p > 0 && p <= limit => Ok(Dims { z, y, x }),
            _ => Err(Error::DimsOverflow {
                z: z as u64,
                y: y as u64,
                x: x as u64,
                limit,
            }),
        }
    }

    pub fn voxels(&self) -> u64 {
        self.z as u64 * self.y as u64 * self.x as u64
    }

    pub fn section_len(&self) -> usize {
        self.y * self.x
    }
}

/// An owned y-by-x grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    y: usize,
    x: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(y: usize, x: usize, value: T) -> Grid<T> {
        Grid {
            y,
            x,
            data: vec![value; y * x],
        }
    }

    pub fn from_vec(y: usize, x: usize, data: Vec<T>) -> Grid<T> {
        assert_eq!(data.len(), y * x, "grid data length must equal y*x");
        Grid { y, x, data }
    }

    pub fn from_fn(y: usize, x: usize, mut f: impl FnMut(usize, usize) -> T) -> Grid<T> {
        let mut data = Vec::with_capacity(y * x);
        for yy in 0..y {
            for xx in 0..x {
                data.push(f(yy, xx));
            }
        }
        Grid { y, x, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.y
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.x
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.x + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: T) {
        self.data[y * self.x + x] = value;
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_shape<U: Copy>(&self, other: &Grid<U>) -> bool {
        self.y == other.y && self.x == other.x
    }

    /// In-bounds 4-neighbors of (y, x).
    pub fn neighbors4(&self, y: usize, x: usize) -> impl Iterator<Item = (usize, usize)> {
        let (ymax, xmax) = (self.y, self.x);
        [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .filter_map(move |(dy, dx)| {
                let ny = y as i64 + dy;
                let nx = x as i64 + dx;
                if ny >= 0 && nx >= 0 && (ny as usize) < ymax && (nx as usize) < xmax {
                    Some((ny as usize, nx as usize))
                } else {
                    None
                }
            })
    }
}

/// A z-indexed stack of sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack<T> {
    dims: Dims,
    sections: Vec<Grid<T>>,
}

/// Integer label stack; label 0 is background and never counts as an object.
pub type LabelStack = Stack<u32>;

/// Border-probability stack; every value must be finite and in [0, 1].
pub type ScalarStack = Stack<f32>;

impl<T: Copy> Stack<T> {
    pub fn filled(dims: Dims, value: T) -> Stack<T> {
        let sections = (0..dims.z)
            .map(|_| Grid::filled(dims.y, dims.x, value))
            .collect();
        Stack { dims, sections }
    }

    pub fn from_sections(dims: Dims, sections: Vec<Grid<T>>) -> Stack<T> {
        assert_eq!(sections.len(), dims.z, "section count must equal dims.z");
        for s in &sections {
            assert!(
                s.rows() == dims.y && s.cols() == dims.x,
                "section shape must match dims"
            );
        }
        Stack { dims, sections }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn section(&self, z: usize) -> &Grid<T> {
        &self.sections[z]
    }

    pub fn section_mut(&mut self, z: usize) -> &mut Grid<T> {
        &mut self.sections[z]
    }

    pub fn sections(&self) -> &[Grid<T>] {
        &self.sections
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.sections[z].get(y, x)
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, value: T) {
        self.sections[z].set(y, x, value);
    }

    /// Iterate voxels in z-major, row-major order.
    pub fn voxels(&self) -> impl Iterator<Item = T> + '_ {
        self.sections.iter().flat_map(|s| s.values().iter().copied())
    }
}

impl ScalarStack {
    /// Check the ScalarStack invariant: every value finite and in [0, 1].
    pub fn validate(&self) -> Result<()> {
        for (z, section) in self.sections.iter().enumerate() {
            for &v in section.values() {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvariantViolation(format!(
                        "scalar value {v} at section {z} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

// ── VOL1 dtype handling ───────────────────────────────────────────────────────

/// Dtype codes of the VOL1 format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8 = 0,
    U16 = 1,
    U32 = 2,
    F32 = 3,
}

impl Dtype {
    pub fn from_code(code: u8) -> Result<Dtype> {
        match code {
            0 => Ok(Dtype::U8),
            1 => Ok(Dtype::U16),
            2 => Ok(Dtype::U32),
            3 => Ok(Dtype::F32),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::U32 => 4,
            Dtype::F32 => 4,
        }
    }

    /// Smallest integer dtype that can hold every label in `max_label`.
    pub fn minimal_for_label(max_label: u32) -> Dtype {
        if max_label <= u8::MAX as u32 {
            Dtype::U8
        } else if max_label <= u16::MAX as u32 {
            Dtype::U16
        } else {
            Dtype::U32
        }
    }
}

/// A stack loaded from disk, either labels or scalars depending on dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedStack {
    Labels(LabelStack),
    Scalars(ScalarStack),
}

impl LoadedStack {
    pub fn into_labels(self) -> Result<LabelStack> {
        match self {
            LoadedStack::Labels(s) => Ok(s),
            LoadedStack::Scalars(_) => Err(Error::Config(
                "expected a label stack but file holds f32 scalars".into(),
            )),
        }
    }

    pub fn into_scalars(self) -> Result<ScalarStack> {
        match self {
            LoadedStack::Scalars(s) => Ok(s),
            LoadedStack::Labels(_) => Err(Error::Config(
                "expected a scalar stack but file holds integer labels".into(),
            )),
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            LoadedStack::Labels(s) => s.dims(),
            LoadedStack::Scalars(s) => s.dims(),
        }
    }
}

fn write_header(w: &mut impl Write, dtype: Dtype, dims: Dims) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[dtype as u8, 0, 0, 0])?;
    w.write_all(&(dims.z as u32).to_le_bytes())?;
    w.write_all(&(dims.y as u32).to_le_bytes())?;
    w.write_all(&(dims.x as u32).to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(Dtype, Dims)> {
    let mut head = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut head).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedFile {
                expected: HEADER_LEN,
                got: 0,
            }
        } else {
            Error::Io(e)
        }
    })?;
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&head[0..4]);
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let dtype = Dtype::from_code(head[4])?;
    let z = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let y = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let x = u32::from_le_bytes(head[16..20].try_into().unwrap()) as usize;
    let dims = Dims::new(z, y, x)?;
    Ok((dtype, dims))
}

fn encode_section(dtype: Dtype, grid: &Grid<u32>, out: &mut Vec<u8>) {
    out.clear();
    match dtype {
        Dtype::U8 => out.extend(grid.values().iter().map(|&v| v as u8)),
        Dtype::U16 => {
            for &v in grid.values() {
                out.extend_from_slice(&(v as u16).to_le_bytes());
            }
        }
        Dtype::U32 => {
            for &v in grid.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Dtype::F32 => unreachable!("labels never encode as f32"),
    }
}

fn decode_label_section(dtype: Dtype, bytes: &[u8], y: usize, x: usize) -> Grid<u32> {
    let data: Vec<u32> = match dtype {
        Dtype::U8 => bytes.iter().map(|&b| b as u32).collect(),
        Dtype::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
            .collect(),
        Dtype::U32 => bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F32 => unreachable!(),
    };
    Grid::from_vec(y, x, data)
}

fn decode_scalar_section(bytes: &[u8], y: usize, x: usize, z: usize) -> Result<Grid<f32>> {
    let mut data = Vec::with_capacity(y * x);
    for c in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::InvariantViolation(format!(
                "scalar value {v} at section {z} outside [0, 1]"
            )));
        }
        data.push(v);
    }
    Ok(Grid::from_vec(y, x, data))
}

/// Save a label stack as a VOL1 file using the smallest dtype that fits.
pub fn save_label_stack(stack: &LabelStack, path: impl AsRef<Path>) -> Result<()> {
    let max_label = stack.voxels().max().unwrap_or(0);
    let dtype = Dtype::minimal_for_label(max_label);
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, dtype, stack.dims())?;
    let mut buf = Vec::new();
    for section in stack.sections() {
        encode_section(dtype, section, &mut buf);
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Save a scalar stack as a VOL1 file (dtype f32). Fails on invariant violations.
pub fn save_scalar_stack(stack: &ScalarStack, path: impl AsRef<Path>) -> Result<()> {
    stack.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, Dtype::F32, stack.dims())?;
    for section in stack.sections() {
        let mut buf = Vec::with_capacity(section.values().len() * 4);
        for &v in section.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Save either kind of stack.
pub fn save_stack(stack: &LoadedStack, path: impl AsRef<Path>) -> Result<()> {
    match stack {
        LoadedStack::Labels(s) => save_label_stack(s, path),
        LoadedStack::Scalars(s) => save_scalar_stack(s, path),
    }
}

/// Load a VOL1 file fully into memory.
pub fn load_stack(path: impl AsRef<Path>) -> Result<LoadedStack> {
    let mut reader = StackReader::open(path)?;
    let dims = reader.dims();
    match reader.dtype() {
        Dtype::F32 => {
            let mut sections = Vec::with_capacity(dims.z);
            for z in 0..dims.z {
                sections.push(reader.read_scalar_section(z)?);
            }
            Ok(LoadedStack::Scalars(Stack::from_sections(dims, sections)))
        }
        _ => {
            let mut sections = Vec::with_capacity(dims.z);
            for z in 0..dims.z {
                sections.push(reader.read_label_section(z)?);
            }
            Ok(LoadedStack::Labels(Stack::from_sections(dims, sections)))
        }
    }
}

/// Random-access section reader over a VOL1 file.
///
/// Lets the pipeline stream one section at a time instead of materializing
/// whole stacks.
pub struct StackReader {
    file: BufReader<File>,
    dtype: Dtype,
    dims: Dims,
}

impl StackReader {
    pub fn open(path: impl AsRef<Path>) -> Result<StackReader> {
        let file = File::open(path)?;
        let total = file.metadata()?.len();
        let mut r = BufReader::new(file);
        let (dtype, dims) = read_header(&mut r)?;
        let expected = dims.voxels() * dtype.width() as u64;
        if total < HEADER_LEN + expected {
            return Err(Error::TruncatedFile {
                expected,
                got: total.saturating_sub(HEADER_LEN),
            });
        }
        Ok(StackReader {
            file: r,
            dtype,
            dims,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    fn read_section_bytes(&mut self, z: usize) -> Result<Vec<u8>> {
        assert!(z < self.dims.z, "section index out of range");
        let len = self.dims.section_len() * self.dtype.width();
        let offset = HEADER_LEN + (z as u64) * len as u64;
        self.file.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; len];
        self.file.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::TruncatedFile {
                    expected: len as u64,
                    got: 0,
                }
            } else {
                Error::Io(e)
            }
        })?;
        Ok(buf)
    }

    pub fn read_label_section(&mut self, z: usize) -> Result<Grid<u32>> {
        if self.dtype == Dtype::F32 {
            return Err(Error::Config(
                "expected a label stack but file holds f32 scalars".into(),
            ));
        }
        let bytes = self.read_section_bytes(z)?;
        Ok(decode_label_section(
            self.dtype, &bytes, self.dims.y, self.dims.x,
        ))
    }

    pub fn read_scalar_section(&mut self, z: usize) -> Result<Grid<f32>> {
        if self.dtype != Dtype::F32 {
            return Err(Error::Config(
                "expected a scalar stack but file holds integer labels".into(),
            ));
        }
        let bytes = self.read_section_bytes(z)?;
        decode_scalar_section(&bytes, self.dims.y, self.dims.x, z)
    }
}

/// Incremental section writer producing a VOL1 file.
pub struct StackWriter {
    file: BufWriter<File>,
    dtype: Dtype,
    dims: Dims,
    written: usize,
    buf: Vec<u8>,
}

impl StackWriter {
    pub fn create(path: impl AsRef<Path>, dims: Dims, dtype: Dtype) -> Result<StackWriter> {
        let mut file = BufWriter::new(File::create(path)?);
        write_header(&mut file, dtype, dims)?;
        Ok(StackWriter {
            file,
            dtype,
            dims,
            written: 0,
            buf: Vec::new(),
        })
    }

    pub fn append_label_section(&mut self, grid: &Grid<u32>) -> Result<()> {
        assert!(self.dtype != Dtype::F32, "writer was created for labels");
        assert!(
            grid.rows() == self.dims.y && grid.cols() == self.dims.x,
            "section shape must match dims"
        );
        encode_section(self.dtype, grid, &mut self.buf);
        self.file.write_all(&self.buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn append_scalar_section(&mut self, grid: &Grid<f32>) -> Result<()> {
        assert!(self.dtype == Dtype::F32, "writer was created for scalars");
        self.buf.clear();
        for &v in grid.values() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvariantViolation(format!(
                    "scalar value {v} outside [0, 1]"
                )));
            }
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self.file.write_all(&self.buf)?;
        self.written += 1;
        Ok(())
    }

    /// Flush and verify that exactly dims.z sections were appended.
    pub fn finish(mut self) -> Result<()> {
        if self.written != self.dims.z {
            return Err(Error::InvariantViolation(format!(
                "writer got {} sections, expected {}",
                self.written, self.dims.z
            )));
        }
        self.file.flush()?;
        Ok(())
    }
}

// ── Label compaction ──────────────────────────────────────────────────────────

/// Relabel so nonzero labels are exactly {1..N}, N = distinct nonzero labels.
///
/// New labels are assigned in first-occurrence order of a z-major, row-major
/// scan, which makes the output deterministic. Returns the old-to-new map
/// (background 0 is never remapped).
pub fn compact_labels(stack: &LabelStack) -> (LabelStack, HashMap<u32, u32>) {
    let mut mapping: HashMap<u32, u32> = HashMap::new();
    let mut next = 1u32;
    let mut sections = Vec::with_capacity(stack.dims().z);
    for section in stack.sections() {
        let data: Vec<u32> = section
            .values()
            .iter()
            .map(|&v| {
                if v == 0 {
                    0
                } else {
                    *mapping.entry(v).or_insert_with(|| {
                        let id = next;
                        next += 1;
                        id
                    })
                }
            })
            .collect();
        sections.push(Grid::from_vec(section.rows(), section.cols(), data));
    }
    (Stack::from_sections(stack.dims(), sections), mapping)
}
