//! Binary tensor files.
//!
//! Dense layout: `"IFAS1"`, u8 dtype tag, u32 rank, `rank` × u32 dims, then
//! the row-major payload. Ragged layout (dtype tag with bit 0x80 set):
//! `"IFAS1"`, u8 tag, u32 rank = 2, u32 rows, u32 width, then for every row a
//! u32 length followed by `length × width` values. All integers and floats
//! are little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub const MAGIC: &[u8; 5] = b"IFAS1";
const RAGGED: u8 = 0x80;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    U32 = 3,
}

pub trait Element: Copy + Default + Send + Sync + 'static {
    const DTYPE: DType;
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
}

macro_rules! element {
    ($t:ty, $tag:expr) => {
        impl Element for $t {
            const DTYPE: DType = $tag;
            const SIZE: usize = std::mem::size_of::<$t>();
            fn put(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn get(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }
        }
    };
}

element!(f32, DType::F32);
element!(f64, DType::F64);
element!(u32, DType::U32);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

/// Rows of shape `len_i × width` stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct Ragged<T> {
    pub width: usize,
    /// Row `i` spans `offsets[i]..offsets[i + 1]` in units of `width`-long
    /// vectors.
    pub offsets: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Element> Ragged<T> {
    pub fn from_rows<'a, I>(width: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [T]>,
    {
        let mut offsets = vec![0];
        let mut data = Vec::new();
        for r in rows {
            debug_assert_eq!(r.len() % width.max(1), 0);
            data.extend_from_slice(r);
            offsets.push(offsets.last().unwrap() + r.len() / width.max(1));
        }
        Ragged { width, offsets, data }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[self.offsets[i] * self.width..self.offsets[i + 1] * self.width]
    }
}

fn header(out: &mut Vec<u8>, tag: u8, dims: &[usize]) -> Result<()> {
    out.extend_from_slice(MAGIC);
    out.push(tag);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

pub fn encode_tensor<T: Element>(dims: &[usize], data: &[T]) -> Result<Vec<u8>> {
    let n: usize = dims.iter().product();
    if n != data.len() {
        return Err(Error::invalid(format!(
            "tensor dims {dims:?} hold {n} values, got {}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(9 + 4 * dims.len() + n * T::SIZE);
    header(&mut out, T::DTYPE as u8, dims)?;
    for &v in data {
        v.put(&mut out);
    }
    Ok(out)
}

pub fn encode_ragged<T: Element>(r: &Ragged<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(17 + 4 * r.rows() + r.data.len() * T::SIZE);
    header(&mut out, T::DTYPE as u8 | RAGGED, &[r.rows(), r.width])?;
    for i in 0..r.rows() {
        out.extend_from_slice(&(r.row_len(i) as u32).to_le_bytes());
        for &v in r.row(i) {
            v.put(&mut out);
        }
    }
    Ok(out)
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn write_tensor<T: Element>(path: &Path, dims: &[usize], data: &[T]) -> Result<()> {
    write_atomic(path, &encode_tensor(dims, data)?)
}

pub fn write_ragged<T: Element>(path: &Path, r: &Ragged<T>) -> Result<()> {
    write_atomic(path, &encode_ragged(r)?)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(
                self.bytes.len(),
                format!("truncated: needed {n} bytes for {what} at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn header<T: Element>(&mut self, ragged: bool) -> Result<Vec<usize>> {
        if self.take(5, "magic")? != MAGIC {
            return Err(self.corrupt(0, "bad magic"));
        }
        let tag = self.take(1, "dtype")?[0];
        let want = T::DTYPE as u8 | if ragged { RAGGED } else { 0 };
        if tag != want {
            return Err(self.corrupt(5, format!("dtype tag {tag:#04x}, expected {want:#04x}")));
        }
        let rank = self.u32("rank")?;
        if rank > 16 || (ragged && rank != 2) {
            return Err(self.corrupt(6, format!("implausible rank {rank}")));
        }
        (0..rank).map(|_| self.u32("dims")).collect()
    }

    fn values<T: Element>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(T::SIZE).ok_or_else(|| self.corrupt(self.pos, "size overflow"))?, what)?;
        Ok(bytes.chunks_exact(T::SIZE).map(T::get).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.corrupt(self.pos, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn decode_tensor<T: Element>(path: &Path, bytes: &[u8]) -> Result<Tensor<T>> {
    let mut c = Cursor { path, bytes, pos: 0 };
    let dims = c.header::<T>(false)?;
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let n = n.ok_or_else(|| c.corrupt(6, "dims overflow"))?;
    let data = c.values(n, "payload")?;
    c.finish()?;
    Ok(Tensor { dims, data })
}

pub fn decode_ragged<T: Element>(path: &Path, bytes: &[u8]) -> Result<Ragged<T>> {
    let mut c = Cursor { path, bytes, pos: 0 };
    let dims = c.header::<T>(true)?;
    let (rows, width) = (dims[0], dims[1]);
    let mut offsets = Vec::with_capacity(rows + 1);
    offsets.push(0);
    let mut data = Vec::new();
    for _ in 0..rows {
        let len = c.u32("row length")?;
        data.extend(c.values::<T>(len * width, "row payload")?);
        offsets.push(offsets.last().unwrap() + len);
    }
    c.finish()?;
    Ok(Ragged { width, offsets, data })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_tensor<T: Element>(path: &Path) -> Result<Tensor<T>> {
    decode_tensor(path, &read_bytes(path)?)
}

pub fn read_ragged<T: Element>(path: &Path) -> Result<Ragged<T>> {
    decode_ragged(path, &read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ifas");
        let data = vec![0.1f32, -0.0, f32::MIN_POSITIVE, 1e-40, f32::MAX, 3.0];
        write_tensor(&p, &[2, 3], &data).unwrap();
        let t = read_tensor::<f32>(&p).unwrap();
        assert_eq!(t.dims, vec![2, 3]);
        let a: Vec<u32> = data.iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = t.data.iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn header_bytes() {
        let b = encode_tensor(&[2], &[1u32, 2]).unwrap();
        assert_eq!(&b[..5], b"IFAS1");
        assert_eq!(b[5], 3);
        assert_eq!(&b[6..10], &1u32.to_le_bytes());
        assert_eq!(&b[10..14], &2u32.to_le_bytes());
        assert_eq!(b.len(), 22);
    }

    #[test]
    fn ragged_round_trip() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![], vec![3.0, 4.0, 5.0, 6.0]];
        let r = Ragged::from_rows(2, rows.iter().map(Vec::as_slice));
        assert_eq!(r.row_len(2), 2);
        let bytes = encode_ragged(&r).unwrap();
        let back = decode_ragged::<f64>(Path::new("x"), &bytes).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.row(2), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_tensor(&[4], &[1f32, 2.0, 3.0, 4.0]).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match decode_tensor::<f32>(Path::new("g.ifas"), cut).unwrap_err() {
            Error::Corrupt { offset, path, message } => {
                assert_eq!(offset as usize, cut.len());
                assert_eq!(path, Path::new("g.ifas"));
                assert!(message.contains("truncated"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_magic_and_dtype() {
        let mut bytes = encode_tensor(&[1], &[1f32]).unwrap();
        assert!(decode_tensor::<f64>(Path::new("a"), &bytes).is_err());
        bytes[0] = b'X';
        let e = decode_tensor::<f32>(Path::new("a"), &bytes).unwrap_err().to_string();
        assert!(e.contains("magic"), "{e}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_tensor(&[1], &[1f32]).unwrap();
        bytes.push(0);
        assert!(decode_tensor::<f32>(Path::new("a"), &bytes).is_err());
    }
}
