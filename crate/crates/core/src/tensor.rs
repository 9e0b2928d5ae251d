//! Dense row-major `f64` tensors and the `CNNT` on-disk format.
//!
//! A `CNNT` file is the ASCII magic `CNNT`, a little-endian `u32` rank, `rank`
//! little-endian `u32` extents, then `product(extents)` little-endian `f32`
//! values. Values are widened to `f64` on load and narrowed on save.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};

const CNNT_MAGIC: &[u8; 4] = b"CNNT";

/// Dense n-dimensional array of `f64`, last axis fastest.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(dim_err("tensor rank must be at least 1"));
    }
    if shape.iter().any(|&e| e == 0) {
        return Err(dim_err(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(dim_err(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panicking constructor for literals in tests and examples.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        Self::new(shape, data).expect("invalid tensor literal")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len = check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        Self::from_fn(shape, |_| normal.sample(rng))
    }

    /// Uniform entries in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(-bound..bound))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(dim_err(format!("expected rank-2 tensor, got {:?}", self.shape))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(dim_err(format!("expected rank-3 tensor, got {:?}", self.shape))),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[self.shape.len() - 1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn transpose2(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(&[c, r], out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest absolute elementwise difference; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(dim_err(format!(
                "cannot compare {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Gathers rows of a rank-2 tensor into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let (n, c) = self.dims2()?;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(Error::Index { index: r, extent: n });
            }
            out.extend_from_slice(self.row(r));
        }
        Self::new(&[rows.len(), c], out)
    }

    pub fn read_cnnt(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        Self::decode_cnnt(&mut reader)
    }

    pub fn write_cnnt(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = BufWriter::new(File::create(path)?);
        self.encode_cnnt(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn encode_cnnt<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CNNT_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &e in &self.shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn decode_cnnt<R: Read>(r: &mut R) -> Result<Self> {
        let mut offset = 0u64;
        let mut read_exact = |buf: &mut [u8], what: &str| -> Result<()> {
            r.read_exact(buf).map_err(|_| Error::Format {
                offset,
                message: format!("truncated while reading {what}"),
            })?;
            offset += buf.len() as u64;
            Ok(())
        };
        let mut magic = [0u8; 4];
        read_exact(&mut magic, "magic")?;
        if &magic != CNNT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}"),
            });
        }
        let mut word = [0u8; 4];
        read_exact(&mut word, "rank")?;
        let rank = u32::from_le_bytes(word) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            read_exact(&mut word, "extent")?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let len = check_shape(&shape)?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            read_exact(&mut word, "value")?;
            data.push(f32::from_le_bytes(word) as f64);
        }
        Self::new(&shape, data)
    }
}

/// Rearranges `[c, rows, cols]` into `[c*p*p, rows/p, cols/p]`.
///
/// Output channel `ch*p*p + di*p + dj` holds input pixel `(ch, i*p+di, j*p+dj)`.
pub fn pixel_unshuffle(x: &Tensor, p: usize) -> Result<Tensor> {
    let (c, rows, cols) = x.dims3()?;
    if p == 0 || rows % p != 0 || cols % p != 0 {
        return Err(dim_err(format!(
            "patch size {p} must divide spatial extents {rows}x{cols}"
        )));
    }
    let (or, oc) = (rows / p, cols / p);
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for di in 0..p {
            for dj in 0..p {
                let och = ch * p * p + di * p + dj;
                for i in 0..or {
                    for j in 0..oc {
                        out[(och * or + i) * oc + j] =
                            x.data[(ch * rows + i * p + di) * cols + j * p + dj];
                    }
                }
            }
        }
    }
    Tensor::new(&[c * p * p, or, oc], out)
}

/// Inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle(x: &Tensor, p: usize) -> Result<Tensor> {
    let (cpp, or, oc) = x.dims3()?;
    if p == 0 || cpp % (p * p) != 0 {
        return Err(dim_err(format!(
            "channel count {cpp} not divisible by p^2 for p={p}"
        )));
    }
    let c = cpp / (p * p);
    let (rows, cols) = (or * p, oc * p);
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for di in 0..p {
            for dj in 0..p {
                let ich = ch * p * p + di * p + dj;
                for i in 0..or {
                    for j in 0..oc {
                        out[(ch * rows + i * p + di) * cols + j * p + dj] =
                            x.data[(ich * or + i) * oc + j];
                    }
                }
            }
        }
    }
    Tensor::new(&[c, rows, cols], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
        assert!(Tensor::new(&[], vec![]).is_err());
    }

    #[test]
    fn flatten_then_reshape_is_identity() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let back = t.reshape(&[24]).unwrap().reshape(&[2, 3, 4]).unwrap();
        assert_eq!(t, back);
        assert_eq!(t.data()[1 * 12 + 2 * 4 + 3], 23.0);
    }

    #[test]
    fn cnnt_roundtrip_through_f32() {
        let t = Tensor::from_vec(&[2, 3], vec![0.5, -1.25, 3.0, 4.0, 1e-3, 7.0]);
        let mut buf = Vec::new();
        t.encode_cnnt(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CNNT");
        assert_eq!(buf.len(), 4 + 4 + 2 * 4 + 6 * 4);
        let back = Tensor::decode_cnnt(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), &[2, 3]);
        assert!(back.max_abs_diff(&t).unwrap() < 1e-7);
    }

    #[test]
    fn cnnt_truncation_reports_offset() {
        let t = Tensor::ones(&[4]);
        let mut buf = Vec::new();
        t.encode_cnnt(&mut buf).unwrap();
        buf.truncate(buf.len() - 2);
        match Tensor::decode_cnnt(&mut buf.as_slice()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4 + 4 + 4 + 3 * 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pixel_unshuffle_cases() {
        let x = Tensor::from_fn(&[3, 4, 4], |i| i as f64);
        assert_eq!(pixel_unshuffle(&x, 1).unwrap(), x);
        let small = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let u = pixel_unshuffle(&small, 2).unwrap();
        assert_eq!(u.shape(), &[4, 1, 1]);
        assert_eq!(u.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(pixel_unshuffle(&Tensor::zeros(&[1, 3, 4]), 2).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = Tensor::randn(&[3, 4, 4], 1.0, &mut rng);
        let back = pixel_shuffle(&pixel_unshuffle(&r, 2).unwrap(), 2).unwrap();
        assert_eq!(back, r);
    }
}
