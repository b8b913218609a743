//! Dense rank-4 tensors in `(n, c, h, w)` row-major order, plus the seeded
//! counter-based random number generator used for initialization, dropout
//! masks and data shuffling.

use std::fmt::{Debug, Display};
use std::io::{Read, Write};

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of a [`Tensor`].
///
/// Training runs in `f32`; the gradient checker instantiates the same layer
/// code in `f64`.
pub trait Scalar: Float + Default + Debug + Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on strided matrices (see `matrixmultiply`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let extent = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    (rows - 1) * rs.unsigned_abs() + (cols - 1) * cs.unsigned_abs() + 1
                };
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(c.len() >= extent(m, n, rsc, csc));
                if k > 0 {
                    assert!(a.len() >= extent(m, k, rsa, csa));
                    assert!(b.len() >= extent(k, n, rsb, csb));
                }
                // SAFETY: all strides are non-negative and every addressed
                // element lies inside the slices checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Tensor dimensions: batch, channels, rows, columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::shape(format!("all dimensions must be >= 1, got {self}")));
        }
        Ok(())
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch item.
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub const fn coords(&self, index: usize) -> (usize, usize, usize, usize) {
        let x = index % self.w;
        let rest = index / self.w;
        let y = rest % self.h;
        let rest = rest / self.h;
        (rest / self.c, rest % self.c, y, x)
    }

    pub const fn with_n(self, n: usize) -> Self {
        Shape { n, ..self }
    }

    pub const fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }
}

impl From<(usize, usize, usize, usize)> for Shape {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Shape { n, c, h, w }
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Shape>, fill: T) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if !fill.is_finite() {
            return Err(Error::param(format!("fill value {fill} is not finite")));
        }
        Ok(Tensor { shape, data: vec![fill; shape.len()] })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Result<Self> {
        Self::new(shape, T::zero())
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "shape {shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite element at flat index {bad}")));
        }
        Ok(Tensor { shape, data })
    }

    /// Skips validation; callers guarantee `data.len() == shape.len()`.
    pub(crate) fn from_raw(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(n, c, y, x)]
    }

    /// Flat data of batch item `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise binary operation; `result[i] = op(a[i], b[i])`.
    pub fn map2(a: &Tensor<T>, b: &Tensor<T>, op: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if a.shape != b.shape {
            return Err(Error::shape(format!("operand shapes differ: {} vs {}", a.shape, b.shape)));
        }
        let data: Vec<T> = a.data.iter().zip(&b.data).map(|(&x, &y)| op(x, y)).collect();
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("elementwise op produced non-finite value at {bad}")));
        }
        Ok(Tensor { shape: a.shape, data })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        Self::map2(self, other, |x, y| x + y)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        Self::map2(self, other, |x, y| x - y)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        Self::map2(self, other, |x, y| x * y)
    }

    pub fn scale(&self, k: T) -> Tensor<T> {
        self.map(|v| v * k)
    }

    /// Sum in double precision.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("shapes differ: {} vs {}", self.shape, other.shape)));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::shape("nothing to concatenate"))?.shape;
        for p in parts {
            if p.shape.n != first.n || p.shape.h != first.h || p.shape.w != first.w {
                return Err(Error::shape(format!(
                    "cannot concatenate {} with {} along channels",
                    first, p.shape
                )));
            }
        }
        let c: usize = parts.iter().map(|p| p.shape.c).sum();
        let shape = first.with_c(c);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..first.n {
            for p in parts {
                data.extend_from_slice(p.sample(n));
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Channels `start..end` of every batch item.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        if start >= end || end > self.shape.c {
            return Err(Error::shape(format!(
                "channel range {start}..{end} invalid for {}",
                self.shape
            )));
        }
        let shape = self.shape.with_c(end - start);
        let plane = self.shape.plane();
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..self.shape.n {
            let s = self.sample(n);
            data.extend_from_slice(&s[start * plane..end * plane]);
        }
        Ok(Tensor { shape, data })
    }

    /// Concatenate along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or_else(|| Error::shape("nothing to stack"))?.shape;
        let mut n = 0;
        for t in items {
            if t.shape.with_n(1) != first.with_n(1) {
                return Err(Error::shape(format!("cannot stack {} with {}", first, t.shape)));
            }
            n += t.shape.n;
        }
        let mut data = Vec::with_capacity(first.sample_len() * n);
        for t in items {
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: first.with_n(n), data })
    }

    /// Batch item `n` as a standalone `(1, c, h, w)` tensor.
    pub fn item(&self, n: usize) -> Tensor<T> {
        Tensor { shape: self.shape.with_n(1), data: self.sample(n).to_vec() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }
}

const TENSOR_MAGIC: &[u8; 4] = b"FWTN";
const TENSOR_VERSION: u32 = 1;

impl Tensor<f32> {
    /// Writes the raw dump block: magic `FWTN`, u32 version, four u32 dims,
    /// then the little-endian f32 payload.
    pub fn write_dump<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&TENSOR_VERSION.to_le_bytes())?;
        for d in [self.shape.n, self.shape.c, self.shape.h, self.shape.w] {
            let d = u32::try_from(d).map_err(|_| Error::shape("dimension exceeds u32"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(r: &mut R) -> Result<Tensor<f32>> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported tensor version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u32(r)? as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        shape.validate().map_err(|e| Error::Format(e.to_string()))?;
        let mut bytes = vec![0u8; shape.len() * 4];
        read_exact(r, &mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::from_vec(shape, data).map_err(|e| Error::Integrity(e.to_string()))
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Integrity("unexpected end of data".into()),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator: the `i`-th draw is a pure function of
/// `(seed, stream, i)`, so streams can be derived for any purpose without
/// depending on execution order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    stream: u64,
    key: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Rng { seed, stream, key: mix64(seed ^ mix64(stream.wrapping_add(GOLDEN))), counter: 0 }
    }

    /// Rebuilds a generator at a saved position.
    pub fn from_state(seed: u64, stream: u64, counter: u64) -> Self {
        Rng { counter, ..Self::with_stream(seed, stream) }
    }

    /// Independent child stream, keyed on this generator's key and `id`.
    pub fn split(&self, id: u64) -> Rng {
        let stream = mix64(self.key ^ mix64(id.wrapping_mul(GOLDEN).wrapping_add(1)));
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound` (Lemire's multiply-shift).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// Standard normal (mean 0, variance 1) via Box-Muller; consumes two draws.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Tensor of independent normal samples with the given mean and standard deviation.
    pub fn normal<T: Scalar>(&mut self, shape: impl Into<Shape>, mean: f64, stddev: f64) -> Result<Tensor<T>> {
        let shape = shape.into();
        shape.validate()?;
        if stddev < 0.0 || !stddev.is_finite() || !mean.is_finite() {
            return Err(Error::param(format!("normal(mean={mean}, stddev={stddev}) is invalid")));
        }
        let data = (0..shape.len())
            .map(|_| T::from_f64(mean + stddev * self.standard_normal()))
            .collect();
        Ok(Tensor { shape, data })
    }

    pub fn uniform_tensor<T: Scalar>(&mut self, shape: impl Into<Shape>, lo: f64, hi: f64) -> Result<Tensor<T>> {
        let shape = shape.into();
        shape.validate()?;
        let data = (0..shape.len()).map(|_| T::from_f64(lo + (hi - lo) * self.uniform())).collect();
        Ok(Tensor { shape, data })
    }
}
