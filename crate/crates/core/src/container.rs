//! Versioned binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "UEP1" | u32 version | u32 kind | u32 tensor count
//! per tensor: u32 name length | name bytes | u32 ndim | u64 dims[ndim] | f64 data[product(dims)]
//! ```
//!
//! Files are written and read as streams so a long HMC chain is never held
//! twice in memory.

use std::borrow::Cow;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bnn::{MeanFieldPosterior, PosteriorChain};
use crate::error::{Error, Result};
use crate::gp::{KernelParams, LaplaceGPState, Link};
use crate::nnet::{param_count, MLPParams};
use crate::numerics::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"UEP1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp = 1,
    MeanField = 2,
    HmcChain = 3,
    LaplaceGp = 4,
}

impl ModelKind {
    fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            1 => Self::Mlp,
            2 => Self::MeanField,
            3 => Self::HmcChain,
            4 => Self::LaplaceGp,
            _ => return None,
        })
    }
}

/// A named tensor whose data may be split across several borrowed slices.
#[derive(Debug, Clone)]
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub parts: Vec<Cow<'a, [f64]>>,
}

impl<'a> TensorRef<'a> {
    pub fn vector(name: &'static str, data: impl Into<Cow<'a, [f64]>>) -> Self {
        let data = data.into();
        Self {
            name,
            shape: vec![data.len()],
            parts: vec![data],
        }
    }

    fn len(&self) -> usize {
        self.parts.iter().map(|p| p.len()).sum()
    }
}

/// A model ready to be encoded.
#[derive(Debug, Clone)]
pub struct ModelFile<'a> {
    pub kind: ModelKind,
    pub tensors: Vec<TensorRef<'a>>,
}

impl ModelFile<'_> {
    pub fn encode<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.kind as u32).to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            assert_eq!(
                t.shape.iter().product::<usize>(),
                t.len(),
                "tensor {}: shape/data mismatch",
                t.name
            );
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for part in &t.parts {
                for v in part.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        16 + self
            .tensors
            .iter()
            .map(|t| 8 + t.name.len() + 8 * t.shape.len() + 8 * t.len())
            .sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode(&mut out).expect("writing to memory");
        out
    }

    /// [`content_hash`] of the encoded bytes, computed without materializing them.
    pub fn hash(&self) -> String {
        let mut h = HashWriter(Sha256::new());
        h.0.update(format!("blob {}\0", self.encoded_len()).as_bytes());
        self.encode(&mut BufWriter::new(&mut h)).expect("hashing");
        hex::encode(h.0.finalize())
    }

    /// Writes the file and returns its content hash.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.encode(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
        Ok(self.hash())
    }
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Git-style blob hash: sha256 of `"blob <len>\0" ++ bytes`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Hash of a file's bytes.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let len = file.get_ref().metadata().map_err(|e| Error::io(path, e))?.len();
    let mut h = HashWriter(Sha256::new());
    h.0.update(format!("blob {len}\0").as_bytes());
    io::copy(&mut file, &mut h).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(h.0.finalize()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Flat(Vec<f64>),
    /// Leading dimension split into rows.
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

/// A decoded file. Tensors named in `as_rows` are split along their leading
/// dimension while reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub kind: ModelKind,
    pub tensors: Vec<Tensor>,
}

struct Decoder<'p, R> {
    r: R,
    origin: &'p Path,
}

impl<R: Read> Decoder<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.r.read_exact(&mut buf).map_err(|e| self.fail(e))?;
        Ok(buf)
    }

    fn fail(&self, e: io::Error) -> Error {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::format(self.origin, "truncated file")
        } else {
            Error::io(self.origin, e)
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8 * 1024];
        let mut left = n;
        while left > 0 {
            let take = left.min(1024);
            self.r.read_exact(&mut buf[..8 * take]).map_err(|e| self.fail(e))?;
            out.extend(
                buf[..8 * take]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
            );
            left -= take;
        }
        Ok(out)
    }

    fn decode(mut self, as_rows: &[&str]) -> Result<Decoded> {
        let origin = self.origin;
        if &self.bytes::<4>()? != MAGIC {
            return Err(Error::format(origin, "bad magic (expected UEP1)"));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported version {version}")));
        }
        let tag = self.u32()?;
        let kind = ModelKind::from_tag(tag).ok_or_else(|| Error::format(origin, format!("unknown kind tag {tag}")))?;
        let count = self.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let len = self.u32()? as usize;
            if len > 4096 {
                return Err(Error::format(origin, "tensor name too long"));
            }
            let mut name = vec![0u8; len];
            self.r.read_exact(&mut name).map_err(|e| self.fail(e))?;
            let name = String::from_utf8(name).map_err(|_| Error::format(origin, "tensor name is not UTF-8"))?;
            let ndim = self.u32()? as usize;
            if ndim > 8 {
                return Err(Error::format(origin, format!("tensor {name} has {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(usize::try_from(self.u64()?).map_err(|_| Error::format(origin, "dimension overflow"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some())
                .ok_or_else(|| Error::format(origin, "tensor size overflow"))?;
            let data = if as_rows.contains(&name.as_str()) && !shape.is_empty() {
                let rows = shape[0];
                let cols = n.checked_div(rows).unwrap_or(0);
                let mut out = Vec::with_capacity(rows.min(1 << 20));
                for _ in 0..rows {
                    out.push(self.f64s(cols)?);
                }
                TensorData::Rows(out)
            } else {
                TensorData::Flat(self.f64s(n)?)
            };
            tensors.push(Tensor { name, shape, data });
        }
        let mut probe = [0u8; 1];
        match self.r.read(&mut probe) {
            Ok(0) => Ok(Decoded { kind, tensors }),
            Ok(_) => Err(Error::format(origin, "trailing bytes after last tensor")),
            Err(e) => Err(Error::io(origin, e)),
        }
    }
}

impl Decoded {
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        Decoder { r: bytes, origin }.decode(&[])
    }

    pub fn read(path: impl AsRef<Path>, as_rows: &[&str]) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Decoder {
            r: BufReader::new(file),
            origin: path,
        }
        .decode(as_rows)
    }

    fn expect_kind(self, kind: ModelKind, origin: &Path) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::format(
                origin,
                format!("expected {kind:?}, found {:?}", self.kind),
            ));
        }
        Ok(self)
    }

    fn take(&mut self, name: &str, origin: &Path) -> Result<Tensor> {
        let i = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::format(origin, format!("missing tensor {name}")))?;
        Ok(self.tensors.swap_remove(i))
    }

    fn take_flat(&mut self, name: &str, origin: &Path) -> Result<Vec<f64>> {
        match self.take(name, origin)?.data {
            TensorData::Flat(v) => Ok(v),
            TensorData::Rows(r) => Ok(r.concat()),
        }
    }
}

fn sizes_tensor(sizes: &[usize]) -> TensorRef<'static> {
    TensorRef::vector("sizes", sizes.iter().map(|&s| s as f64).collect::<Vec<_>>())
}

fn read_sizes(d: &mut Decoded, origin: &Path) -> Result<Vec<usize>> {
    let sizes: Vec<usize> = d
        .take_flat("sizes", origin)?
        .into_iter()
        .map(|v| {
            if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::format(origin, format!("bad layer size {v}")))
            }
        })
        .collect::<Result<_>>()?;
    if sizes.len() < 2 {
        return Err(Error::format(origin, "need at least two layer sizes"));
    }
    Ok(sizes)
}

pub fn mlp_file(p: &MLPParams) -> ModelFile<'_> {
    ModelFile {
        kind: ModelKind::Mlp,
        tensors: vec![sizes_tensor(p.sizes()), TensorRef::vector("params", p.as_slice())],
    }
}

pub fn save_mlp(p: &MLPParams, path: impl AsRef<Path>) -> Result<String> {
    mlp_file(p).write(path)
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<MLPParams> {
    let path = path.as_ref();
    let mut d = Decoded::read(path, &[])?.expect_kind(ModelKind::Mlp, path)?;
    let sizes = read_sizes(&mut d, path)?;
    MLPParams::from_flat(&sizes, d.take_flat("params", path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn mean_field_file<'a>(q: &'a MeanFieldPosterior, sizes: &[usize]) -> ModelFile<'a> {
    ModelFile {
        kind: ModelKind::MeanField,
        tensors: vec![
            sizes_tensor(sizes),
            TensorRef::vector("mu", q.mu()),
            TensorRef::vector("rho", q.rho()),
        ],
    }
}

pub fn save_mean_field(q: &MeanFieldPosterior, sizes: &[usize], path: impl AsRef<Path>) -> Result<String> {
    mean_field_file(q, sizes).write(path)
}

pub fn load_mean_field(path: impl AsRef<Path>) -> Result<(MeanFieldPosterior, Vec<usize>)> {
    let path = path.as_ref();
    let mut d = Decoded::read(path, &[])?.expect_kind(ModelKind::MeanField, path)?;
    let sizes = read_sizes(&mut d, path)?;
    let q = MeanFieldPosterior::new(d.take_flat("mu", path)?, d.take_flat("rho", path)?)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if q.len() != param_count(&sizes) {
        return Err(Error::format(path, "posterior size does not match architecture"));
    }
    Ok((q, sizes))
}

pub fn chain_file<'a>(chain: &'a PosteriorChain, sizes: &[usize]) -> ModelFile<'a> {
    let k = chain.samples.len();
    let dim = chain.samples.first().map_or(0, |s| s.len());
    ModelFile {
        kind: ModelKind::HmcChain,
        tensors: vec![
            sizes_tensor(sizes),
            TensorRef {
                name: "samples",
                shape: vec![k, dim],
                parts: chain.samples.iter().map(|s| Cow::Borrowed(s.as_slice())).collect(),
            },
            TensorRef::vector(
                "accepted",
                chain.accepted.iter().map(|&a| a as u8 as f64).collect::<Vec<_>>(),
            ),
            TensorRef::vector("energies", chain.energies.as_slice()),
            TensorRef::vector("rates", vec![chain.accept_rate, chain.burn_in_accept_rate]),
        ],
    }
}

pub fn save_chain(chain: &PosteriorChain, sizes: &[usize], path: impl AsRef<Path>) -> Result<String> {
    chain_file(chain, sizes).write(path)
}

pub fn load_chain(path: impl AsRef<Path>) -> Result<(PosteriorChain, Vec<usize>)> {
    let path = path.as_ref();
    let mut d = Decoded::read(path, &["samples"])?.expect_kind(ModelKind::HmcChain, path)?;
    let sizes = read_sizes(&mut d, path)?;
    let s = d.take("samples", path)?;
    if s.shape.len() != 2 || s.shape[1] != param_count(&sizes) {
        return Err(Error::format(path, "sample matrix does not match architecture"));
    }
    let samples = match s.data {
        TensorData::Rows(r) => r,
        TensorData::Flat(_) => unreachable!("samples requested as rows"),
    };
    let rates = d.take_flat("rates", path)?;
    if rates.len() != 2 {
        return Err(Error::format(path, "rates must hold two values"));
    }
    Ok((
        PosteriorChain {
            samples,
            accepted: d.take_flat("accepted", path)?.iter().map(|&v| v != 0.0).collect(),
            accept_rate: rates[0],
            burn_in_accept_rate: rates[1],
            energies: d.take_flat("energies", path)?,
        },
        sizes,
    ))
}

pub fn gp_file(s: &LaplaceGPState) -> ModelFile<'_> {
    let x = s.inputs();
    let labels: Vec<f64> = s
        .signed_labels()
        .iter()
        .map(|&y| if y > 0.0 { 1.0 } else { 0.0 })
        .collect();
    let p = s.params();
    let link = match s.link() {
        Link::Probit => 0.0,
        Link::Logistic => 1.0,
    };
    ModelFile {
        kind: ModelKind::LaplaceGp,
        tensors: vec![
            TensorRef {
                name: "inputs",
                shape: vec![x.cols(), x.rows()],
                parts: vec![Cow::Borrowed(x.as_slice())],
            },
            TensorRef::vector("labels", labels),
            TensorRef::vector("kernel", vec![p.length_scale, p.signal_variance]),
            TensorRef::vector("link", vec![link]),
            TensorRef::vector("mode", s.mode()),
        ],
    }
}

pub fn save_gp(s: &LaplaceGPState, path: impl AsRef<Path>) -> Result<String> {
    gp_file(s).write(path)
}

pub fn load_gp(path: impl AsRef<Path>) -> Result<LaplaceGPState> {
    let path = path.as_ref();
    let mut d = Decoded::read(path, &[])?.expect_kind(ModelKind::LaplaceGp, path)?;
    let inputs = d.take("inputs", path)?;
    let (n, dim) = match inputs.shape[..] {
        [n, dim] => (n, dim),
        _ => return Err(Error::format(path, "inputs must be a matrix")),
    };
    let data = match inputs.data {
        TensorData::Flat(v) => v,
        TensorData::Rows(r) => r.concat(),
    };
    let x = DenseMatrix::from_col_major(dim, n, data).map_err(|e| Error::format(path, e.to_string()))?;
    let labels: Vec<usize> = d
        .take_flat("labels", path)?
        .iter()
        .map(|&v| (v > 0.5) as usize)
        .collect();
    let k = d.take_flat("kernel", path)?;
    if k.len() != 2 {
        return Err(Error::format(path, "kernel must hold two values"));
    }
    let params = KernelParams::new(k[0], k[1]).map_err(|e| Error::format(path, e.to_string()))?;
    let link = match d.take_flat("link", path)?.first() {
        Some(0.0) => Link::Probit,
        Some(1.0) => Link::Logistic,
        _ => return Err(Error::format(path, "unknown link code")),
    };
    LaplaceGPState::from_mode(x, &labels, params, link, d.take_flat("mode", path)?)
        .map_err(|e| Error::format(path, e.to_string()))
}
