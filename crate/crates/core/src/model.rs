//! The trained function `f(x) = Σᵢ ⟨αᵢ, φᵢ(x)⟩` and its binary file format.
//!
//! # File format (`TSG1`)
//!
//! All integers and floats little-endian.
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `b"TSG1"` |
//! | 4 | format version (`u32`, currently 1) |
//! | 8 | `d` (`u64`) |
//! | 8 | `m` (`u64`) |
//! | 8 | `T` (`u64`) |
//! | 8 | `σ` (`f64`) |
//! | 8 | base seed (`u64`) |
//! | 10 | unlabeled-loss tag, see [`encode_loss`] |
//! | 8·T·m | coefficients (`f64`), iteration-major |

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::loss::{DerivativeConvention, Label, UnlabeledLossKind};
use crate::rf::{FeatureBlock, KernelSpec, RfError};

pub const MODEL_MAGIC: &[u8; 4] = b"TSG1";
pub const FORMAT_VERSION: u32 = 1;
const LOSS_TAG_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: {0}")]
    Truncated(&'static str),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Rf(#[from] RfError),
    #[error("coefficient vector {index} has length {got}, expected m={m}")]
    BadCoefficientLength { index: usize, got: usize, m: usize },
    #[error("non-finite coefficient in iteration {0}")]
    NonFinite(usize),
}

/// Trained TSG model. Coefficient vector `i` (0-based) pairs with the feature block of
/// iteration `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    base_seed: u64,
    m: usize,
    d: usize,
    kernel: KernelSpec,
    loss: UnlabeledLossKind,
    convention: DerivativeConvention,
    coefficients: Vec<f64>,
}

impl Model {
    pub fn new(
        base_seed: u64,
        m: usize,
        d: usize,
        kernel: KernelSpec,
        loss: UnlabeledLossKind,
        convention: DerivativeConvention,
        coefficients: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        let mut flat = Vec::with_capacity(coefficients.len() * m);
        for (index, alpha) in coefficients.iter().enumerate() {
            if alpha.len() != m {
                return Err(ModelError::BadCoefficientLength {
                    index,
                    got: alpha.len(),
                    m,
                });
            }
            flat.extend_from_slice(alpha);
        }
        Self::from_flat(base_seed, m, d, kernel, loss, convention, flat)
    }

    pub(crate) fn from_flat(
        base_seed: u64,
        m: usize,
        d: usize,
        kernel: KernelSpec,
        loss: UnlabeledLossKind,
        convention: DerivativeConvention,
        coefficients: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if m == 0 || d == 0 {
            return Err(RfError::InvalidShape { m, d }.into());
        }
        if !coefficients.len().is_multiple_of(m) {
            return Err(ModelError::BadCoefficientLength {
                index: coefficients.len() / m,
                got: coefficients.len() % m,
                m,
            });
        }
        if let Some(pos) = coefficients.iter().position(|c| !c.is_finite()) {
            return Err(ModelError::NonFinite(pos / m));
        }
        Ok(Model {
            base_seed,
            m,
            d,
            kernel,
            loss,
            convention,
            coefficients,
        })
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn loss(&self) -> UnlabeledLossKind {
        self.loss
    }

    pub fn convention(&self) -> DerivativeConvention {
        self.convention
    }

    /// Number of iterations `T`.
    pub fn iterations(&self) -> usize {
        self.coefficients.len() / self.m
    }

    /// `αᵢ` for the 0-based position `i`.
    pub fn coefficient(&self, i: usize) -> &[f64] {
        &self.coefficients[i * self.m..(i + 1) * self.m]
    }

    pub fn coefficients(&self) -> impl Iterator<Item = &[f64]> {
        self.coefficients.chunks_exact(self.m)
    }

    pub fn flat_coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Regenerates the feature block paired with position `i`.
    pub fn block(&self, i: usize) -> FeatureBlock {
        FeatureBlock::spawn(self.base_seed, i as u64 + 1, self.m, self.d, self.kernel)
            .expect("model shape validated at construction")
    }

    /// Sum of squared coefficients, the feature-space surrogate of `‖f‖²`.
    pub fn feature_norm_sq(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }

    /// Returns a copy with every coefficient multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Model, ModelError> {
        let coefficients = self.coefficients.iter().map(|a| a * c).collect();
        Self::from_flat(
            self.base_seed,
            self.m,
            self.d,
            self.kernel,
            self.loss,
            self.convention,
            coefficients,
        )
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.d {
            Err(RfError::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            }
            .into())
        } else {
            Ok(())
        }
    }

    /// Seed-replay prediction: starts from 0 and adds `⟨αᵢ, φᵢ(x)⟩` for `i = 1..T`.
    pub fn predict_score(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_dim(x)?;
        let mut f = 0.0;
        for (i, alpha) in self.coefficients().enumerate() {
            f += self.block(i).dot_features(alpha, x)?;
        }
        Ok(f)
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<Label, ModelError> {
        Ok(Label::from_score(self.predict_score(x)?))
    }

    /// Scores many points, regenerating each block once for the whole batch.
    pub fn predict_scores(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        for x in xs {
            self.check_dim(x)?;
        }
        let mut out = vec![0.0; xs.len()];
        for (i, alpha) in self.coefficients().enumerate() {
            let block = self.block(i);
            for (o, x) in out.iter_mut().zip(xs) {
                *o += block.dot_features(alpha, x)?;
            }
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), FormatError> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.d as u64).to_le_bytes())?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&(self.iterations() as u64).to_le_bytes())?;
        w.write_all(&self.kernel.sigma().to_le_bytes())?;
        w.write_all(&self.base_seed.to_le_bytes())?;
        w.write_all(&encode_loss(self.loss, self.convention))?;
        for c in &self.coefficients {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(58 + 8 * self.coefficients.len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Model, FormatError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model, FormatError> {
        let mut cur = Cursor::new(bytes);
        cur.magic(MODEL_MAGIC)?;
        let version = cur.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let d = cur.usize("d")?;
        let m = cur.usize("m")?;
        let t = cur.usize("T")?;
        let sigma = cur.f64("sigma")?;
        let base_seed = cur.u64("base seed")?;
        let (loss, convention) = decode_loss(cur.take(LOSS_TAG_LEN, "loss tag")?)?;
        if m == 0 || d == 0 {
            return Err(FormatError::CorruptHeader(format!("m={m}, d={d}")));
        }
        let kernel =
            KernelSpec::new(sigma).map_err(|e| FormatError::CorruptHeader(e.to_string()))?;
        let count = t
            .checked_mul(m)
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| FormatError::CorruptHeader(format!("T={t}, m={m} overflow")))?;
        if cur.remaining() < count * 8 {
            return Err(FormatError::Truncated("coefficients"));
        }
        let coefficients = (0..count)
            .map(|_| cur.f64("coefficients"))
            .collect::<Result<Vec<_>, _>>()?;
        if cur.remaining() != 0 {
            return Err(FormatError::TrailingBytes);
        }
        Model::from_flat(base_seed, m, d, kernel, loss, convention, coefficients)
            .map_err(|e| FormatError::CorruptHeader(e.to_string()))
    }
}

/// Memoizes regenerated blocks for repeated prediction. Scores are identical to
/// [`Model::predict_score`].
pub struct CachedPredictor<'a> {
    model: &'a Model,
    cache: Mutex<HashMap<usize, Arc<FeatureBlock>>>,
}

impl<'a> CachedPredictor<'a> {
    pub fn new(model: &'a Model) -> Self {
        CachedPredictor {
            model,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn block(&self, i: usize) -> Arc<FeatureBlock> {
        let mut cache = self.cache.lock().expect("block cache poisoned");
        cache
            .entry(i)
            .or_insert_with(|| Arc::new(self.model.block(i)))
            .clone()
    }

    pub fn predict_score(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.model.check_dim(x)?;
        let mut f = 0.0;
        for (i, alpha) in self.model.coefficients().enumerate() {
            f += self.block(i).dot_features(alpha, x)?;
        }
        Ok(f)
    }

    pub fn cached_blocks(&self) -> usize {
        self.cache.lock().expect("block cache poisoned").len()
    }
}

/// Loss tag: kind byte (0 shg, 1 sshg, 2 ramp, 3 da), `f64` ramp parameter
/// (0 otherwise), convention byte (0 sign-corrected, 1 literal).
pub fn encode_loss(kind: UnlabeledLossKind, convention: DerivativeConvention) -> [u8; 10] {
    let (tag, param) = match kind {
        UnlabeledLossKind::Shg => (0u8, 0.0),
        UnlabeledLossKind::Sshg => (1, 0.0),
        UnlabeledLossKind::Ramp { s } => (2, s),
        UnlabeledLossKind::Da => (3, 0.0),
    };
    let mut out = [0u8; 10];
    out[0] = tag;
    out[1..9].copy_from_slice(&param.to_le_bytes());
    out[9] = match convention {
        DerivativeConvention::SignCorrected => 0,
        DerivativeConvention::Literal => 1,
    };
    out
}

pub fn decode_loss(bytes: &[u8]) -> Result<(UnlabeledLossKind, DerivativeConvention), FormatError> {
    let param = f64::from_le_bytes(bytes[1..9].try_into().expect("8 bytes"));
    let kind = match bytes[0] {
        0 => UnlabeledLossKind::Shg,
        1 => UnlabeledLossKind::Sshg,
        2 => UnlabeledLossKind::ramp(param).map_err(|e| FormatError::CorruptHeader(e.to_string()))?,
        3 => UnlabeledLossKind::Da,
        t => return Err(FormatError::CorruptHeader(format!("unknown loss tag {t}"))),
    };
    let convention = match bytes[9] {
        0 => DerivativeConvention::SignCorrected,
        1 => DerivativeConvention::Literal,
        c => return Err(FormatError::CorruptHeader(format!("unknown derivative convention {c}"))),
    };
    Ok((kind, convention))
}

/// Little-endian reader over a byte slice that reports which field ran short.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated(field));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().expect("4 bytes");
        if &found != expected {
            return Err(FormatError::BadMagic {
                found,
                expected: *expected,
            });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, field: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self, field: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn usize(&mut self, field: &'static str) -> Result<usize, FormatError> {
        let v = self.u64(field)?;
        usize::try_from(v).map_err(|_| FormatError::CorruptHeader(format!("{field}={v}")))
    }

    pub(crate) fn f64(&mut self, field: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}
