//! Instance files: a little-endian binary container plus a JSON sidecar.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic       8 bytes   "DEMIXINS"
//! version     u32       FORMAT_VERSION
//! conv_len    u32       length of the convention tag
//! convention  bytes     e.g. "dft-neg-v1"
//! s, m, K     u64 x 3
//! sigma       f64
//! seed        u64
//! flags       u32       bit 0: noise vector present, bit 1: ground truth present
//! A           s*m*K complex, ordered (i, j, k)
//! B           m*K complex, ordered (j, k)
//! y           m complex
//! e           m complex           (if bit 0)
//! truth       s*2K complex, h_i then x_i per source (if bit 1)
//! ```
//!
//! Each complex number is stored as interleaved `re, im` f64 values.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::problem::{Dimensions, GroundTruth, ProblemInstance, SourcePair, DFT_CONVENTION};
use crate::rng::RNG_NAME;
use crate::{CMatrix, CVector};

pub const MAGIC: &[u8; 8] = b"DEMIXINS";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_NOISE: u32 = 1;
const FLAG_TRUTH: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetadata {
    pub s: usize,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: f64,
    pub seed: u64,
    pub kappa: Option<f64>,
    pub mu: Option<f64>,
    pub d0: Option<f64>,
    pub convention: String,
    pub rng: String,
}

impl InstanceMetadata {
    pub fn of(inst: &ProblemInstance) -> Self {
        let truth = inst.truth.as_ref();
        Self {
            s: inst.dims.s,
            m: inst.dims.m,
            k: inst.dims.k,
            sigma: inst.sigma,
            seed: inst.seed,
            kappa: truth.map(|t| t.kappa),
            mu: truth.and_then(|t| t.mu),
            d0: truth.map(|t| t.d0),
            convention: DFT_CONVENTION.to_string(),
            rng: RNG_NAME.to_string(),
        }
    }
}

fn put_complex(buf: &mut Vec<u8>, values: impl IntoIterator<Item = Complex64>) {
    for v in values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
}

pub fn encode(inst: &ProblemInstance) -> Vec<u8> {
    let Dimensions { s, m, k } = inst.dims;
    let mut buf = Vec::with_capacity(64 + 16 * (s * m * k + m * k + 2 * m + 2 * s * k));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(DFT_CONVENTION.len() as u32).to_le_bytes());
    buf.extend_from_slice(DFT_CONVENTION.as_bytes());
    for n in [s, m, k] {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    buf.extend_from_slice(&inst.sigma.to_le_bytes());
    buf.extend_from_slice(&inst.seed.to_le_bytes());
    let mut flags = 0;
    if !inst.e.is_empty() {
        flags |= FLAG_NOISE;
    }
    if inst.truth.is_some() {
        flags |= FLAG_TRUTH;
    }
    buf.extend_from_slice(&flags.to_le_bytes());
    // Column-major K x m storage already iterates (j, k).
    for ai in &inst.a {
        put_complex(&mut buf, ai.iter().copied());
    }
    put_complex(&mut buf, inst.b.iter().copied());
    put_complex(&mut buf, inst.y.iter().copied());
    if !inst.e.is_empty() {
        put_complex(&mut buf, inst.e.iter().copied());
    }
    if let Some(t) = &inst.truth {
        for p in &t.sources {
            put_complex(&mut buf, p.h.iter().chain(p.x.iter()).copied());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            DemixError::Format(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
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

    fn complex(&mut self, n: usize) -> Result<Vec<Complex64>> {
        let raw = self.take(n.checked_mul(16).ok_or_else(|| DemixError::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<ProblemInstance> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(DemixError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(DemixError::Format(format!("unsupported version {version}")));
    }
    let conv_len = r.u32()? as usize;
    let conv = r.take(conv_len)?;
    if conv != DFT_CONVENTION.as_bytes() {
        return Err(DemixError::Format(format!("unknown convention {:?}", String::from_utf8_lossy(conv))));
    }
    let to_usize = |v: u64| usize::try_from(v).map_err(|_| DemixError::Format("dimension overflow".into()));
    let dims = Dimensions::new(to_usize(r.u64()?)?, to_usize(r.u64()?)?, to_usize(r.u64()?)?)?;
    let sigma = r.f64()?;
    let seed = r.u64()?;
    let flags = r.u32()?;
    let Dimensions { s, m, k } = dims;
    let mut a = Vec::with_capacity(s);
    for _ in 0..s {
        a.push(CMatrix::from_vec(k, m, r.complex(m * k)?));
    }
    let b = CMatrix::from_vec(k, m, r.complex(m * k)?);
    let y = CVector::from_vec(r.complex(m)?);
    let e = if flags & FLAG_NOISE != 0 { CVector::from_vec(r.complex(m)?) } else { CVector::zeros(0) };
    let truth = if flags & FLAG_TRUTH != 0 {
        let mut sources = Vec::with_capacity(s);
        for _ in 0..s {
            let h = CVector::from_vec(r.complex(k)?);
            let x = CVector::from_vec(r.complex(k)?);
            sources.push(SourcePair::new(h, x));
        }
        Some(GroundTruth::from_sources(sources)?)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(DemixError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut inst = ProblemInstance::from_parts(a, b, y, sigma, seed)?;
    inst.e = e;
    if let Some(t) = truth {
        inst.attach_truth(t)?;
    }
    Ok(inst)
}

/// Writes `<stem>.bin` and `<stem>.json` next to each other.
pub fn save_instance(inst: &ProblemInstance, bin_path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(bin_path)?);
    w.write_all(&encode(inst))?;
    w.flush()?;
    let meta = serde_json::to_string_pretty(&InstanceMetadata::of(inst))?;
    fs::write(bin_path.with_extension("json"), meta + "\n")?;
    Ok(())
}

pub fn load_instance(bin_path: &Path) -> Result<ProblemInstance> {
    let mut bytes = Vec::new();
    fs::File::open(bin_path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
