//! Synthetic blind-demixing instances.
//!
//! Measurements follow `y_j = sum_i b_j^* h_i x_i^* a_ij + e_j` with `a_ij`
//! i.i.d. standard complex Gaussian and `b_j` the rows of the first `K`
//! columns of the unitary DFT matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::metrics::incoherence_mu;
use crate::rng::{self, Domain};
use crate::{CMatrix, CVector};

/// Tag of the DFT sign/scale convention used by [`make_dft_rows`].
pub const DFT_CONVENTION: &str = "dft-neg-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// Number of sources.
    pub s: usize,
    /// Number of measurements.
    pub m: usize,
    /// Subspace dimension shared by every `h_i` and `x_i`.
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
}

impl Dimensions {
    pub fn new(s: usize, m: usize, k: usize) -> Result<Self> {
        let dims = Self { s, m, k };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.k == 0 {
            return Err(DemixError::Dimension(format!(
                "s and K must be positive (s={}, K={})",
                self.s, self.k
            )));
        }
        if self.m < self.k {
            return Err(DemixError::Dimension(format!(
                "m={} is smaller than K={}",
                self.m, self.k
            )));
        }
        Ok(())
    }
}

/// One `(h_i, x_i)` pair, either a ground-truth source or an iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePair {
    pub h: CVector,
    pub x: CVector,
}

impl SourcePair {
    pub fn new(h: CVector, x: CVector) -> Self {
        Self { h, x }
    }

    pub fn zeros(k: usize) -> Self {
        Self { h: CVector::zeros(k), x: CVector::zeros(k) }
    }

    /// Rank-one matrix `h x^*`.
    pub fn outer(&self) -> CMatrix {
        &self.h * self.x.adjoint()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub sources: Vec<SourcePair>,
    /// `d_i = |h_i|^2 + |x_i|^2`.
    pub d: Vec<f64>,
    /// `sqrt(sum_i |h_i|^2 |x_i|^2)`.
    pub d0: f64,
    /// `max_i |x_i| / min_i |x_i|`.
    pub kappa: f64,
    /// Incoherence against the attached `B`; `None` until attached.
    pub mu: Option<f64>,
}

impl GroundTruth {
    pub fn from_sources(sources: Vec<SourcePair>) -> Result<Self> {
        let k = sources
            .first()
            .map(|p| p.h.len())
            .ok_or_else(|| DemixError::Dimension("ground truth has no sources".into()))?;
        for (i, p) in sources.iter().enumerate() {
            if p.h.len() != k || p.x.len() != k {
                return Err(DemixError::Shape(format!("source {i} does not have length {k}")));
            }
            if p.x.norm() == 0.0 || p.h.norm() == 0.0 {
                return Err(DemixError::ZeroVector("ground-truth source"));
            }
        }
        let d = sources.iter().map(|p| p.h.norm_squared() + p.x.norm_squared()).collect();
        let d0 = sources
            .iter()
            .map(|p| p.h.norm_squared() * p.x.norm_squared())
            .sum::<f64>()
            .sqrt();
        let (lo, hi) = sources.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
            let n = p.x.norm();
            (lo.min(n), hi.max(n))
        });
        Ok(Self { sources, d, d0, kappa: hi / lo, mu: None })
    }

    pub fn k(&self) -> usize {
        self.sources[0].h.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub dims: Dimensions,
    /// Per-source design, `K x m`; column `j` of `a[i]` is `a_ij`.
    pub a: Vec<CMatrix>,
    /// `K x m`; column `j` is `b_j`.
    pub b: CMatrix,
    pub y: CVector,
    /// Noise actually added; empty for noiseless instances.
    pub e: CVector,
    pub sigma: f64,
    pub seed: u64,
    pub truth: Option<GroundTruth>,
}

/// `b_j[k] = exp(-2 pi i j k / m) / sqrt(m)`, returned as the `K x m` matrix
/// whose columns are the `b_j`.
pub fn make_dft_rows(m: usize, k: usize) -> Result<CMatrix> {
    if k == 0 || m < k {
        return Err(DemixError::Dimension(format!("DFT rows need m >= K >= 1 (m={m}, K={k})")));
    }
    let scale = 1.0 / (m as f64).sqrt();
    Ok(DMatrix::from_fn(k, m, |kk, j| {
        // Reduce jk mod m first so the phase stays exact for large indices.
        let phase = -2.0 * std::f64::consts::PI * ((j * kk) % m) as f64 / m as f64;
        Complex64::from_polar(scale, phase)
    }))
}

/// Draws every `a_ij` from its own stream, so the result does not depend on
/// the worker schedule.
pub fn sample_design(dims: &Dimensions, seed: u64) -> Result<Vec<CMatrix>> {
    dims.validate()?;
    let Dimensions { s, m, k } = *dims;
    Ok((0..s)
        .into_par_iter()
        .map(|i| {
            let mut data = Vec::with_capacity(k * m);
            for j in 0..m {
                let mut r = rng::stream(seed, Domain::Design, (i * m + j) as u64);
                data.extend(rng::complex_normal_vec(&mut r, k));
            }
            CMatrix::from_vec(k, m, data)
        })
        .collect())
}

/// Norm of source `i`: geometric interpolation from 1 (first source) to
/// `kappa` (last source).
pub fn source_norm(i: usize, s: usize, kappa: f64) -> f64 {
    if s <= 1 {
        1.0
    } else {
        kappa.powf(i as f64 / (s - 1) as f64)
    }
}

pub fn sample_ground_truth(dims: &Dimensions, kappa: f64, seed: u64) -> Result<GroundTruth> {
    dims.validate()?;
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(DemixError::InvalidParameter(format!("kappa must be >= 1, got {kappa}")));
    }
    if dims.s == 1 && kappa != 1.0 {
        return Err(DemixError::InvalidParameter(
            "a single source cannot realize kappa != 1".into(),
        ));
    }
    let sources = (0..dims.s)
        .map(|i| {
            let mut r = rng::stream(seed, Domain::Truth, i as u64);
            let norm = source_norm(i, dims.s, kappa);
            let h = CVector::from_vec(rng::complex_normal_vec(&mut r, dims.k));
            let x = CVector::from_vec(rng::complex_normal_vec(&mut r, dims.k));
            SourcePair::new(h.unscale(h.norm()).scale(norm), x.unscale(x.norm()).scale(norm))
        })
        .collect();
    GroundTruth::from_sources(sources)
}

/// `sum_i (b_j^* h_i)(x_i^* a_ij)` for every `j`, sources accumulated in
/// ascending order.
pub fn forward(sources: &[SourcePair], a: &[CMatrix], b: &CMatrix) -> Result<CVector> {
    check_sources(sources, a, b)?;
    let m = b.ncols();
    let mut out = CVector::zeros(m);
    for (pair, ai) in sources.iter().zip(a) {
        let bh = b.ad_mul(&pair.h);
        let ax = ai.ad_mul(&pair.x);
        for j in 0..m {
            out[j] += bh[j] * ax[j].conj();
        }
    }
    Ok(out)
}

pub(crate) fn check_sources(sources: &[SourcePair], a: &[CMatrix], b: &CMatrix) -> Result<()> {
    let (k, m) = b.shape();
    if sources.len() != a.len() {
        return Err(DemixError::Shape(format!(
            "{} sources but {} design blocks",
            sources.len(),
            a.len()
        )));
    }
    for (i, (pair, ai)) in sources.iter().zip(a).enumerate() {
        if ai.shape() != (k, m) {
            return Err(DemixError::Shape(format!("design block {i} is {:?}, expected {:?}", ai.shape(), (k, m))));
        }
        if pair.h.len() != k || pair.x.len() != k {
            return Err(DemixError::Shape(format!("source {i} does not have length K={k}")));
        }
    }
    Ok(())
}

/// Returns `(y, e)`; `e` is empty when `sigma == 0`.
pub fn synthesize_measurements(
    truth: &GroundTruth,
    a: &[CMatrix],
    b: &CMatrix,
    sigma: f64,
    seed: u64,
) -> Result<(CVector, CVector)> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(DemixError::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut y = forward(&truth.sources, a, b)?;
    if sigma == 0.0 {
        return Ok((y, CVector::zeros(0)));
    }
    let m = b.ncols();
    let scale = sigma * truth.d0 / (m as f64).sqrt();
    let mut r = rng::stream(seed, Domain::Noise, 0);
    let e = CVector::from_vec(rng::complex_normal_vec(&mut r, m)).scale(scale);
    y += &e;
    Ok((y, e))
}

/// `20 log10(|y| / |e|)`.
pub fn snr_db(y: &CVector, e: &CVector) -> Result<f64> {
    let en = e.norm();
    if en == 0.0 {
        return Err(DemixError::InfiniteSnr);
    }
    Ok(20.0 * (y.norm() / en).log10())
}

impl ProblemInstance {
    /// Generates design, truth and measurements from one master seed.
    pub fn generate(dims: Dimensions, kappa: f64, sigma: f64, seed: u64) -> Result<Self> {
        dims.validate()?;
        let b = make_dft_rows(dims.m, dims.k)?;
        let a = sample_design(&dims, seed)?;
        let truth = sample_ground_truth(&dims, kappa, seed)?;
        let (y, e) = synthesize_measurements(&truth, &a, &b, sigma, seed)?;
        let mut inst = Self { dims, a, b, y, e, sigma, seed, truth: None };
        inst.attach_truth(truth)?;
        Ok(inst)
    }

    /// Builds an instance from explicit parts, checking shapes.
    pub fn from_parts(a: Vec<CMatrix>, b: CMatrix, y: CVector, sigma: f64, seed: u64) -> Result<Self> {
        let (k, m) = b.shape();
        let dims = Dimensions::new(a.len(), m, k)?;
        for (i, ai) in a.iter().enumerate() {
            if ai.shape() != (k, m) {
                return Err(DemixError::Shape(format!("design block {i} is {:?}, expected {:?}", ai.shape(), (k, m))));
            }
        }
        if y.len() != m {
            return Err(DemixError::Shape(format!("y has length {}, expected {m}", y.len())));
        }
        Ok(Self { dims, a, b, y, e: CVector::zeros(0), sigma, seed, truth: None })
    }

    /// Attaches ground truth and fills in its incoherence parameter.
    pub fn attach_truth(&mut self, mut truth: GroundTruth) -> Result<()> {
        if truth.sources.len() != self.dims.s || truth.k() != self.dims.k {
            return Err(DemixError::Shape(format!(
                "truth has s={}, K={}; instance has s={}, K={}",
                truth.sources.len(),
                truth.k(),
                self.dims.s,
                self.dims.k
            )));
        }
        truth.mu = Some(incoherence_mu(&truth, &self.b)?);
        self.truth = Some(truth);
        Ok(())
    }

    pub fn truth(&self) -> Result<&GroundTruth> {
        self.truth.as_ref().ok_or(DemixError::MissingTruth("instance has no attached ground truth"))
    }

    /// Noiseless measurements of the attached truth.
    pub fn clean_measurements(&self) -> Result<CVector> {
        forward(&self.truth()?.sources, &self.a, &self.b)
    }

    pub fn snr_db(&self) -> Result<f64> {
        snr_db(&self.y, &self.e)
    }
}
