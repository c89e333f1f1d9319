//! Numerical checks of the local geometry at desk scale: the population
//! Hessian, restricted strong convexity and smoothness, concentration of the
//! spectral back-projections, leave-one-out proximity and contraction of the
//! alignment parameters.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use num_complex::Complex64;
use rand_core::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{DemixError, Result};
use crate::metrics::{self, align_source};
use crate::objective::{self, widen, DemixState, DENSE_HESSIAN_CAP};
use crate::problem::{self, Dimensions, GroundTruth, ProblemInstance, SourcePair};
use crate::rng::{self, Domain};
use crate::solver::{self, SolverConfig};
use crate::{CMatrix, CVector};

/// Attached to every report: the generator draws Gaussian noise, while the
/// contraction bounds being probed assume entrywise-bounded noise.
pub const NOISE_MODEL_NOTE: &str = "noise is circular Gaussian with per-entry variance sigma^2 d0^2 / m; \
     the contraction bounds checked here assume bounded noise |e_j| <= sigma^2 / m, so noisy results are advisory";

/// Machine-readable outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub check: String,
    pub params: Value,
    pub seed: u64,
    pub metrics: Value,
    pub pass: bool,
    pub notes: Vec<String>,
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Spectral norm of a Hermitian matrix.
pub fn hermitian_norm(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn spectral_norm(m: &CMatrix) -> f64 {
    SVD::new(m.clone(), false, false).singular_values.iter().copied().fold(0.0, f64::max)
}

/// Expected clean Wirtinger Hessian at the truth, block diagonal over sources.
///
/// Each `4K x 4K` block has `|x_i|^2 I` and `|h_i|^2 I` on the diagonal and
/// `h_i x_i^T`, `x_i h_i^T` (and their adjoints) off the diagonal; with unit
/// norms the diagonal is the identity. Requires `|h_i| = |x_i|`.
pub fn population_hessian(truth: &GroundTruth) -> Result<CMatrix> {
    let (s, k) = (truth.sources.len(), truth.k());
    let order = 4 * s * k;
    if order > DENSE_HESSIAN_CAP {
        return Err(DemixError::TooLarge { order, cap: DENSE_HESSIAN_CAP });
    }
    let mut out = CMatrix::zeros(order, order);
    for (i, p) in truth.sources.iter().enumerate() {
        let (hh, xx) = (p.h.norm_squared(), p.x.norm_squared());
        if (hh - xx).abs() > 1e-12 * hh.max(xx) {
            return Err(DemixError::InvalidParameter(format!(
                "source {i} has |h| != |x|; the population Hessian assumes equal norms"
            )));
        }
        let base = 4 * k * i;
        let hx_t = &p.h * p.x.transpose();
        let xh_t = &p.x * p.h.transpose();
        for n in 0..k {
            out[(base + n, base + n)] = Complex64::new(xx, 0.0);
            out[(base + k + n, base + k + n)] = Complex64::new(hh, 0.0);
            out[(base + 2 * k + n, base + 2 * k + n)] = Complex64::new(xx, 0.0);
            out[(base + 3 * k + n, base + 3 * k + n)] = Complex64::new(hh, 0.0);
        }
        out.view_mut((base, base + 3 * k), (k, k)).copy_from(&hx_t);
        out.view_mut((base + k, base + 2 * k), (k, k)).copy_from(&xh_t);
        out.view_mut((base + 2 * k, base + k), (k, k)).copy_from(&xh_t.adjoint());
        out.view_mut((base + 3 * k, base), (k, k)).copy_from(&hx_t.adjoint());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct RscParams {
    /// Number of Hessian points sampled in the region.
    pub n_points: usize,
    /// Admissible directions per point.
    pub n_dirs: usize,
    /// Radius constant; points lie within `delta / (kappa sqrt(s))` of the truth.
    pub delta: f64,
    /// Constant of the `a`-incoherence condition.
    pub c3: f64,
    /// Constant of the `b`-incoherence condition.
    pub c4: f64,
    /// Rejection-sampling budget per point or direction.
    pub max_attempts: usize,
}

impl Default for RscParams {
    fn default() -> Self {
        Self { n_points: 50, n_dirs: 20, delta: 0.05, c3: 2.0, c4: 2.0, max_attempts: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RscReport {
    /// Number of `(point, direction)` pairs evaluated.
    pub samples_tested: usize,
    pub points_tested: usize,
    /// Points or directions abandoned after `max_attempts` rejections.
    pub sampling_failures: usize,
    /// `min u^*[D H + H D] u / |u|^2` over all samples.
    pub min_quadratic_ratio: f64,
    /// Largest sampled `|H(z)|`.
    pub smoothness_max: f64,
    pub kappa: f64,
    pub s: usize,
    /// `min_quadratic_ratio >= 1/(4 kappa)` and `smoothness_max <= 2 + s`.
    pub pass: bool,
}

fn ball_offset<R: RngCore>(r: &mut R, k: usize, radius: f64) -> CVector {
    let v = CVector::from_vec(rng::complex_normal_vec(r, k));
    // Uniform in the ball of real dimension 2K.
    let scale = radius * rng::uniform_open(r).powf(1.0 / (2 * k) as f64);
    v.unscale(v.norm()).scale(scale)
}

fn within(pair: &SourcePair, center: &SourcePair, radius: f64) -> bool {
    (&pair.h - &center.h).norm() <= radius && (&pair.x - &center.x).norm() <= radius
}

/// Incoherence conditions on `a_ij^*(x_i - x_i^nat)` and `b_j^* h_i`.
fn incoherent(state: &DemixState, inst: &ProblemInstance, truth: &GroundTruth, params: &RscParams) -> bool {
    let m = inst.dims.m as f64;
    let s = inst.dims.s as f64;
    let log_m = m.ln().max(1.0);
    let mu = truth.mu.unwrap_or(1.0);
    let a_bound = 2.0 * params.c3 / (s.sqrt() * log_m.powf(1.5));
    let b_bound = 2.0 * params.c4 * mu * log_m * log_m / m.sqrt();
    state.sources.iter().zip(&truth.sources).zip(&inst.a).all(|((p, t), ai)| {
        let dx = &p.x - &t.x;
        let a_ok = ai.ad_mul(&dx).iter().all(|v| v.norm() <= a_bound * t.x.norm());
        let b_ok = inst.b.ad_mul(&p.h).iter().all(|v| v.norm() <= b_bound * t.h.norm());
        a_ok && b_ok
    })
}

/// Samples points of the region of incoherence and contraction and aligned
/// difference directions, and evaluates the scaled quadratic form and the
/// norm of the clean Hessian at each point.
pub fn check_rsc(inst: &ProblemInstance, params: &RscParams, seed: u64) -> Result<RscReport> {
    let truth = inst.truth()?;
    let Dimensions { s, k, .. } = inst.dims;
    let order = 4 * s * k;
    if order > DENSE_HESSIAN_CAP {
        return Err(DemixError::TooLarge { order, cap: DENSE_HESSIAN_CAP });
    }
    if params.n_points == 0 || params.n_dirs == 0 || !(params.delta > 0.0) {
        return Err(DemixError::InvalidParameter("n_points, n_dirs and delta must be positive".into()));
    }
    let kappa = truth.kappa;
    let radius = params.delta / (kappa * (s as f64).sqrt());
    let beta_slack = radius;

    let per_point: Vec<Result<Option<(f64, f64, usize)>>> = (0..params.n_points)
        .into_par_iter()
        .map(|pt| {
            let mut r = rng::stream(seed, Domain::Verify, pt as u64);
            let mut point = None;
            for _ in 0..params.max_attempts {
                let cand = DemixState::new(
                    truth
                        .sources
                        .iter()
                        .map(|t| SourcePair::new(&t.h + ball_offset(&mut r, k, radius), &t.x + ball_offset(&mut r, k, radius)))
                        .collect(),
                );
                if incoherent(&cand, inst, truth, params) {
                    point = Some(cand);
                    break;
                }
            }
            let Some(z) = point else { return Ok(None) };
            let blocks = objective::clean_hessian_diagonal(&z, inst)?;
            let norm = blocks.iter().map(hermitian_norm).fold(0.0, f64::max);

            let mut min_ratio = f64::INFINITY;
            let mut tested = 0;
            'dirs: for _ in 0..params.n_dirs {
                let mut num = 0.0;
                let mut den = 0.0;
                for (t, block) in truth.sources.iter().zip(&blocks) {
                    let Some(u) = aligned_direction(&mut r, t, k, radius, params.max_attempts)? else {
                        continue 'dirs;
                    };
                    let b1 = 1.0 / kappa + beta_slack * (2.0 * rng::uniform_open(&mut r) - 1.0);
                    let b2 = 1.0 / kappa + beta_slack * (2.0 * rng::uniform_open(&mut r) - 1.0);
                    let wu = CVector::from_fn(4 * k, |n, _| u[n] * if (n / k) % 2 == 0 { b1 } else { b2 });
                    let hu = block * &u;
                    num += 2.0 * wu.dotc(&hu).re;
                    den += u.norm_squared();
                }
                min_ratio = min_ratio.min(num / den);
                tested += 1;
            }
            Ok(Some((min_ratio, norm, tested)))
        })
        .collect();

    let mut report = RscReport {
        samples_tested: 0,
        points_tested: 0,
        sampling_failures: 0,
        min_quadratic_ratio: f64::INFINITY,
        smoothness_max: 0.0,
        kappa,
        s,
        pass: false,
    };
    for res in per_point {
        match res? {
            Some((ratio, norm, tested)) => {
                report.points_tested += 1;
                report.samples_tested += tested;
                report.sampling_failures += params.n_dirs - tested;
                if tested > 0 {
                    report.min_quadratic_ratio = report.min_quadratic_ratio.min(ratio);
                }
                report.smoothness_max = report.smoothness_max.max(norm);
            }
            None => report.sampling_failures += 1,
        }
    }
    if report.samples_tested == 0 {
        report.min_quadratic_ratio = f64::NAN;
    }
    report.pass = report.samples_tested > 0
        && report.min_quadratic_ratio >= 1.0 / (4.0 * kappa)
        && report.smoothness_max <= 2.0 + s as f64;
    Ok(report)
}

/// `[h - h'; x - x'; conj; conj]` for two ball points with `(h, x)` aligned to `(h', x')`.
fn aligned_direction<R: RngCore>(
    r: &mut R,
    center: &SourcePair,
    k: usize,
    radius: f64,
    max_attempts: usize,
) -> Result<Option<CVector>> {
    for _ in 0..max_attempts {
        let p = SourcePair::new(&center.h + ball_offset(r, k, radius), &center.x + ball_offset(r, k, radius));
        let q = SourcePair::new(&center.h + ball_offset(r, k, radius), &center.x + ball_offset(r, k, radius));
        let alpha = align_source(&p.h, &p.x, &q.h, &q.x)?;
        let inv = Complex64::new(1.0, 0.0) / alpha.conj();
        let aligned = SourcePair::new(p.h.map(|v| v * inv), p.x.map(|v| v * alpha));
        if within(&aligned, center, radius) {
            return Ok(Some(widen(&(&aligned.h - &q.h), &(&aligned.x - &q.x))));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralConcentrationReport {
    pub m: usize,
    pub trials: usize,
    /// Mean over trials and sources of `|M_i - h_i x_i^*|`.
    pub mean_deviation: f64,
    pub max_deviation: f64,
    /// Entrywise Monte-Carlo mean of each `M_i`.
    #[serde(skip)]
    pub mean_matrices: Vec<CMatrix>,
    /// Standard errors of the real and imaginary parts of `mean_matrices`.
    #[serde(skip)]
    pub std_errors: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// `h_i x_i^*` of the fixed truth.
    #[serde(skip)]
    pub expected: Vec<CMatrix>,
}

impl SpectralConcentrationReport {
    /// Largest entrywise deviation of the Monte-Carlo mean from its
    /// expectation, in units of the standard error.
    pub fn max_z_score(&self) -> f64 {
        let mut worst = 0.0f64;
        for ((mean, (se_re, se_im)), target) in self.mean_matrices.iter().zip(&self.std_errors).zip(&self.expected) {
            for n in 0..mean.len() {
                let d = mean[n] - target[n];
                worst = worst.max(d.re.abs() / se_re[n]).max(d.im.abs() / se_im[n]);
            }
        }
        worst
    }
}

/// Monte-Carlo distribution of `|M_i - h_i x_i^*|` over fresh designs and
/// noise, with the truth (unit norms) fixed by `seed`.
pub fn spectral_concentration(dims: &Dimensions, sigma: f64, n_trials: usize, seed: u64) -> Result<SpectralConcentrationReport> {
    dims.validate()?;
    if n_trials < 2 {
        return Err(DemixError::InvalidParameter("spectral concentration needs at least 2 trials".into()));
    }
    let truth = problem::sample_ground_truth(dims, 1.0, seed)?;
    let b = problem::make_dft_rows(dims.m, dims.k)?;
    let expected: Vec<CMatrix> = truth.sources.iter().map(SourcePair::outer).collect();

    let per_trial: Vec<Result<Vec<CMatrix>>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = rng::derive_seed(seed, trial as u64);
            let a = problem::sample_design(dims, trial_seed)?;
            let (y, e) = problem::synthesize_measurements(&truth, &a, &b, sigma, trial_seed)?;
            let mut inst = ProblemInstance::from_parts(a, b.clone(), y, sigma, trial_seed)?;
            inst.e = e;
            (0..dims.s).map(|i| solver::backprojection(&inst, i, None)).collect()
        })
        .collect();
    let samples = per_trial.into_iter().collect::<Result<Vec<_>>>()?;

    let n = n_trials as f64;
    let (mut sum_dev, mut max_dev) = (0.0, 0.0f64);
    for trial in &samples {
        for (mi, target) in trial.iter().zip(&expected) {
            let dev = spectral_norm(&(mi - target));
            sum_dev += dev;
            max_dev = max_dev.max(dev);
        }
    }
    let mut mean_matrices = Vec::with_capacity(dims.s);
    let mut std_errors = Vec::with_capacity(dims.s);
    for i in 0..dims.s {
        let mean = samples.iter().fold(CMatrix::zeros(dims.k, dims.k), |acc, t| acc + &t[i]).unscale(n);
        let var = |part: fn(Complex64) -> f64| {
            DMatrix::<f64>::from_fn(dims.k, dims.k, |r, c| {
                let mu = part(mean[(r, c)]);
                let ss: f64 = samples.iter().map(|t| (part(t[i][(r, c)]) - mu).powi(2)).sum();
                (ss / (n - 1.0) / n).sqrt()
            })
        };
        std_errors.push((var(|z| z.re), var(|z| z.im)));
        mean_matrices.push(mean);
    }
    Ok(SpectralConcentrationReport {
        m: dims.m,
        trials: n_trials,
        mean_deviation: sum_dev / (n * dims.s as f64),
        max_deviation: max_dev,
        mean_matrices,
        std_errors,
        expected,
    })
}

/// Runs [`spectral_concentration`] for each `m`, keeping `s`, `K` and the truth fixed.
pub fn spectral_sweep(s: usize, k: usize, ms: &[usize], sigma: f64, n_trials: usize, seed: u64) -> Result<Vec<SpectralConcentrationReport>> {
    ms.iter().map(|&m| spectral_concentration(&Dimensions::new(s, m, k)?, sigma, n_trials, seed)).collect()
}

pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooReport {
    pub l_set: Vec<usize>,
    /// Recorded iterations.
    pub iters: Vec<usize>,
    /// `max_l dist(z^{t,(l)}, z~^t)` at each recorded iteration.
    pub max_loo_dist: Vec<f64>,
    /// `dist(z^t, z^nat)` at each recorded iteration.
    pub main_dist: Vec<f64>,
    /// Set when some leave-one-out branch has no information left (for
    /// example a single measurement); such branches stay at their start.
    pub degenerate: bool,
}

/// Runs the main Wirtinger-flow sequence and, for each `l`, the sequence
/// driven by the loss with measurement `l` deleted (started from the
/// correspondingly reduced spectral initialization), and reports their
/// aligned distance.
pub fn leave_one_out_trajectories(inst: &ProblemInstance, cfg: &SolverConfig, l_set: &[usize]) -> Result<LooReport> {
    cfg.validate()?;
    let truth = inst.truth()?;
    if l_set.is_empty() {
        return Err(DemixError::InvalidParameter("l_set must be nonempty".into()));
    }
    for &l in l_set {
        objective::check_index(l, inst.dims.m)?;
    }
    let recorded = |t: usize| t % cfg.record_every == 0 || t == cfg.max_iters;

    // Main sequence, aligned to the truth at every recorded iteration.
    let mut z = solver::spectral_init(inst)?;
    let mut iters = Vec::new();
    let mut aligned_main = Vec::new();
    let mut main_dist = Vec::new();
    for t in 0..=cfg.max_iters {
        if recorded(t) {
            let al = metrics::Alignment::compute(&z, truth)?;
            let aligned = DemixState::new(
                z.sources
                    .iter()
                    .zip(&al.alpha)
                    .map(|(p, a)| {
                        let inv = Complex64::new(1.0, 0.0) / a.conj();
                        SourcePair::new(p.h.map(|v| v * inv), p.x.map(|v| v * a))
                    })
                    .collect(),
            );
            iters.push(t);
            main_dist.push(metrics::dist_aligned(&z, truth, &al)?);
            aligned_main.push(aligned);
        }
        if t < cfg.max_iters {
            z = solver::wf_step(&z, inst, cfg.eta)?;
        }
    }

    let branches: Vec<Result<(Vec<f64>, bool)>> = l_set
        .par_iter()
        .map(|&l| {
            let mut zl = solver::spectral_init_excluding(inst, Some(l))?;
            let degenerate = inst.dims.m == 1
                || zl.sources.iter().any(|p| p.h.norm() == 0.0 || p.x.norm() == 0.0);
            let mut series = Vec::with_capacity(iters.len());
            let mut rec = 0;
            for t in 0..=cfg.max_iters {
                if recorded(t) {
                    let d2: f64 = zl
                        .sources
                        .iter()
                        .zip(&aligned_main[rec].sources)
                        .zip(&truth.d)
                        .map(|((p, q), d)| metrics::source_dist2(p, q, *d))
                        .sum::<Result<f64>>()?;
                    series.push(d2.sqrt());
                    rec += 1;
                }
                if t < cfg.max_iters && !degenerate {
                    zl = solver::wf_step_excluding(&zl, inst, cfg.eta, l)?;
                }
            }
            Ok((series, degenerate))
        })
        .collect();

    let mut max_loo_dist = vec![0.0f64; iters.len()];
    let mut degenerate = false;
    for b in branches {
        let (series, deg) = b?;
        degenerate |= deg;
        for (acc, v) in max_loo_dist.iter_mut().zip(series) {
            *acc = acc.max(v);
        }
    }
    Ok(LooReport { l_set: l_set.to_vec(), iters, max_loo_dist, main_dist, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentRatioSeries {
    /// `max_i |alpha_i^{t+1} / alpha_i^t - 1|` for each consecutive pair.
    pub max_ratio: Vec<f64>,
    /// `max_i |alpha_i^{t+1} / alpha_i^t - 1| / dist(z_i^t, z_i^nat)`; zero
    /// where the ratio is zero.
    pub max_quotient: Vec<f64>,
}

/// Consecutive alignment ratios from per-iteration alignments and per-source
/// squared distances (as recorded by [`solver::run`]).
pub fn alignment_ratio_series(alignments: &[Vec<Complex64>], source_dists: &[Vec<f64>]) -> AlignmentRatioSeries {
    let mut max_ratio = Vec::new();
    let mut max_quotient = Vec::new();
    for t in 0..alignments.len().saturating_sub(1) {
        let (mut worst, mut worst_q) = (0.0f64, 0.0f64);
        for (i, (next, now)) in alignments[t + 1].iter().zip(&alignments[t]).enumerate() {
            let ratio = (next / now - 1.0).norm();
            worst = worst.max(ratio);
            if ratio > 0.0 {
                let d = source_dists.get(t).and_then(|d| d.get(i)).map_or(f64::NAN, |v| v.sqrt());
                worst_q = worst_q.max(if d > 0.0 { ratio / d } else { f64::INFINITY });
            }
        }
        max_ratio.push(worst);
        max_quotient.push(worst_q);
    }
    AlignmentRatioSeries { max_ratio, max_quotient }
}

pub fn rsc_report(inst: &ProblemInstance, params: &RscParams, seed: u64) -> Result<VerifyReport> {
    let r = check_rsc(inst, params, seed)?;
    let mut notes = vec![NOISE_MODEL_NOTE.to_string()];
    if r.sampling_failures > 0 {
        notes.push(format!("{} samples abandoned after {} attempts", r.sampling_failures, params.max_attempts));
    }
    Ok(VerifyReport {
        check: "verify_rsc".into(),
        params: json!({ "dims": inst.dims, "sigma": inst.sigma, "rsc": params }),
        seed,
        metrics: serde_json::to_value(&r)?,
        pass: r.pass,
        notes,
    })
}

/// LOO check with the calibrated proxy threshold: the proximity stays below
/// `ratio * dist(z^0, z^nat)` at every recorded iteration.
pub fn loo_report(inst: &ProblemInstance, cfg: &SolverConfig, l_set: &[usize], ratio: f64) -> Result<VerifyReport> {
    let r = leave_one_out_trajectories(inst, cfg, l_set)?;
    let threshold = ratio * r.main_dist[0];
    let pass = !r.degenerate && r.max_loo_dist.iter().all(|v| *v < threshold);
    let mut notes = vec![NOISE_MODEL_NOTE.to_string()];
    if r.degenerate {
        notes.push("a leave-one-out branch is degenerate".into());
    }
    Ok(VerifyReport {
        check: "verify_loo".into(),
        params: json!({ "dims": inst.dims, "sigma": inst.sigma, "solver": cfg, "threshold_ratio": ratio }),
        seed: inst.seed,
        metrics: json!({ "threshold": threshold, "report": r }),
        pass,
        notes,
    })
}

pub fn spectral_report(s: usize, k: usize, ms: &[usize], sigma: f64, n_trials: usize, seed: u64) -> Result<VerifyReport> {
    let reports = spectral_sweep(s, k, ms, sigma, n_trials, seed)?;
    let means: Vec<f64> = reports.iter().map(|r| r.mean_deviation).collect();
    let max_z = reports.iter().map(SpectralConcentrationReport::max_z_score).fold(0.0, f64::max);
    let monotone = strictly_decreasing(&means);
    Ok(VerifyReport {
        check: "verify_spectral".into(),
        params: json!({ "s": s, "K": k, "m_values": ms, "sigma": sigma, "trials": n_trials }),
        seed,
        metrics: json!({ "table": reports, "monotone": monotone, "max_mean_z_score": max_z }),
        pass: monotone,
        notes: vec![NOISE_MODEL_NOTE.to_string()],
    })
}
