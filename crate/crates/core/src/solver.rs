//! Spectral initialization and the scaled Wirtinger-flow iteration.

use nalgebra::SVD;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::metrics::{self, Alignment};
use crate::objective::{self, gradient_from_residuals, DemixState, Gradient};
use crate::problem::{ProblemInstance, SourcePair};
use crate::{CMatrix, CVector};

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 5_000;
const DENSE_FALLBACK_MAX_K: usize = 64;
const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta: f64,
    pub max_iters: usize,
    /// Relative-error stopping threshold; 0 disables early stopping.
    #[serde(default)]
    pub stop_tol: f64,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl SolverConfig {
    pub fn new(eta: f64, max_iters: usize) -> Self {
        Self { eta, max_iters, stop_tol: 0.0, record_every: 1, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(DemixError::InvalidParameter(format!("eta must be positive, got {}", self.eta)));
        }
        if self.max_iters == 0 {
            return Err(DemixError::InvalidParameter("max_iters must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(DemixError::InvalidParameter("record_every must be at least 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(DemixError::InvalidParameter(format!("stop_tol must be >= 0, got {}", self.stop_tol)));
        }
        Ok(())
    }
}

/// Metrics of one recorded iterate. Truth-dependent fields are `None` when
/// the instance carries no ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub iter: usize,
    pub loss: f64,
    pub relative_error: Option<f64>,
    pub dist: Option<f64>,
    pub incoherence_a: Option<f64>,
    pub incoherence_b: Option<f64>,
    /// `|alpha_i^t / alpha_i^{t-1} - 1|` per source; zeros at iteration 0.
    pub alignment_ratios: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn max_alignment_ratio(&self) -> Option<f64> {
        self.alignment_ratios.iter().copied().reduce(f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: DemixState,
    pub trajectory: Vec<TrajectoryRecord>,
    /// Alignment parameters of every iterate (empty without ground truth).
    pub alignments: Vec<Vec<Complex64>>,
    /// Per-source `dist^2(z_i^t, z_i^nat)` of every iterate.
    pub source_dists: Vec<Vec<f64>>,
    /// Number of gradient steps taken.
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SingularTriple {
    pub value: f64,
    pub left: CVector,
    pub right: CVector,
    /// Power iterations used; `None` when the dense fallback produced the triple.
    pub power_iterations: Option<usize>,
}

/// Leading singular triple by power iteration on `M^* M` from the normalized
/// all-ones vector, falling back to a dense SVD for `K <= 64`.
pub fn leading_singular_triple(m: &CMatrix) -> Result<SingularTriple> {
    if m.is_empty() {
        return Err(DemixError::Dimension("empty matrix".into()));
    }
    if m.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        let mut left = CVector::zeros(m.nrows());
        let mut right = CVector::zeros(m.ncols());
        left[0] = Complex64::new(1.0, 0.0);
        right[0] = Complex64::new(1.0, 0.0);
        return Ok(SingularTriple { value: 0.0, left, right, power_iterations: Some(0) });
    }
    match power_iteration(m) {
        Some(t) => Ok(t),
        None if m.nrows().max(m.ncols()) <= DENSE_FALLBACK_MAX_K => dense_triple(m),
        None => Err(DemixError::NoConvergence),
    }
}

fn power_iteration(m: &CMatrix) -> Option<SingularTriple> {
    let gram = m.ad_mul(m);
    let n = gram.nrows();
    let mut v = CVector::from_element(n, Complex64::new(1.0 / (n as f64).sqrt(), 0.0));
    let mut lambda = 0.0;
    for it in 1..=POWER_MAX_ITERS {
        let w = &gram * &v;
        let next_lambda = v.dotc(&w).re;
        let residual = (&w - v.scale(next_lambda)).norm();
        let norm = w.norm();
        if norm == 0.0 {
            return None;
        }
        // Converged once the eigenpair residual and the eigenvalue change are
        // both negligible relative to the eigenvalue.
        if residual <= POWER_TOL * next_lambda && (next_lambda - lambda).abs() <= POWER_TOL * next_lambda {
            return Some(triple_from_right(m, v, Some(it)));
        }
        lambda = next_lambda;
        v = w.unscale(norm);
    }
    None
}

fn triple_from_right(m: &CMatrix, right: CVector, iters: Option<usize>) -> SingularTriple {
    let mv = m * &right;
    let value = mv.norm();
    SingularTriple { value, left: mv.unscale(value), right, power_iterations: iters }
}

fn dense_triple(m: &CMatrix) -> Result<SingularTriple> {
    let svd = SVD::new(m.clone(), false, true);
    let v_t = svd.v_t.ok_or(DemixError::NoConvergence)?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(DemixError::NoConvergence)?;
    let right = v_t.row(idx).adjoint();
    Ok(triple_from_right(m, right, None))
}

/// `(sqrt(sigma) u, sqrt(sigma) v)` from the leading triple of `m`, with the
/// phase fixed so that the largest-magnitude entry of `u` (lowest index on
/// ties) is real and positive.
pub fn init_from_matrix(m: &CMatrix) -> Result<SourcePair> {
    let t = leading_singular_triple(m)?;
    let mut pivot = 0;
    for (n, v) in t.left.iter().enumerate() {
        if v.norm() > t.left[pivot].norm() {
            pivot = n;
        }
    }
    let p = t.left[pivot];
    let rot = if p.norm() > 0.0 { p.conj() / p.norm() } else { Complex64::new(1.0, 0.0) };
    let scale = t.value.sqrt();
    Ok(SourcePair::new(t.left.map(|v| v * rot * scale), t.right.map(|v| v * rot * scale)))
}

/// `M_i = sum_j y_j b_j a_ij^*`, optionally omitting measurement `exclude`.
pub fn backprojection(inst: &ProblemInstance, i: usize, exclude: Option<usize>) -> Result<CMatrix> {
    objective::check_index(i, inst.dims.s)?;
    if let Some(l) = exclude {
        objective::check_index(l, inst.dims.m)?;
    }
    let mut weighted = inst.b.clone();
    for (j, mut col) in weighted.column_iter_mut().enumerate() {
        if Some(j) == exclude {
            col.fill(Complex64::new(0.0, 0.0));
        } else {
            col *= inst.y[j];
        }
    }
    Ok(weighted * inst.a[i].adjoint())
}

pub fn spectral_init(inst: &ProblemInstance) -> Result<DemixState> {
    spectral_init_excluding(inst, None)
}

/// Spectral initialization from the back-projections with one measurement
/// removed (the leave-one-out start).
pub fn spectral_init_excluding(inst: &ProblemInstance, exclude: Option<usize>) -> Result<DemixState> {
    let sources = (0..inst.dims.s)
        .into_par_iter()
        .map(|i| backprojection(inst, i, exclude).and_then(|m| init_from_matrix(&m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DemixState::new(sources))
}

/// One simultaneous update, both scalings taken from the current iterate:
/// `h_i -= eta / |x_i|^2 grad_h_i`, `x_i -= eta / |h_i|^2 grad_x_i`.
pub fn wf_step(state: &DemixState, inst: &ProblemInstance, eta: f64) -> Result<DemixState> {
    let g = objective::wirtinger_gradient(state, inst)?;
    apply_step(state, &g, eta)
}

/// Step driven by the leave-one-out gradient.
pub fn wf_step_excluding(state: &DemixState, inst: &ProblemInstance, eta: f64, l: usize) -> Result<DemixState> {
    let g = objective::leave_one_out_gradient(state, inst, l)?;
    apply_step(state, &g, eta)
}

pub(crate) fn apply_step(state: &DemixState, g: &Gradient, eta: f64) -> Result<DemixState> {
    let sources = state
        .sources
        .iter()
        .zip(g)
        .enumerate()
        .map(|(i, (p, gi))| {
            let (hn, xn) = (p.h.norm_squared(), p.x.norm_squared());
            if hn == 0.0 || xn == 0.0 {
                return Err(DemixError::DegenerateIterate { source_index: i });
            }
            Ok(SourcePair::new(&p.h - gi.h.scale(eta / xn), &p.x - gi.x.scale(eta / hn)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DemixState::new(sources))
}

/// Spectral initialization followed by Wirtinger-flow steps.
pub fn run(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<RunOutput> {
    let (out, err) = run_partial(inst, cfg);
    match err {
        Some(e) => Err(e),
        None => Ok(out.expect("run without error produces output")),
    }
}

/// Like [`run`], but keeps the trajectory recorded before a failure.
pub fn run_partial(inst: &ProblemInstance, cfg: &SolverConfig) -> (Option<RunOutput>, Option<DemixError>) {
    if let Err(e) = cfg.validate() {
        return (None, Some(e));
    }
    let init = match spectral_init(inst) {
        Ok(s) => s,
        Err(e) => return (None, Some(e)),
    };
    run_from(inst, cfg, init)
}

/// Iterates from a given starting point; the start is iterate 0.
pub fn run_from(
    inst: &ProblemInstance,
    cfg: &SolverConfig,
    start: DemixState,
) -> (Option<RunOutput>, Option<DemixError>) {
    if let Err(e) = cfg.validate() {
        return (None, Some(e));
    }
    let truth = inst.truth.as_ref();
    let mut out = RunOutput {
        state: start,
        trajectory: Vec::new(),
        alignments: Vec::new(),
        source_dists: Vec::new(),
        iterations: 0,
    };
    let mut initial_loss = None;
    for t in 0..=cfg.max_iters {
        let r = match objective::residuals(&out.state, inst) {
            Ok(r) => r,
            Err(e) => return (Some(out), Some(e)),
        };
        let loss = r.norm_squared();
        let base = *initial_loss.get_or_insert(loss);
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * base.max(f64::MIN_POSITIVE) {
            return (Some(out), Some(DemixError::Diverged { iter: t, loss }));
        }

        let mut ratios = vec![0.0; inst.dims.s];
        let mut alignment = None;
        if let Some(truth) = truth {
            match Alignment::compute(&out.state, truth) {
                Ok(al) => {
                    if let Some(prev) = out.alignments.last() {
                        for (r, (a, b)) in ratios.iter_mut().zip(al.alpha.iter().zip(prev)) {
                            *r = (a / b - 1.0).norm();
                        }
                    }
                    let dists = al
                        .alpha
                        .iter()
                        .zip(&out.state.sources)
                        .zip(&truth.sources)
                        .zip(&truth.d)
                        .map(|(((a, p), s), d)| metrics::alignment_objective(*a, &p.h, &p.x, &s.h, &s.x) / d)
                        .collect();
                    out.alignments.push(al.alpha.clone());
                    out.source_dists.push(dists);
                    alignment = Some(al);
                }
                Err(DemixError::ZeroVector(_)) => {
                    let source_index = zero_source(&out.state);
                    return (Some(out), Some(DemixError::DegenerateIterate { source_index }));
                }
                Err(e) => return (Some(out), Some(e)),
            }
        }

        let last = t == cfg.max_iters;
        if t % cfg.record_every == 0 || last {
            let rec = match record(&out, inst, t, loss, alignment.as_ref(), ratios) {
                Ok(rec) => rec,
                Err(e) => return (Some(out), Some(e)),
            };
            let stop = cfg.stop_tol > 0.0 && rec.relative_error.is_some_and(|e| e <= cfg.stop_tol);
            out.trajectory.push(rec);
            if stop {
                break;
            }
        }
        if last {
            break;
        }
        let g = gradient_from_residuals(&out.state, inst, &r, None);
        match apply_step(&out.state, &g, cfg.eta) {
            Ok(next) => out.state = next,
            Err(e) => return (Some(out), Some(e)),
        }
        out.iterations = t + 1;
    }
    (Some(out), None)
}

fn zero_source(state: &DemixState) -> usize {
    state.sources.iter().position(|p| p.h.norm() == 0.0 || p.x.norm() == 0.0).unwrap_or(0)
}

fn record(
    out: &RunOutput,
    inst: &ProblemInstance,
    iter: usize,
    loss: f64,
    alignment: Option<&Alignment>,
    alignment_ratios: Vec<f64>,
) -> Result<TrajectoryRecord> {
    let mut rec = TrajectoryRecord {
        iter,
        loss,
        relative_error: None,
        dist: None,
        incoherence_a: None,
        incoherence_b: None,
        alignment_ratios,
    };
    if let (Some(truth), Some(al)) = (inst.truth.as_ref(), alignment) {
        rec.relative_error = Some(metrics::relative_error(&out.state, truth)?);
        rec.dist = out.source_dists.last().map(|d| d.iter().sum::<f64>().sqrt());
        let (a, b) = metrics::incoherence_measures(&out.state, truth, inst, al)?;
        rec.incoherence_a = Some(a);
        rec.incoherence_b = Some(b);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Dimensions;
    use crate::rng::{self, Domain};

    fn random_matrix(k: usize, seed: u64) -> CMatrix {
        let mut r = rng::stream(seed, Domain::Verify, 0);
        CMatrix::from_vec(k, k, rng::complex_normal_vec(&mut r, k * k))
    }

    #[test]
    fn power_iteration_matches_dense_svd() {
        for seed in 0..5 {
            let m = random_matrix(6, seed);
            let t = leading_singular_triple(&m).unwrap();
            assert!(t.power_iterations.is_some());
            let svd = SVD::new(m.clone(), true, true);
            let (idx, s1) = svd.singular_values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            assert!((t.value - s1).abs() <= 1e-10 * s1);
            let u = svd.u.unwrap().column(idx).into_owned();
            let v = svd.v_t.unwrap().row(idx).adjoint();
            // Align phases before comparing.
            let phase = u.dotc(&t.left);
            let phase = phase / phase.norm();
            assert!((t.left.clone() - u.map(|z| z * phase)).norm() <= 1e-8);
            assert!((t.right.clone() - v.map(|z| z * phase)).norm() <= 1e-8);
        }
    }

    #[test]
    fn rank_one_matrix_recovers_factors() {
        let mut r = rng::stream(3, Domain::Verify, 1);
        let h = CVector::from_vec(rng::complex_normal_vec(&mut r, 5));
        let x = CVector::from_vec(rng::complex_normal_vec(&mut r, 5));
        let (h, x) = (h.unscale(h.norm()).scale(1.5), x.unscale(x.norm()).scale(1.5));
        let pair = init_from_matrix(&(&h * x.adjoint())).unwrap();
        let phase = h.dotc(&pair.h);
        let phase = phase / phase.norm();
        assert!((&pair.h - h.map(|z| z * phase)).norm() <= 1e-10);
        assert!((&pair.x - x.map(|z| z * phase)).norm() <= 1e-10);
        // Gauge: largest entry of the left vector is real positive.
        let big = pair.h.iter().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
        assert!(big.im.abs() < 1e-14 && big.re > 0.0);
    }

    #[test]
    fn spectral_init_concentrates_with_many_measurements() {
        let inst = ProblemInstance::generate(Dimensions::new(1, 1600, 8).unwrap(), 1.0, 0.0, 4).unwrap();
        let z = spectral_init(&inst).unwrap();
        let err = metrics::relative_error(&z, inst.truth().unwrap()).unwrap();
        assert!(err <= 0.2, "relative error {err}");
    }

    #[test]
    fn backprojection_single_term() {
        let e1 = CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let inst =
            ProblemInstance::from_parts(vec![e1.clone()], e1, CVector::from_element(1, Complex64::new(2.5, -1.0)), 0.0, 0)
                .unwrap();
        let m = backprojection(&inst, 0, None).unwrap();
        assert_eq!(m[(0, 0)], Complex64::new(2.5, -1.0));
        assert_eq!(backprojection(&inst, 0, Some(0)).unwrap()[(0, 0)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn loo_backprojection_removes_one_term() {
        let inst = ProblemInstance::generate(Dimensions::new(2, 30, 4).unwrap(), 1.0, 0.1, 8).unwrap();
        for l in [0, 7, 29] {
            let full = backprojection(&inst, 1, None).unwrap();
            let loo = backprojection(&inst, 1, Some(l)).unwrap();
            let term = (inst.b.column(l) * inst.a[1].column(l).adjoint()).map(|z| z * inst.y[l]);
            assert!((full - loo - term).norm() <= 1e-13);
        }
    }

    #[test]
    fn step_fixed_point_and_zero_eta() {
        let inst = ProblemInstance::generate(Dimensions::new(2, 30, 3).unwrap(), 1.0, 0.0, 2).unwrap();
        let z = DemixState::from_truth(&inst).unwrap();
        assert_eq!(wf_step(&z, &inst, 0.3).unwrap(), z);
        let noisy = ProblemInstance::generate(Dimensions::new(2, 30, 3).unwrap(), 1.0, 0.5, 2).unwrap();
        let z = DemixState::from_truth(&noisy).unwrap();
        assert_eq!(wf_step(&z, &noisy, 0.0).unwrap(), z);
    }

    #[test]
    fn step_rejects_zero_norm_source() {
        let inst = ProblemInstance::generate(Dimensions::new(2, 30, 3).unwrap(), 1.0, 0.0, 2).unwrap();
        let mut z = DemixState::from_truth(&inst).unwrap();
        z.sources[1].x.fill(Complex64::new(0.0, 0.0));
        assert!(matches!(wf_step(&z, &inst, 0.1), Err(DemixError::DegenerateIterate { source_index: 1 })));
    }

    #[test]
    fn one_step_from_perturbed_truth_decreases_loss() {
        let inst = ProblemInstance::generate(Dimensions::new(1, 40, 2).unwrap(), 1.0, 0.0, 6).unwrap();
        let mut z = DemixState::from_truth(&inst).unwrap();
        let mut r = rng::stream(6, Domain::Verify, 5);
        z.sources[0].h += CVector::from_vec(rng::complex_normal_vec(&mut r, 2)).scale(0.1);
        z.sources[0].x += CVector::from_vec(rng::complex_normal_vec(&mut r, 2)).scale(0.1);
        let before = objective::loss(&z, &inst).unwrap();
        let after = objective::loss(&wf_step(&z, &inst, 0.1).unwrap(), &inst).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0.1, 0).validate().is_err());
        assert!(SolverConfig::new(0.0, 5).validate().is_err());
        assert!(SolverConfig { record_every: 0, ..SolverConfig::new(0.1, 5) }.validate().is_err());
        let inst = ProblemInstance::generate(Dimensions::new(1, 8, 2).unwrap(), 1.0, 0.0, 1).unwrap();
        assert!(matches!(run(&inst, &SolverConfig::new(0.1, 0)), Err(DemixError::InvalidParameter(_))));
    }

    #[test]
    fn run_from_truth_stays_at_truth() {
        let inst = ProblemInstance::generate(Dimensions::new(2, 40, 3).unwrap(), 1.0, 0.0, 3).unwrap();
        let z = DemixState::from_truth(&inst).unwrap();
        let (out, err) = run_from(&inst, &SolverConfig::new(0.1, 20), z.clone());
        assert!(err.is_none());
        let out = out.unwrap();
        assert_eq!(out.state, z);
        assert_eq!(out.trajectory.len(), 21);
        for rec in &out.trajectory {
            assert_eq!(rec.loss, 0.0);
            assert!(rec.alignment_ratios.iter().all(|r| *r == 0.0));
        }
    }

    #[test]
    fn run_records_and_stops_early() {
        let inst = ProblemInstance::generate(Dimensions::new(2, 400, 4).unwrap(), 1.0, 0.0, 5).unwrap();
        let cfg = SolverConfig { stop_tol: 1e-6, record_every: 5, ..SolverConfig::new(0.2, 2000) };
        let out = run(&inst, &cfg).unwrap();
        let last = out.trajectory.last().unwrap();
        assert!(last.relative_error.unwrap() <= 1e-6);
        assert!(last.iter < 2000);
        assert_eq!(out.trajectory[0].iter, 0);
        assert!(out.trajectory.windows(2).all(|w| w[1].iter > w[0].iter));
        assert!(out.trajectory.iter().all(|r| r.iter % 5 == 0));
        assert_eq!(out.alignments.len(), last.iter + 1);
    }

    #[test]
    fn run_is_deterministic() {
        let inst = ProblemInstance::generate(Dimensions::new(2, 200, 4).unwrap(), 1.0, 0.05, 5).unwrap();
        let cfg = SolverConfig::new(0.2, 50);
        let a = run(&inst, &cfg).unwrap();
        let b = run(&inst, &cfg).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn divergence_is_reported() {
        let inst = ProblemInstance::generate(Dimensions::new(2, 60, 4).unwrap(), 1.0, 0.0, 5).unwrap();
        let err = run(&inst, &SolverConfig::new(50.0, 200)).unwrap_err();
        assert!(matches!(err, DemixError::Diverged { .. } | DemixError::DegenerateIterate { .. }), "{err}");
    }

    #[test]
    fn global_phase_commutes_with_step() {
        let inst = ProblemInstance::generate(Dimensions::new(2, 80, 3).unwrap(), 1.0, 0.1, 9).unwrap();
        let z = spectral_init(&inst).unwrap();
        let c = Complex64::from_polar(1.0, 0.9);
        let rot = |s: &DemixState| {
            DemixState::new(s.sources.iter().map(|p| SourcePair::new(p.h.map(|v| v * c), p.x.map(|v| v * c))).collect())
        };
        let (mut a, mut b) = (z.clone(), rot(&z));
        for _ in 0..10 {
            a = wf_step(&a, &inst, 0.2).unwrap();
            b = wf_step(&b, &inst, 0.2).unwrap();
            let (la, lb) = (objective::loss(&a, &inst).unwrap(), objective::loss(&b, &inst).unwrap());
            assert!((la - lb).abs() <= 1e-10 * (1.0 + la));
        }
        for (p, q) in rot(&a).sources.iter().zip(&b.sources) {
            assert!((&p.h - &q.h).norm() <= 1e-10 && (&p.x - &q.x).norm() <= 1e-10);
        }
    }
}
