//! Alignment, distance, relative error and incoherence measures.

use num_complex::Complex64;

use crate::error::{DemixError, Result};
use crate::objective::DemixState;
use crate::problem::{GroundTruth, ProblemInstance, SourcePair};
use crate::{CMatrix, CVector};

const LOG_BETA_MIN: f64 = -13.815_510_557_964_274; // ln 1e-6
const LOG_BETA_MAX: f64 = 13.815_510_557_964_274;
const GRID_POINTS: usize = 241;
const LOG_BETA_TOL: f64 = 1e-12;

/// Per-source alignment parameters `alpha_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub alpha: Vec<Complex64>,
}

impl Alignment {
    /// Aligns every source of `state` to the matching truth source.
    pub fn compute(state: &DemixState, truth: &GroundTruth) -> Result<Self> {
        check_pairs(state, truth)?;
        let alpha = state
            .sources
            .iter()
            .zip(&truth.sources)
            .map(|(p, t)| align_source(&p.h, &p.x, &t.h, &t.x))
            .collect::<Result<_>>()?;
        Ok(Self { alpha })
    }
}

/// `|h / conj(alpha) - h_ref|^2 + |alpha x - x_ref|^2`.
pub fn alignment_objective(alpha: Complex64, h: &CVector, x: &CVector, h_ref: &CVector, x_ref: &CVector) -> f64 {
    let inv = Complex64::new(1.0, 0.0) / alpha.conj();
    let dh: f64 = h.iter().zip(h_ref.iter()).map(|(a, b)| (a * inv - b).norm_sqr()).sum();
    let dx: f64 = x.iter().zip(x_ref.iter()).map(|(a, b)| (a * alpha - b).norm_sqr()).sum();
    dh + dx
}

/// The alignment objective reduced to `beta = |alpha|`; the phase has been
/// optimized in closed form.
struct Reduced {
    hh: f64,
    xx: f64,
    /// `h_ref^* h`
    p: Complex64,
    /// `x_ref^* x`
    q: Complex64,
    constant: f64,
}

impl Reduced {
    fn new(h: &CVector, x: &CVector, h_ref: &CVector, x_ref: &CVector) -> Self {
        Self {
            hh: h.norm_squared(),
            xx: x.norm_squared(),
            p: h_ref.dotc(h),
            q: x_ref.dotc(x),
            constant: h_ref.norm_squared() + x_ref.norm_squared(),
        }
    }

    fn w(&self, beta: f64) -> Complex64 {
        self.p / beta + self.q * beta
    }

    fn value(&self, t: f64) -> f64 {
        let beta = t.exp();
        self.hh / (beta * beta) + beta * beta * self.xx - 2.0 * self.w(beta).norm() + self.constant
    }

    /// Derivative with respect to `t = ln beta`.
    fn slope(&self, t: f64) -> f64 {
        let beta = t.exp();
        let w = self.w(beta);
        let dw = -self.p / (beta * beta) + self.q;
        let dabs = if w.norm() > 0.0 { (w.conj() * dw).re / w.norm() } else { 0.0 };
        beta * (-2.0 * self.hh / beta.powi(3) + 2.0 * beta * self.xx - 2.0 * dabs)
    }

    /// Optimal phase for a given modulus: `alpha = beta * exp(-i arg w)`.
    fn alpha(&self, beta: f64) -> Complex64 {
        let w = self.w(beta);
        if w.norm() == 0.0 {
            Complex64::new(beta, 0.0)
        } else {
            (w.conj() / w.norm()) * beta
        }
    }

    fn refine(&self, mut lo: f64, mut hi: f64) -> f64 {
        let (slo, shi) = (self.slope(lo), self.slope(hi));
        if slo <= 0.0 && shi >= 0.0 {
            while hi - lo > LOG_BETA_TOL {
                let mid = 0.5 * (lo + hi);
                if self.slope(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        // No sign change across the bracket: golden-section search instead.
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        while b - a > LOG_BETA_TOL {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if self.value(c) < self.value(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }
}

/// Global minimizer of the alignment objective over `alpha` in `C`.
///
/// The phase is optimal in closed form for each modulus; the modulus is found
/// by bracketing the minima of the reduced one-dimensional objective on a log
/// grid over `[1e-6, 1e6]`, bisecting on its derivative inside each bracket,
/// and keeping the best candidate (including the starts `|x_ref|/|x|` and 1).
pub fn align_source(h: &CVector, x: &CVector, h_ref: &CVector, x_ref: &CVector) -> Result<Complex64> {
    check_inputs(h, x, h_ref, x_ref)?;
    let red = Reduced::new(h, x, h_ref, x_ref);
    let step = (LOG_BETA_MAX - LOG_BETA_MIN) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|n| LOG_BETA_MIN + step * n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| red.value(t)).collect();

    let mut candidates = vec![0.0, (x_ref.norm() / x.norm()).ln()];
    for n in 0..GRID_POINTS {
        let left = if n == 0 { f64::INFINITY } else { vals[n - 1] };
        let right = if n + 1 == GRID_POINTS { f64::INFINITY } else { vals[n + 1] };
        if vals[n] <= left && vals[n] <= right {
            let lo = grid[n.saturating_sub(1)];
            let hi = grid[(n + 1).min(GRID_POINTS - 1)];
            candidates.push(red.refine(lo, hi));
        }
    }
    let best = candidates
        .into_iter()
        .filter(|t| t.is_finite())
        .map(|t| t.clamp(LOG_BETA_MIN, LOG_BETA_MAX))
        .min_by(|a, b| red.value(*a).total_cmp(&red.value(*b)))
        .unwrap_or(0.0);
    Ok(red.alpha(best.exp()))
}

/// Minimizer over unit-modulus `alpha`.
pub fn align_source_unit(h: &CVector, x: &CVector, h_ref: &CVector, x_ref: &CVector) -> Result<Complex64> {
    check_inputs(h, x, h_ref, x_ref)?;
    Ok(Reduced::new(h, x, h_ref, x_ref).alpha(1.0))
}

fn check_inputs(h: &CVector, x: &CVector, h_ref: &CVector, x_ref: &CVector) -> Result<()> {
    if h.len() != h_ref.len() || x.len() != x_ref.len() {
        return Err(DemixError::Shape("alignment pair lengths differ".into()));
    }
    if h.norm() == 0.0 {
        return Err(DemixError::ZeroVector("h"));
    }
    if x.norm() == 0.0 {
        return Err(DemixError::ZeroVector("x"));
    }
    Ok(())
}

fn check_pairs(state: &DemixState, truth: &GroundTruth) -> Result<()> {
    if state.s() != truth.sources.len() {
        return Err(DemixError::Shape(format!(
            "state has {} sources, truth has {}",
            state.s(),
            truth.sources.len()
        )));
    }
    for (i, (p, t)) in state.sources.iter().zip(&truth.sources).enumerate() {
        if p.h.len() != t.h.len() || p.x.len() != t.x.len() {
            return Err(DemixError::Shape(format!("source {i} length differs from truth")));
        }
    }
    Ok(())
}

/// Squared per-source distances `dist^2(z_i, z_i^ref)`, normalized by `d_i`.
/// A source with a zero factor is compared as the zero pair.
pub fn source_dist2(pair: &SourcePair, reference: &SourcePair, d: f64) -> Result<f64> {
    if pair.h.norm() == 0.0 || pair.x.norm() == 0.0 {
        return Ok((reference.h.norm_squared() + reference.x.norm_squared()) / d);
    }
    let alpha = align_source(&pair.h, &pair.x, &reference.h, &reference.x)?;
    Ok(alignment_objective(alpha, &pair.h, &pair.x, &reference.h, &reference.x) / d)
}

pub fn dist(state: &DemixState, truth: &GroundTruth) -> Result<f64> {
    Ok(source_dists(state, truth)?.iter().sum::<f64>().sqrt())
}

/// Per-source `dist^2(z_i, z_i^natural)`.
pub fn source_dists(state: &DemixState, truth: &GroundTruth) -> Result<Vec<f64>> {
    check_pairs(state, truth)?;
    state
        .sources
        .iter()
        .zip(&truth.sources)
        .zip(&truth.d)
        .map(|((p, t), d)| source_dist2(p, t, *d))
        .collect()
}

/// `dist` with precomputed alignments.
pub fn dist_aligned(state: &DemixState, truth: &GroundTruth, alignment: &Alignment) -> Result<f64> {
    check_alignment(state, alignment)?;
    let total: f64 = state
        .sources
        .iter()
        .zip(&truth.sources)
        .zip(&truth.d)
        .zip(&alignment.alpha)
        .map(|(((p, t), d), a)| alignment_objective(*a, &p.h, &p.x, &t.h, &t.x) / d)
        .sum();
    Ok(total.sqrt())
}

/// `sum_i |h_i x_i^* - h_i^nat x_i^nat*|_F / sum_i |h_i^nat x_i^nat*|_F`.
pub fn relative_error(state: &DemixState, truth: &GroundTruth) -> Result<f64> {
    check_pairs(state, truth)?;
    let (num, den) = state.sources.iter().zip(&truth.sources).fold((0.0, 0.0), |(num, den), (p, t)| {
        let target: CMatrix = t.outer();
        (num + (p.outer() - &target).norm(), den + target.norm())
    });
    Ok(num / den)
}

/// Smallest `mu` with `|b_j^* h_i| <= mu |h_i| / sqrt(m)` for all `i, j`.
pub fn incoherence_mu(truth: &GroundTruth, b: &CMatrix) -> Result<f64> {
    if b.nrows() != truth.k() {
        return Err(DemixError::Shape(format!("B has {} rows, truth has K={}", b.nrows(), truth.k())));
    }
    let m = b.ncols() as f64;
    let worst = truth
        .sources
        .iter()
        .map(|p| b.ad_mul(&p.h).iter().map(|v| v.norm()).fold(0.0, f64::max) / p.h.norm())
        .fold(0.0, f64::max);
    Ok(m.sqrt() * worst)
}

/// `(inc_a, inc_b)`: the largest `|a_ij^*(alpha_i x_i - x_i^nat)| / |x_i^nat|`
/// and `|b_j^* h_i / conj(alpha_i)| / |h_i^nat|` over all `i, j`.
pub fn incoherence_measures(
    state: &DemixState,
    truth: &GroundTruth,
    inst: &ProblemInstance,
    alignment: &Alignment,
) -> Result<(f64, f64)> {
    check_pairs(state, truth)?;
    check_alignment(state, alignment)?;
    let mut inc_a = 0.0f64;
    let mut inc_b = 0.0f64;
    for (((p, t), ai), alpha) in state.sources.iter().zip(&truth.sources).zip(&inst.a).zip(&alignment.alpha) {
        let dx = p.x.map(|v| v * alpha) - &t.x;
        let a_proj = ai.ad_mul(&dx).iter().map(|v| v.norm()).fold(0.0, f64::max);
        inc_a = inc_a.max(a_proj / t.x.norm());
        let inv = Complex64::new(1.0, 0.0) / alpha.conj();
        let hs = p.h.map(|v| v * inv);
        let b_proj = inst.b.ad_mul(&hs).iter().map(|v| v.norm()).fold(0.0, f64::max);
        inc_b = inc_b.max(b_proj / t.h.norm());
    }
    Ok((inc_a, inc_b))
}

fn check_alignment(state: &DemixState, alignment: &Alignment) -> Result<()> {
    if alignment.alpha.len() != state.s() {
        return Err(DemixError::MissingAlignment { expected: state.s(), got: alignment.alpha.len() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Dimensions;
    use crate::rng::{self, Domain};
    use proptest::prelude::*;

    fn cv(seed: u64, idx: u64, k: usize) -> CVector {
        let mut r = rng::stream(seed, Domain::Verify, idx);
        CVector::from_vec(rng::complex_normal_vec(&mut r, k))
    }

    /// 2-D grid over (log beta, phase) followed by a shrinking pattern search.
    pub(crate) fn grid_oracle(h: &CVector, x: &CVector, hr: &CVector, xr: &CVector) -> f64 {
        let obj = |lb: f64, ph: f64| alignment_objective(Complex64::from_polar(lb.exp(), ph), h, x, hr, xr);
        let (mut best_lb, mut best_ph, mut best) = (0.0, 0.0, f64::INFINITY);
        for a in 0..=400 {
            let lb = -7.0 + 14.0 * a as f64 / 400.0;
            for b in 0..256 {
                let ph = 2.0 * std::f64::consts::PI * b as f64 / 256.0;
                let v = obj(lb, ph);
                if v < best {
                    (best_lb, best_ph, best) = (lb, ph, v);
                }
            }
        }
        let mut step = 0.05;
        while step > 1e-14 {
            let mut moved = false;
            for (dl, dp) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                let v = obj(best_lb + dl, best_ph + dp);
                if v < best {
                    (best_lb, best_ph, best) = (best_lb + dl, best_ph + dp, v);
                    moved = true;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        best
    }

    #[test]
    fn identity_alignment() {
        let (h, x) = (cv(1, 0, 4), cv(1, 1, 4));
        let a = align_source(&h, &x, &h, &x).unwrap();
        assert!((a - Complex64::new(1.0, 0.0)).norm() < 1e-10);
        assert!(alignment_objective(a, &h, &x, &h, &x) < 1e-18);
        let u = align_source_unit(&h, &x, &h, &x).unwrap();
        assert!((u - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn exact_rescaling_is_recovered() {
        let (hr, xr) = (cv(2, 0, 3), cv(2, 1, 3));
        let a = align_source(&hr.scale(2.0), &xr.scale(0.5), &hr, &xr).unwrap();
        assert!((a - Complex64::new(2.0, 0.0)).norm() < 1e-9);
        let c = Complex64::from_polar(0.7, 1.1);
        let h = hr.map(|v| v * c);
        let x = xr.map(|v| v / c.conj());
        let a = align_source(&h, &x, &hr, &xr).unwrap();
        assert!(alignment_objective(a, &h, &x, &hr, &xr) < 1e-18);
    }

    #[test]
    fn random_pairs_match_grid_oracle() {
        for n in 0..5 {
            let (h, x, hr, xr) = (cv(3, 4 * n, 3), cv(3, 4 * n + 1, 3), cv(3, 4 * n + 2, 3), cv(3, 4 * n + 3, 3));
            let a = align_source(&h, &x, &hr, &xr).unwrap();
            let ours = alignment_objective(a, &h, &x, &hr, &xr);
            assert!(ours <= grid_oracle(&h, &x, &hr, &xr) + 1e-9);
        }
    }

    #[test]
    fn unit_alignment_matches_phase_grid() {
        for n in 0..5 {
            let (h, x, hr, xr) = (cv(4, 4 * n, 3), cv(4, 4 * n + 1, 3), cv(4, 4 * n + 2, 3), cv(4, 4 * n + 3, 3));
            let a = align_source_unit(&h, &x, &hr, &xr).unwrap();
            assert!((a.norm() - 1.0).abs() < 1e-14);
            let ours = alignment_objective(a, &h, &x, &hr, &xr);
            let mut best = f64::INFINITY;
            for b in 0..4096 {
                let ph = 2.0 * std::f64::consts::PI * b as f64 / 4096.0;
                best = best.min(alignment_objective(Complex64::from_polar(1.0, ph), &h, &x, &hr, &xr));
            }
            assert!(ours <= best + 1e-9);
        }
    }

    #[test]
    fn phase_rotated_pair_uses_oracle_minimizer() {
        let (hr, xr) = (cv(5, 0, 3), cv(5, 1, 3));
        let rot = Complex64::from_polar(1.0, 0.8);
        let h = hr.map(|v| v * rot);
        let x = xr.map(|v| v / rot);
        let a = align_source_unit(&h, &x, &hr, &xr).unwrap();
        let ours = alignment_objective(a, &h, &x, &hr, &xr);
        let mut best = f64::INFINITY;
        for b in 0..4096 {
            let ph = 2.0 * std::f64::consts::PI * b as f64 / 4096.0;
            best = best.min(alignment_objective(Complex64::from_polar(1.0, ph), &h, &x, &hr, &xr));
        }
        assert!(ours <= best + 1e-9);
    }

    #[test]
    fn zero_inputs_are_rejected() {
        let z = CVector::zeros(2);
        let v = cv(6, 0, 2);
        assert!(matches!(align_source(&z, &v, &v, &v), Err(DemixError::ZeroVector("h"))));
        assert!(matches!(align_source_unit(&v, &z, &v, &v), Err(DemixError::ZeroVector("x"))));
    }

    fn instance() -> ProblemInstance {
        ProblemInstance::generate(Dimensions::new(3, 40, 4).unwrap(), 2.0, 0.0, 17).unwrap()
    }

    fn rescaled(state: &DemixState, c: Complex64) -> DemixState {
        let mut out = state.clone();
        for p in &mut out.sources {
            p.h = p.h.map(|v| v * c);
            p.x = p.x.map(|v| v / c.conj());
        }
        out
    }

    #[test]
    fn dist_and_error_at_truth() {
        let inst = instance();
        let truth = inst.truth().unwrap();
        let z = DemixState::from_truth(&inst).unwrap();
        assert!(dist(&z, truth).unwrap() < 1e-9);
        assert_eq!(relative_error(&z, truth).unwrap(), 0.0);
        let moved = rescaled(&z, Complex64::new(1.7, -0.4));
        assert!(dist(&moved, truth).unwrap() < 1e-9);
        assert!(relative_error(&moved, truth).unwrap() < 1e-14);
        let zero = DemixState::zeros(3, 4);
        assert_eq!(relative_error(&zero, truth).unwrap(), 1.0);
    }

    #[test]
    fn dist_matches_grid_composition() {
        let inst = instance();
        let truth = inst.truth().unwrap();
        let mut z = DemixState::from_truth(&inst).unwrap();
        for (i, p) in z.sources.iter_mut().enumerate() {
            p.h += cv(7, 2 * i as u64, 4).scale(0.2);
            p.x += cv(7, 2 * i as u64 + 1, 4).scale(0.2);
        }
        let oracle: f64 = z
            .sources
            .iter()
            .zip(&truth.sources)
            .zip(&truth.d)
            .map(|((p, t), d)| grid_oracle(&p.h, &p.x, &t.h, &t.x) / d)
            .sum::<f64>()
            .sqrt();
        assert!((dist(&z, truth).unwrap() - oracle).abs() <= 1e-6);
        let al = Alignment::compute(&z, truth).unwrap();
        assert!((dist_aligned(&z, truth, &al).unwrap() - dist(&z, truth).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn mu_flat_spectrum_is_one() {
        let b = crate::problem::make_dft_rows(16, 4).unwrap();
        let mut e1 = CVector::zeros(4);
        e1[0] = Complex64::new(1.0, 0.0);
        let truth = GroundTruth::from_sources(vec![SourcePair::new(e1.clone(), e1)]).unwrap();
        assert!((incoherence_mu(&truth, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mu_matches_naive_loop() {
        let dims = Dimensions::new(1, 64, 8).unwrap();
        let truth = crate::problem::sample_ground_truth(&dims, 1.0, 3).unwrap();
        let b = crate::problem::make_dft_rows(64, 8).unwrap();
        let h = &truth.sources[0].h;
        let mut worst = 0.0f64;
        for j in 0..64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..8 {
                acc += b[(k, j)].conj() * h[k];
            }
            worst = worst.max(acc.norm());
        }
        let naive = 8.0 * worst / h.norm();
        assert!((incoherence_mu(&truth, &b).unwrap() - naive).abs() <= 1e-13 * naive);
    }

    #[test]
    fn incoherence_at_truth() {
        let inst = instance();
        let truth = inst.truth().unwrap();
        let z = DemixState::from_truth(&inst).unwrap();
        let al = Alignment { alpha: vec![Complex64::new(1.0, 0.0); 3] };
        let (a, b) = incoherence_measures(&z, truth, &inst, &al).unwrap();
        assert_eq!(a, 0.0);
        let expected = truth.mu.unwrap() / (inst.dims.m as f64).sqrt();
        assert!((b - expected).abs() <= 1e-14);
        let short = Alignment { alpha: vec![Complex64::new(1.0, 0.0)] };
        assert!(matches!(
            incoherence_measures(&z, truth, &inst, &short),
            Err(DemixError::MissingAlignment { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn incoherence_matches_double_loop() {
        let inst = ProblemInstance::generate(Dimensions::new(2, 10, 3).unwrap(), 1.0, 0.0, 2).unwrap();
        let truth = inst.truth().unwrap();
        let mut z = DemixState::from_truth(&inst).unwrap();
        for (i, p) in z.sources.iter_mut().enumerate() {
            p.h += cv(8, 2 * i as u64, 3).scale(0.3);
            p.x += cv(8, 2 * i as u64 + 1, 3).scale(0.3);
        }
        let al = Alignment::compute(&z, truth).unwrap();
        let (a, b) = incoherence_measures(&z, truth, &inst, &al).unwrap();
        let (mut na, mut nb) = (0.0f64, 0.0f64);
        for i in 0..2 {
            let alpha = al.alpha[i];
            for j in 0..10 {
                let (mut sa, mut sb) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                for k in 0..3 {
                    sa += inst.a[i][(k, j)].conj() * (alpha * z.sources[i].x[k] - truth.sources[i].x[k]);
                    sb += inst.b[(k, j)].conj() * z.sources[i].h[k] / alpha.conj();
                }
                na = na.max(sa.norm() / truth.sources[i].x.norm());
                nb = nb.max(sb.norm() / truth.sources[i].h.norm());
            }
        }
        assert!((a - na).abs() <= 1e-13 * na);
        assert!((b - nb).abs() <= 1e-13 * nb);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn alignment_is_locally_optimal_and_beats_unit(seed in 0u64..10_000, k in 1usize..5) {
            let (h, x, hr, xr) = (cv(seed, 0, k), cv(seed, 1, k), cv(seed, 2, k), cv(seed, 3, k));
            let a = align_source(&h, &x, &hr, &xr).unwrap();
            let best = alignment_objective(a, &h, &x, &hr, &xr);
            let mut r = rng::stream(seed, Domain::Verify, 9);
            for _ in 0..200 {
                let u = rng::uniform_open(&mut r) * 2.0 - 1.0;
                let v = rng::uniform_open(&mut r) * 2.0 - 1.0;
                let perturbed = a * Complex64::new(1.0 + 0.1 * u, 0.1 * v);
                prop_assert!(alignment_objective(perturbed, &h, &x, &hr, &xr) >= best - 1e-12);
            }
            let unit = align_source_unit(&h, &x, &hr, &xr).unwrap();
            prop_assert!(alignment_objective(unit, &h, &x, &hr, &xr) >= best - 1e-12);
        }

        #[test]
        fn metrics_are_gauge_invariant(seed in 0u64..1000, re in -2.0f64..2.0, im in -2.0f64..2.0) {
            prop_assume!(re.abs() + im.abs() > 0.1);
            let inst = ProblemInstance::generate(Dimensions::new(2, 12, 3).unwrap(), 1.0, 0.0, seed).unwrap();
            let truth = inst.truth().unwrap();
            let mut z = DemixState::from_truth(&inst).unwrap();
            for (i, p) in z.sources.iter_mut().enumerate() {
                p.h += cv(seed, 10 + i as u64, 3).scale(0.2);
                p.x += cv(seed, 20 + i as u64, 3).scale(0.2);
            }
            let moved = rescaled(&z, Complex64::new(re, im));
            prop_assert!((dist(&z, truth).unwrap() - dist(&moved, truth).unwrap()).abs() <= 1e-10);
            prop_assert!((relative_error(&z, truth).unwrap() - relative_error(&moved, truth).unwrap()).abs() <= 1e-10);
        }
    }
}
