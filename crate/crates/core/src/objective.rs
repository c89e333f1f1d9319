//! Least-squares loss, Wirtinger gradients and per-source Wirtinger Hessians.
//!
//! Gradients are the conjugate-coordinate derivatives `df/d(conj z)`. For a
//! real direction `u` in the `(Re z, Im z)` parameterization the directional
//! derivative of the loss is `2 Re <g, u>`, i.e. the real-parameter gradient
//! is twice the Wirtinger gradient. The solver's step size applies to the
//! Wirtinger gradient directly.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{DemixError, Result};
use crate::problem::{check_sources, forward, ProblemInstance, SourcePair};
use crate::{CMatrix, CVector};

/// Largest assembled Hessian order accepted by dense verification tools.
pub const DENSE_HESSIAN_CAP: usize = 4096;

/// Current iterate `z = {(h_i, x_i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemixState {
    pub sources: Vec<SourcePair>,
}

impl DemixState {
    pub fn new(sources: Vec<SourcePair>) -> Self {
        Self { sources }
    }

    pub fn zeros(s: usize, k: usize) -> Self {
        Self { sources: vec![SourcePair::zeros(k); s] }
    }

    pub fn from_truth(inst: &ProblemInstance) -> Result<Self> {
        Ok(Self { sources: inst.truth()?.sources.clone() })
    }

    pub fn s(&self) -> usize {
        self.sources.len()
    }
}

/// Per-source Wirtinger gradient `(grad_h_i, grad_x_i)`.
pub type Gradient = Vec<SourcePair>;

/// The five `K x K` pieces of the Wirtinger Hessian of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    pub c1: CMatrix,
    pub c2: CMatrix,
    pub c3: CMatrix,
    pub e1: CMatrix,
    pub e2: CMatrix,
}

/// `b_j^* h_i` and `a_ij^* x_i` for every measurement.
pub(crate) struct Projections {
    pub bh: CVector,
    pub ax: CVector,
}

pub(crate) fn projections(pair: &SourcePair, ai: &CMatrix, b: &CMatrix) -> Projections {
    Projections { bh: b.ad_mul(&pair.h), ax: ai.ad_mul(&pair.x) }
}

/// `r_j = sum_i b_j^* h_i x_i^* a_ij - y_j`.
pub fn residuals(state: &DemixState, inst: &ProblemInstance) -> Result<CVector> {
    residuals_against(state, inst, &inst.y)
}

fn residuals_against(state: &DemixState, inst: &ProblemInstance, y: &CVector) -> Result<CVector> {
    let mut r = forward(&state.sources, &inst.a, &inst.b)?;
    r -= y;
    Ok(r)
}

/// Residuals against the noiseless measurements of the attached truth.
pub fn clean_residuals(state: &DemixState, inst: &ProblemInstance) -> Result<CVector> {
    check_sources(&state.sources, &inst.a, &inst.b)?;
    let truth = inst.truth()?;
    // One pass over sources keeps the rounding of each difference local.
    let m = inst.dims.m;
    let mut r = CVector::zeros(m);
    for ((p, t), ai) in state.sources.iter().zip(&truth.sources).zip(&inst.a) {
        let now = projections(p, ai, &inst.b);
        let nat = projections(t, ai, &inst.b);
        for j in 0..m {
            r[j] += now.bh[j] * now.ax[j].conj() - nat.bh[j] * nat.ax[j].conj();
        }
    }
    Ok(r)
}

pub fn loss(state: &DemixState, inst: &ProblemInstance) -> Result<f64> {
    Ok(residuals(state, inst)?.norm_squared())
}

pub fn clean_loss(state: &DemixState, inst: &ProblemInstance) -> Result<f64> {
    Ok(clean_residuals(state, inst)?.norm_squared())
}

/// Wirtinger gradient from precomputed residuals, optionally with one
/// measurement's term removed.
pub(crate) fn gradient_from_residuals(
    state: &DemixState,
    inst: &ProblemInstance,
    r: &CVector,
    exclude: Option<usize>,
) -> Gradient {
    state
        .sources
        .par_iter()
        .zip(inst.a.par_iter())
        .map(|(pair, ai)| {
            let p = projections(pair, ai, &inst.b);
            let mut wh = r.component_mul(&p.ax);
            let mut wx = r.map(|z| z.conj()).component_mul(&p.bh);
            if let Some(l) = exclude {
                wh[l] = Complex64::new(0.0, 0.0);
                wx[l] = Complex64::new(0.0, 0.0);
            }
            SourcePair::new(&inst.b * wh, ai * wx)
        })
        .collect()
}

/// `grad_h_i = sum_j r_j (a_ij^* x_i) b_j`,
/// `grad_x_i = sum_j conj(r_j) (b_j^* h_i) a_ij`.
pub fn wirtinger_gradient(state: &DemixState, inst: &ProblemInstance) -> Result<Gradient> {
    let r = residuals(state, inst)?;
    Ok(gradient_from_residuals(state, inst, &r, None))
}

/// Gradient of the loss with measurement `l` deleted.
pub fn leave_one_out_gradient(state: &DemixState, inst: &ProblemInstance, l: usize) -> Result<Gradient> {
    check_index(l, inst.dims.m)?;
    let r = residuals(state, inst)?;
    Ok(gradient_from_residuals(state, inst, &r, Some(l)))
}

/// The `l`-th summand of the gradient: `(R_l (a_il^* x_i) b_l, conj(R_l) (b_l^* h_i) a_il)`.
pub fn gradient_term(state: &DemixState, inst: &ProblemInstance, l: usize) -> Result<Gradient> {
    check_index(l, inst.dims.m)?;
    let r = residuals(state, inst)?;
    let bl = inst.b.column(l);
    Ok(state
        .sources
        .iter()
        .zip(&inst.a)
        .map(|(pair, ai)| {
            let al = ai.column(l);
            let ax = al.dotc(&pair.x);
            let bh = bl.dotc(&pair.h);
            SourcePair::new(bl.map(|z| z * r[l] * ax), al.map(|z| z * r[l].conj() * bh))
        })
        .collect())
}

pub(crate) fn check_index(l: usize, m: usize) -> Result<()> {
    if l >= m {
        return Err(DemixError::IndexOutOfRange { index: l, len: m });
    }
    Ok(())
}

/// Hessian pieces for source `i`. With `clean`, the `C2` residual factor is
/// taken against the noiseless truth; otherwise against the measured `y`.
pub fn hessian_blocks(state: &DemixState, inst: &ProblemInstance, i: usize, clean: bool) -> Result<HessianBlocks> {
    check_index(i, state.s())?;
    let r = if clean { clean_residuals(state, inst)? } else { residuals(state, inst)? };
    let ai = &inst.a[i];
    let b = &inst.b;
    let p = projections(&state.sources[i], ai, b);

    let weighted = |left: &CMatrix, w: &CVector, right_adjoint: &CMatrix, transpose: bool| -> CMatrix {
        let mut scaled = left.clone();
        for (mut col, wj) in scaled.column_iter_mut().zip(w.iter()) {
            col *= *wj;
        }
        if transpose {
            scaled * right_adjoint.transpose()
        } else {
            scaled * right_adjoint.adjoint()
        }
    };

    let ax2 = p.ax.map(|z| Complex64::new(z.norm_sqr(), 0.0));
    let bh2 = p.bh.map(|z| Complex64::new(z.norm_sqr(), 0.0));
    let cross = p.bh.component_mul(&p.ax);

    let c1 = weighted(b, &ax2, b, false);
    let c2 = weighted(b, &r, ai, false);
    let c3 = weighted(ai, &bh2, ai, false);
    let e1 = weighted(b, &cross, ai, true);
    let e2 = weighted(ai, &cross, b, true);
    Ok(HessianBlocks { c1, c2, c3, e1, e2 })
}

/// `[[C, E], [E^*, conj(C)]]` with `C = [[C1, C2], [C2^*, C3]]` and
/// `E = [[0, E1], [E2, 0]]`, in the coordinate order `(h, x, conj h, conj x)`.
pub fn assemble_source_hessian(blocks: &HessianBlocks) -> CMatrix {
    let k = blocks.c1.nrows();
    let mut c = CMatrix::zeros(2 * k, 2 * k);
    c.view_mut((0, 0), (k, k)).copy_from(&blocks.c1);
    c.view_mut((0, k), (k, k)).copy_from(&blocks.c2);
    c.view_mut((k, 0), (k, k)).copy_from(&blocks.c2.adjoint());
    c.view_mut((k, k), (k, k)).copy_from(&blocks.c3);
    let mut e = CMatrix::zeros(2 * k, 2 * k);
    e.view_mut((0, k), (k, k)).copy_from(&blocks.e1);
    e.view_mut((k, 0), (k, k)).copy_from(&blocks.e2);

    let mut h = CMatrix::zeros(4 * k, 4 * k);
    h.view_mut((0, 0), (2 * k, 2 * k)).copy_from(&c);
    h.view_mut((0, 2 * k), (2 * k, 2 * k)).copy_from(&e);
    h.view_mut((2 * k, 0), (2 * k, 2 * k)).copy_from(&e.adjoint());
    h.view_mut((2 * k, 2 * k), (2 * k, 2 * k)).copy_from(&c.map(|z| z.conj()));
    h
}

/// Block-diagonal clean Hessian over all sources, one `4K x 4K` block each.
pub fn clean_hessian_diagonal(state: &DemixState, inst: &ProblemInstance) -> Result<Vec<CMatrix>> {
    let order = 4 * inst.dims.s * inst.dims.k;
    if order > DENSE_HESSIAN_CAP {
        return Err(DemixError::TooLarge { order, cap: DENSE_HESSIAN_CAP });
    }
    (0..state.s())
        .map(|i| hessian_blocks(state, inst, i, true).map(|b| assemble_source_hessian(&b)))
        .collect()
}

/// Stacks `[d; conj d]` for a per-source direction `(dh, dx)`.
pub fn widen(dh: &CVector, dx: &CVector) -> CVector {
    let k = dh.len();
    CVector::from_fn(4 * k, |n, _| match n / k {
        0 => dh[n],
        1 => dx[n - k],
        2 => dh[n - 2 * k].conj(),
        _ => dx[n - 3 * k].conj(),
    })
}
