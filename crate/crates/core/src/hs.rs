//! Hilbert-Schmidt operators, operator windows and the operator STFT.
//!
//! An operator window `Phi = sum_m phi_m (x) psi_m` is kept in factorized
//! form as two `N x r` matrices. The operator STFT of `F` on a lattice is
//! `lambda -> Phi^* pi(lambda)^* F`, which factorizes as
//! `sum_m psi_m (x) F^* pi(lambda) phi_m`; only the `r` vectors
//! `F^* pi(lambda) phi_m` are stored per lattice point.
//!
//! The lifted frame operator on HS is left multiplication by the `N x N`
//! matrix `S0 = sum_lambda pi(lambda) Phi Phi^* pi(lambda)^*`, so bounds and
//! the canonical dual are computed at signal-space size.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::stats::{linear_fit, LinearFit};
use crate::tf::{stft, tf_shift_matrix, unit_root, wrapped_distance, Lattice, LatticePoint, Signal, C64};

pub type CMatrix = DMatrix<C64>;

/// Lower frame bounds at or below this fraction of the upper bound are rejected.
pub const NOT_A_FRAME_RATIO: f64 = 1e-10;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Tolerance flags stored with an operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OperatorFlags {
    pub self_adjoint: bool,
    pub psd: bool,
}

impl OperatorFlags {
    /// Bit 0 self-adjoint, bit 1 PSD.
    pub fn to_byte(self) -> u8 {
        self.self_adjoint as u8 | (self.psd as u8) << 1
    }

    pub fn from_byte(b: u8) -> Self {
        OperatorFlags { self_adjoint: b & 1 != 0, psd: b & 2 != 0 }
    }
}

/// An `N x N` complex matrix with the Frobenius inner product.
#[derive(Clone, Debug, PartialEq)]
pub struct HSOperator {
    matrix: CMatrix,
}

impl HSOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("operator has non-finite entries".into()));
        }
        Ok(HSOperator { matrix })
    }

    pub(crate) fn from_matrix_unchecked(matrix: CMatrix) -> Self {
        HSOperator { matrix }
    }

    pub fn zeros(n: usize) -> Self {
        HSOperator { matrix: CMatrix::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        HSOperator { matrix: CMatrix::identity(n, n) }
    }

    /// `phi (x) psi : h -> <h, psi> phi`.
    pub fn outer(phi: &Signal, psi: &Signal) -> Self {
        HSOperator { matrix: phi.vector() * psi.vector().adjoint() }
    }

    /// Matrix of `pi(lambda)`.
    pub fn tf_shift(lambda: LatticePoint, n: usize) -> Self {
        HSOperator { matrix: tf_shift_matrix(lambda, n) }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn adjoint(&self) -> Self {
        HSOperator { matrix: self.matrix.adjoint() }
    }

    /// `trace(other^* self)`.
    pub fn hs_inner(&self, other: &HSOperator) -> C64 {
        other.matrix.dotc(&self.matrix)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn scaled(&self, c: f64) -> Self {
        HSOperator { matrix: &self.matrix * C64::new(c, 0.0) }
    }

    pub fn add(&self, other: &HSOperator) -> Self {
        HSOperator { matrix: &self.matrix + &other.matrix }
    }

    pub fn sub(&self, other: &HSOperator) -> Self {
        HSOperator { matrix: &self.matrix - &other.matrix }
    }

    pub fn compose(&self, other: &HSOperator) -> Self {
        HSOperator { matrix: &self.matrix * &other.matrix }
    }

    pub fn apply(&self, f: &Signal) -> Signal {
        Signal::from_vector(&self.matrix * f.vector())
    }

    pub fn is_self_adjoint(&self) -> bool {
        let diff = (&self.matrix - self.matrix.adjoint()).norm();
        diff <= 1e-10 * self.frobenius_norm()
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn is_psd(&self) -> bool {
        if !self.is_self_adjoint() {
            return false;
        }
        let min = self.hermitian_eigenvalues().first().copied().unwrap_or(0.0);
        min >= -1e-10 * self.frobenius_norm()
    }

    pub fn flags(&self) -> OperatorFlags {
        let self_adjoint = self.is_self_adjoint();
        OperatorFlags { self_adjoint, psd: self_adjoint && self.is_psd() }
    }
}

/// Rank-`r` window `sum_m phi_m (x) psi_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorWindow {
    phis: CMatrix,
    psis: CMatrix,
}

impl OperatorWindow {
    pub fn new(phis: Vec<Signal>, psis: Vec<Signal>) -> Result<Self> {
        if phis.is_empty() {
            return Err(Error::InvalidParameter("operator window needs rank >= 1".into()));
        }
        if phis.len() != psis.len() {
            return Err(Error::DimensionMismatch { expected: phis.len(), found: psis.len() });
        }
        let n = phis[0].len();
        for s in phis.iter().chain(&psis) {
            if s.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: s.len() });
            }
        }
        let to_mat = |v: &[Signal]| CMatrix::from_fn(n, v.len(), |i, m| v[m].as_slice()[i]);
        Ok(OperatorWindow { phis: to_mat(&phis), psis: to_mat(&psis) })
    }

    pub fn from_matrices(phis: CMatrix, psis: CMatrix) -> Result<Self> {
        if phis.ncols() == 0 {
            return Err(Error::InvalidParameter("operator window needs rank >= 1".into()));
        }
        if phis.shape() != psis.shape() {
            return Err(Error::DimensionMismatch { expected: phis.ncols(), found: psis.ncols() });
        }
        Ok(OperatorWindow { phis, psis })
    }

    /// `phi (x) phi`.
    pub fn rank_one(phi: &Signal) -> Self {
        let m = CMatrix::from_column_slice(phi.len(), 1, phi.as_slice());
        OperatorWindow { phis: m.clone(), psis: m }
    }

    /// Orthogonal projector onto the span of `vectors`.
    pub fn projector(vectors: &[Signal]) -> Result<Self> {
        let q = orthonormal_basis(vectors)?;
        Ok(OperatorWindow { phis: q.clone(), psis: q })
    }

    pub fn n(&self) -> usize {
        self.phis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.phis.ncols()
    }

    pub fn phi_matrix(&self) -> &CMatrix {
        &self.phis
    }

    pub fn psi_matrix(&self) -> &CMatrix {
        &self.psis
    }

    pub fn phis(&self) -> Vec<Signal> {
        columns(&self.phis)
    }

    pub fn psis(&self) -> Vec<Signal> {
        columns(&self.psis)
    }

    pub fn densify(&self) -> HSOperator {
        HSOperator::from_matrix_unchecked(&self.phis * self.psis.adjoint())
    }

    /// `Phi^*`, i.e. the window with the factor roles swapped.
    pub fn adjoint(&self) -> Self {
        OperatorWindow { phis: self.psis.clone(), psis: self.phis.clone() }
    }

    /// Singular values of the densified window above `N * eps * s_max`.
    pub fn numerical_rank(&self) -> usize {
        let s = self.densify().into_matrix().singular_values();
        let smax = s.iter().copied().fold(0.0, f64::max);
        let tol = self.n() as f64 * f64::EPSILON * smax;
        s.iter().filter(|v| **v > tol).count()
    }
}

fn columns(m: &CMatrix) -> Vec<Signal> {
    (0..m.ncols()).map(|j| Signal::from_vector(m.column(j).into_owned())).collect()
}

/// Modified Gram-Schmidt with one reorthogonalization pass.
pub(crate) fn orthonormal_basis(vectors: &[Signal]) -> Result<CMatrix> {
    let n = vectors.first().map(Signal::len).ok_or_else(|| Error::InvalidParameter("no vectors".into()))?;
    let mut q = CMatrix::zeros(n, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: v.len() });
        }
        let mut w = v.vector().clone();
        for _ in 0..2 {
            for k in 0..j {
                let qk = q.column(k);
                let c = qk.dotc(&w);
                w -= qk * c;
            }
        }
        let nrm = w.norm();
        if nrm <= 1e-12 * v.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidParameter(format!("vector {j} is linearly dependent")));
        }
        q.set_column(j, &(w / C64::new(nrm, 0.0)));
    }
    Ok(q)
}

/// Sampled operator STFT. Block `i` holds the `r` vectors `g_{lambda_i, m}`
/// as columns, representing `G = sum_m psi_m (x) g_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    lattice: Lattice,
    window_psis: CMatrix,
    psi_gram: CMatrix,
    blocks: Vec<CMatrix>,
}

impl CoefficientField {
    pub fn new(lattice: Lattice, window_psis: CMatrix, blocks: Vec<CMatrix>) -> Result<Self> {
        if blocks.len() != lattice.len() {
            return Err(Error::DimensionMismatch { expected: lattice.len(), found: blocks.len() });
        }
        for b in &blocks {
            if b.shape() != window_psis.shape() {
                return Err(Error::DimensionMismatch { expected: window_psis.ncols(), found: b.ncols() });
            }
        }
        let psi_gram = window_psis.adjoint() * &window_psis;
        Ok(CoefficientField { lattice, window_psis, psi_gram, blocks })
    }

    pub fn zeros(lattice: Lattice, window_psis: CMatrix) -> Self {
        let shape = window_psis.shape();
        let blocks = vec![CMatrix::zeros(shape.0, shape.1); lattice.len()];
        let psi_gram = window_psis.adjoint() * &window_psis;
        CoefficientField { lattice, window_psis, psi_gram, blocks }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn window_rank(&self) -> usize {
        self.window_psis.ncols()
    }

    pub fn window_psis(&self) -> &CMatrix {
        &self.window_psis
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, index: usize) -> &CMatrix {
        &self.blocks[index]
    }

    pub fn set_block(&mut self, index: usize, block: CMatrix) -> Result<()> {
        if block.shape() != self.window_psis.shape() {
            return Err(Error::DimensionMismatch { expected: self.window_rank(), found: block.ncols() });
        }
        self.blocks[index] = block;
        Ok(())
    }

    pub fn block_signals(&self, index: usize) -> Vec<Signal> {
        columns(&self.blocks[index])
    }

    /// `||sum_m psi_m (x) g_m||_HS`, via `trace((Psi^* Psi)(G^* G))`.
    pub fn block_hs_norm(&self, index: usize) -> f64 {
        let g = &self.blocks[index];
        let gg = g.adjoint() * g;
        let r = self.window_rank();
        let mut acc = 0.0;
        for m in 0..r {
            for mp in 0..r {
                acc += (self.psi_gram[(m, mp)] * gg[(mp, m)]).re;
            }
        }
        acc.max(0.0).sqrt()
    }

    pub fn hs_norms(&self) -> Vec<f64> {
        (0..self.len()).into_par_iter().map(|i| self.block_hs_norm(i)).collect()
    }

    /// The `N x N` coefficient operator at lattice index `index`.
    pub fn densify(&self, index: usize) -> HSOperator {
        HSOperator::from_matrix_unchecked(&self.window_psis * self.blocks[index].adjoint())
    }
}

/// `C_Phi F = (Phi^* pi(lambda)^* F)_lambda`, factorized.
///
/// For each window column `phi_m` and time shift `x`, the vectors
/// `F^* M_w T_x phi_m` for all `w` are one batch of inverse DFTs of the
/// columns of `conj(F) * (T_x phi_m)`.
pub fn op_stft_analyze(f: &HSOperator, window: &OperatorWindow, lattice: &Lattice) -> Result<CoefficientField> {
    let n = f.n();
    check_dims(n, window, lattice)?;
    let r = window.rank();
    let fft = FftPlanner::new().plan_fft_inverse(n);
    let fm = f.matrix();
    let phis = window.phi_matrix();
    let fsteps = lattice.freq_steps();
    let per_shift: Vec<Vec<CMatrix>> = (0..lattice.time_steps())
        .into_par_iter()
        .map(|j| {
            let x = j * lattice.a();
            let mut out = vec![CMatrix::zeros(n, r); fsteps];
            let mut buf = vec![ZERO; n * n];
            for m in 0..r {
                let u: Vec<C64> = (0..n).map(|i| phis[(((i + n - x) % n), m)]).collect();
                // column-major: column i of conj(F) is contiguous
                for (i, chunk) in buf.chunks_mut(n).enumerate() {
                    for (t, slot) in chunk.iter_mut().enumerate() {
                        *slot = fm[(t, i)].conj() * u[t];
                    }
                }
                fft.process(&mut buf);
                for (k, block) in out.iter_mut().enumerate() {
                    let w = k * lattice.b();
                    for i in 0..n {
                        block[(i, m)] = buf[i * n + w];
                    }
                }
            }
            out
        })
        .collect();
    CoefficientField::new(lattice.clone(), window.psi_matrix().clone(), per_shift.into_iter().flatten().collect())
}

/// Dense reference: `Phi^* pi(lambda)^* F` for every lattice point.
pub fn op_stft_analyze_dense(f: &HSOperator, window: &OperatorWindow, lattice: &Lattice) -> Result<Vec<HSOperator>> {
    check_dims(f.n(), window, lattice)?;
    let phi_adj = window.densify().adjoint().into_matrix();
    Ok(lattice
        .points()
        .par_iter()
        .map(|&l| {
            let pi_adj = tf_shift_matrix(l, f.n()).adjoint();
            HSOperator::from_matrix_unchecked(&phi_adj * pi_adj * f.matrix())
        })
        .collect())
}

fn check_dims(n: usize, window: &OperatorWindow, lattice: &Lattice) -> Result<()> {
    if window.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: window.n() });
    }
    if lattice.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: lattice.n() });
    }
    Ok(())
}

/// Rows of `m` cyclically shifted down by `x` and row `i` scaled by
/// `exp(2 pi i w i / N)`: the matrix `pi(lambda) m`.
pub(crate) fn tf_shift_rows(m: &CMatrix, lambda: LatticePoint) -> CMatrix {
    let n = m.nrows();
    CMatrix::from_fn(n, m.ncols(), |i, c| unit_root((lambda.omega * i) as i64, n) * m[((i + n - lambda.x) % n, c)])
}

/// Per-lattice-point synthesis factors: the term at `lambda` of
/// `D_Psi (G_lambda)` equals `atom(lambda) * block(lambda)^*`.
#[derive(Clone, Debug)]
pub struct SynthesisAtoms {
    base: CMatrix,
    points: Vec<LatticePoint>,
}

/// Columns per stacked product in [`SynthesisAtoms::accumulate`].
const STACK_COLUMNS: usize = 4096;

impl SynthesisAtoms {
    pub fn new(coeff_psis: &CMatrix, synthesis: &OperatorWindow, lattice: &Lattice) -> Result<Self> {
        if coeff_psis.nrows() != synthesis.n() {
            return Err(Error::DimensionMismatch { expected: synthesis.n(), found: coeff_psis.nrows() });
        }
        // pi(l) Psi (Psi_a G^*) = pi(l) P (Q^* Psi_a) G^*
        let base = synthesis.phi_matrix() * (synthesis.psi_matrix().adjoint() * coeff_psis);
        Ok(SynthesisAtoms { base, points: lattice.points().to_vec() })
    }

    pub fn atom(&self, index: usize) -> CMatrix {
        tf_shift_rows(&self.base, self.points[index])
    }

    /// Lattice indices per stacked product for a rank-`r` field.
    pub fn chunk_len(r: usize) -> usize {
        (STACK_COLUMNS / r.max(1)).max(1)
    }

    /// Adds the terms for `indices` to `acc`, in the given order.
    pub fn accumulate(&self, coeffs: &CoefficientField, indices: &[usize], acc: &mut CMatrix) {
        let n = acc.nrows();
        let r = coeffs.window_rank();
        for chunk in indices.chunks(Self::chunk_len(r)) {
            let mut x = CMatrix::zeros(n, r * chunk.len());
            let mut g = CMatrix::zeros(n, r * chunk.len());
            for (slot, &i) in chunk.iter().enumerate() {
                x.columns_mut(slot * r, r).copy_from(&self.atom(i));
                g.columns_mut(slot * r, r).copy_from(coeffs.block(i));
            }
            acc.gemm(C64::new(1.0, 0.0), &x, &g.adjoint(), C64::new(1.0, 0.0));
        }
    }
}

/// `D_Psi (G_lambda) = sum_lambda pi(lambda) Psi G_lambda`.
pub fn op_synthesize(coeffs: &CoefficientField, synthesis: &OperatorWindow, lattice: &Lattice) -> Result<HSOperator> {
    let all: Vec<usize> = (0..lattice.len()).collect();
    op_synthesize_subset(coeffs, synthesis, lattice, &all)
}

/// Synthesis restricted to the lattice indices in `indices`.
pub fn op_synthesize_subset(
    coeffs: &CoefficientField,
    synthesis: &OperatorWindow,
    lattice: &Lattice,
    indices: &[usize],
) -> Result<HSOperator> {
    if coeffs.lattice() != lattice {
        return Err(Error::LatticeMismatch);
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= lattice.len()) {
        return Err(Error::OutOfRange { k: bad, max: lattice.len() - 1 });
    }
    let atoms = SynthesisAtoms::new(coeffs.window_psis(), synthesis, lattice)?;
    let mut acc = CMatrix::zeros(synthesis.n(), synthesis.n());
    atoms.accumulate(coeffs, indices, &mut acc);
    Ok(HSOperator::from_matrix_unchecked(acc))
}

/// Dense reference synthesis from explicit coefficient operators.
pub fn op_synthesize_dense(blocks: &[HSOperator], synthesis: &OperatorWindow, lattice: &Lattice) -> Result<HSOperator> {
    if blocks.len() != lattice.len() {
        return Err(Error::DimensionMismatch { expected: lattice.len(), found: blocks.len() });
    }
    let psi = synthesis.densify().into_matrix();
    let n = synthesis.n();
    let mut acc = CMatrix::zeros(n, n);
    for (l, g) in lattice.points().iter().zip(blocks) {
        acc += tf_shift_matrix(*l, n) * &psi * g.matrix();
    }
    Ok(HSOperator::from_matrix_unchecked(acc))
}

/// `S0 = sum_lambda pi(lambda) Phi Phi^* pi(lambda)^*`.
///
/// Summing the modulations over `bZ_N` leaves `(N/b)` times the entries with
/// `i - j = 0 mod N/b`, so only the `N/a` translations are summed explicitly.
pub fn frame_operator(window: &OperatorWindow, lattice: &Lattice) -> Result<HSOperator> {
    let n = window.n();
    if lattice.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: lattice.n() });
    }
    let p = window.phi_matrix();
    let m = p * (window.psi_matrix().adjoint() * window.psi_matrix()) * p.adjoint();
    let period = lattice.freq_steps();
    let scale = period as f64;
    let mut s0 = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if !(i + n - j).is_multiple_of(period) {
                continue;
            }
            let mut acc = ZERO;
            for t in 0..lattice.time_steps() {
                let x = t * lattice.a();
                acc += m[((i + n - x) % n, (j + n - x) % n)];
            }
            s0[(i, j)] = acc * scale;
        }
    }
    Ok(HSOperator::from_matrix_unchecked(s0))
}

/// Hermitian eigendecomposition with eigenvalues ascending.
fn hermitian_eigen(s0: &HSOperator) -> (Vec<f64>, CMatrix) {
    let herm = (s0.matrix() + s0.matrix().adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(s0.n(), order.len(), |i, c| eig.eigenvectors[(i, order[c])]);
    (values, vectors)
}

/// Extreme eigenvalues `(A, B)` of a Hermitian frame operator.
pub fn frame_bounds(s0: &HSOperator) -> Result<(f64, f64)> {
    let (values, _) = hermitian_eigen(s0);
    bounds_from_spectrum(&values)
}

fn bounds_from_spectrum(values: &[f64]) -> Result<(f64, f64)> {
    let lower = values.first().copied().unwrap_or(0.0);
    let upper = values.last().copied().unwrap_or(0.0);
    if upper <= 0.0 || lower <= NOT_A_FRAME_RATIO * upper {
        return Err(Error::NotAFrame { lower, upper });
    }
    Ok((lower, upper))
}

/// `S0^{-1}` by eigendecomposition, pseudo-inverting eigenvalues below
/// `N * eps * s_max`.
fn pseudo_inverse(values: &[f64], vectors: &CMatrix) -> CMatrix {
    let n = vectors.nrows();
    let smax = values.iter().copied().fold(0.0, f64::max);
    let tol = n as f64 * f64::EPSILON * smax;
    let inv: Vec<C64> = values.iter().map(|&v| if v >= tol { C64::new(1.0 / v, 0.0) } else { ZERO }).collect();
    let scaled = CMatrix::from_fn(n, values.len(), |i, c| vectors[(i, c)] * inv[c]);
    scaled * vectors.adjoint()
}

/// `Psi~ = S0^{-1} Phi`, factorized as `(S0^{-1} phi_m, psi_m)`.
pub fn canonical_dual_window(window: &OperatorWindow, lattice: &Lattice) -> Result<OperatorWindow> {
    Ok(FrameSystem::new(window.clone(), lattice.clone())?.dual_window)
}

/// Window, lattice, frame operator, canonical dual and bounds.
#[derive(Clone, Debug)]
pub struct FrameSystem {
    window: OperatorWindow,
    lattice: Lattice,
    frame_op: HSOperator,
    frame_op_inverse: CMatrix,
    dual_window: OperatorWindow,
    bounds: (f64, f64),
}

impl FrameSystem {
    pub fn new(window: OperatorWindow, lattice: Lattice) -> Result<Self> {
        let frame_op = frame_operator(&window, &lattice)?;
        let (values, vectors) = hermitian_eigen(&frame_op);
        let bounds = bounds_from_spectrum(&values)?;
        let frame_op_inverse = pseudo_inverse(&values, &vectors);
        let dual_window = OperatorWindow {
            phis: &frame_op_inverse * window.phi_matrix(),
            psis: window.psi_matrix().clone(),
        };
        Ok(FrameSystem { window, lattice, frame_op, frame_op_inverse, dual_window, bounds })
    }

    pub fn window(&self) -> &OperatorWindow {
        &self.window
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn frame_op(&self) -> &HSOperator {
        &self.frame_op
    }

    pub fn frame_op_inverse(&self) -> &CMatrix {
        &self.frame_op_inverse
    }

    pub fn dual_window(&self) -> &OperatorWindow {
        &self.dual_window
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    /// Operator norm of the dual synthesis map, `A^{-1/2}`.
    pub fn dual_synthesis_norm(&self) -> f64 {
        1.0 / self.bounds.0.sqrt()
    }

    pub fn analyze(&self, f: &HSOperator) -> Result<CoefficientField> {
        op_stft_analyze(f, &self.window, &self.lattice)
    }

    pub fn reconstruct(&self, coeffs: &CoefficientField) -> Result<HSOperator> {
        op_synthesize(coeffs, &self.dual_window, &self.lattice)
    }
}

/// Translation-invariant localization matrix `||Psi^* pi(l)^* pi(m) Psi||_HS`.
///
/// Since `pi(l)^* pi(m)` is a unimodular multiple of `pi(m - l)`, the entry
/// only depends on `m - l`; `profile` holds it per lattice difference.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationMatrix {
    lattice: Lattice,
    profile: Vec<f64>,
}

impl LocalizationMatrix {
    /// Builds the matrix from an entry profile over lattice differences.
    pub fn from_profile(lattice: Lattice, profile: Vec<f64>) -> Result<Self> {
        if profile.len() != lattice.len() {
            return Err(Error::DimensionMismatch { expected: lattice.len(), found: profile.len() });
        }
        Ok(LocalizationMatrix { lattice, profile })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let pts = self.lattice.points();
        let d = pts[col].sub(pts[row], self.lattice.n());
        self.profile[self.lattice.index_of(d).expect("lattice is a group")]
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let len = self.lattice.len();
        DMatrix::from_fn(len, len, |i, j| self.entry(i, j))
    }
}

pub fn gram_localization(window: &OperatorWindow, lattice: &Lattice) -> Result<LocalizationMatrix> {
    let n = window.n();
    if lattice.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: lattice.n() });
    }
    let r = window.rank();
    let p = window.phis();
    let qq = window.psi_matrix().adjoint() * window.psi_matrix();
    // M_d[m, m'] = p_m^* pi(d) p_m' = conj(V_{p_m'} p_m (d))
    let mut stfts = vec![Vec::new(); r * r];
    for m in 0..r {
        for mp in 0..r {
            stfts[m * r + mp] = stft(&p[m], &p[mp], lattice)?;
        }
    }
    let profile = (0..lattice.len())
        .into_par_iter()
        .map(|d| {
            let md = CMatrix::from_fn(r, r, |m, mp| stfts[m * r + mp][d].conj());
            // ||Q M Q^*||_F^2 = trace(Q^*Q M Q^*Q M^*)
            let t = &qq * &md * &qq * md.adjoint();
            t.trace().re.max(0.0).sqrt()
        })
        .collect();
    Ok(LocalizationMatrix { lattice: lattice.clone(), profile })
}

/// Power-law fit `entry ~ C (1 + |lambda - mu|)^{-s}`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct DecayFit {
    pub s_hat: f64,
    pub c_hat: f64,
    pub r2: f64,
}

/// Entries at or below this fraction of the largest entry are treated as zero.
pub const DECAY_FIT_FLOOR: f64 = 1e-14;

/// Least-squares fit of `log entry` against `log(1 + d_wrap)` over all
/// off-diagonal pairs. Every difference occurs `|Lambda|` times among the
/// pairs, so the fit runs over the profile with uniform weights.
pub fn fit_decay_exponent(gram: &LocalizationMatrix) -> Result<DecayFit> {
    let n = gram.lattice.n();
    let max = gram.profile.iter().copied().fold(0.0, f64::max);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut distances = Vec::new();
    for (p, &v) in gram.lattice.points().iter().zip(&gram.profile) {
        if *p == LatticePoint::ORIGIN || v <= DECAY_FIT_FLOOR * max || v <= 0.0 {
            continue;
        }
        let d = wrapped_distance(*p, LatticePoint::ORIGIN, n);
        distances.push(d);
        xs.push((1.0 + d).ln());
        ys.push(v.ln());
    }
    distances.sort_by(f64::total_cmp);
    distances.dedup();
    if distances.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} distinct distances, need 3", distances.len())));
    }
    let LinearFit { slope, intercept, r2 } = linear_fit(&xs, &ys);
    Ok(DecayFit { s_hat: -slope, c_hat: intercept.exp(), r2 })
}

/// `(sum_lambda ||C_Phi F(lambda)||^2, trace(F^* S0 F))`.
pub fn hs_parseval_check(f: &HSOperator, window: &OperatorWindow, lattice: &Lattice) -> Result<(f64, f64)> {
    let coeffs = op_stft_analyze(f, window, lattice)?;
    let lhs = coeffs.hs_norms().iter().map(|v| v * v).sum();
    let s0 = frame_operator(window, lattice)?;
    let rhs = (f.matrix().adjoint() * s0.matrix() * f.matrix()).trace().re;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tf::{gaussian_window, stft_full, tf_shift};

    fn random_op(n: usize, seed: u64) -> HSOperator {
        let mut rng = RngStream::new(seed);
        HSOperator::new(CMatrix::from_fn(n, n, |_, _| rng.complex_normal())).unwrap()
    }

    fn random_window(n: usize, r: usize, seed: u64) -> OperatorWindow {
        let mut rng = RngStream::new(seed);
        let mut sig = || Signal::new((0..n).map(|_| rng.complex_normal()).collect()).unwrap();
        let phis = (0..r).map(|_| sig()).collect();
        let psis = (0..r).map(|_| sig()).collect();
        OperatorWindow::new(phis, psis).unwrap()
    }

    fn rel(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn hs_inner_is_trace_form() {
        let f = random_op(5, 1);
        let g = random_op(5, 2);
        let direct = (g.matrix().adjoint() * f.matrix()).trace();
        assert!((f.hs_inner(&g) - direct).norm() < 1e-12);
        assert!((f.hs_inner(&f).re - f.frobenius_norm().powi(2)).abs() < 1e-10);
    }

    #[test]
    fn flags_detect_structure() {
        let f = random_op(6, 3);
        let psd = HSOperator::from_matrix_unchecked(f.matrix() * f.matrix().adjoint());
        assert_eq!(psd.flags(), OperatorFlags { self_adjoint: true, psd: true });
        assert!(!f.is_self_adjoint());
        let neg = psd.scaled(-1.0);
        assert_eq!(neg.flags(), OperatorFlags { self_adjoint: true, psd: false });
    }

    #[test]
    fn outer_matches_definition() {
        let n = 6;
        let w = random_window(n, 1, 4);
        let h = Signal::basis(n, 2);
        let phi = &w.phis()[0];
        let psi = &w.psis()[0];
        let lhs = w.densify().apply(&h);
        let rhs = phi.scaled(h.inner(psi));
        assert!((lhs.vector() - rhs.vector()).norm() < 1e-13 * rhs.norm());
    }

    #[test]
    fn analysis_identity_with_gaussian() {
        let n = 16;
        let lat = Lattice::new(n, 2, 4).unwrap();
        let g = gaussian_window(n);
        let w = OperatorWindow::rank_one(&g);
        let c = op_stft_analyze(&HSOperator::identity(n), &w, &lat).unwrap();
        for (i, p) in lat.points().iter().enumerate() {
            let expect = tf_shift(&g, *p);
            let got = &c.block_signals(i)[0];
            let diff: f64 = got.as_slice().iter().zip(expect.as_slice()).map(|(a, b)| (a - b).norm()).sum();
            assert!(diff < 1e-12);
            assert!((c.block_hs_norm(i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn factorized_analysis_matches_dense() {
        let n = 8;
        let lat = Lattice::new(n, 2, 1).unwrap();
        let f = random_op(n, 5);
        for r in [1, 3] {
            let w = random_window(n, r, 6 + r as u64);
            let fast = op_stft_analyze(&f, &w, &lat).unwrap();
            let dense = op_stft_analyze_dense(&f, &w, &lat).unwrap();
            for (i, d) in dense.iter().enumerate() {
                assert!(rel(fast.densify(i).matrix(), d.matrix()) < 1e-12);
                assert!((fast.block_hs_norm(i) - d.frobenius_norm()).abs() < 1e-12 * d.frobenius_norm());
            }
        }
    }

    #[test]
    fn rank_one_block_norm_is_vector_norm() {
        let n = 8;
        let lat = Lattice::new(n, 2, 2).unwrap();
        let g = gaussian_window(n);
        let w = OperatorWindow::rank_one(&g);
        let f = random_op(n, 9);
        let h = HSOperator::from_matrix_unchecked(f.matrix() + f.matrix().adjoint());
        let c = op_stft_analyze(&h, &w, &lat).unwrap();
        for (i, p) in lat.points().iter().enumerate() {
            let v = h.apply(&tf_shift(&g, *p)).norm();
            assert!((c.block_hs_norm(i) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn synthesis_edge_cases_and_dense_agreement() {
        let n = 8;
        let lat = Lattice::new(n, 2, 2).unwrap();
        let w = random_window(n, 2, 10);
        let zero = CoefficientField::zeros(lat.clone(), w.psi_matrix().clone());
        assert_eq!(op_synthesize(&zero, &w, &lat).unwrap().frobenius_norm(), 0.0);

        // single block at the origin with G = Phi^*
        let mut single = CoefficientField::zeros(lat.clone(), w.psi_matrix().clone());
        single.set_block(0, w.phi_matrix().clone()).unwrap();
        assert!(rel(single.densify(0).matrix(), w.densify().adjoint().matrix()) < 1e-14);
        let out = op_synthesize(&single, &w, &lat).unwrap();
        let expect = w.densify().matrix() * w.densify().adjoint().matrix();
        assert!(rel(out.matrix(), &expect) < 1e-12);

        let f = random_op(n, 11);
        let coeffs = op_stft_analyze(&f, &w, &lat).unwrap();
        let syn = random_window(n, 3, 12);
        let fast = op_synthesize(&coeffs, &syn, &lat).unwrap();
        let blocks: Vec<_> = (0..lat.len()).map(|i| coeffs.densify(i)).collect();
        let dense = op_synthesize_dense(&blocks, &syn, &lat).unwrap();
        assert!(rel(fast.matrix(), dense.matrix()) < 1e-12);

        let other = Lattice::new(n, 4, 2).unwrap();
        assert!(matches!(op_synthesize(&coeffs, &syn, &other), Err(Error::LatticeMismatch)));
    }

    #[test]
    fn frame_operator_closed_form_matches_sum() {
        let n = 12;
        for (a, b) in [(1, 1), (2, 3), (3, 2), (4, 4)] {
            let lat = Lattice::new(n, a, b).unwrap();
            let w = random_window(n, 2, 13);
            let s0 = frame_operator(&w, &lat).unwrap();
            let m = w.densify().matrix() * w.densify().adjoint().matrix();
            let mut brute = CMatrix::zeros(n, n);
            for l in lat.points() {
                let p = tf_shift_matrix(*l, n);
                brute += &p * &m * p.adjoint();
            }
            assert!(rel(s0.matrix(), &brute) < 1e-12, "a={a} b={b}");
        }
    }

    #[test]
    fn full_lattice_unit_window_is_tight() {
        let n = 8;
        let lat = Lattice::full(n).unwrap();
        let w = OperatorWindow::rank_one(&gaussian_window(n));
        let s0 = frame_operator(&w, &lat).unwrap();
        let expect = CMatrix::identity(n, n) * C64::new(n as f64, 0.0);
        assert!(rel(s0.matrix(), &expect) < 1e-12);
        let (a, b) = frame_bounds(&s0).unwrap();
        assert!((a - n as f64).abs() < 1e-10 && (b - n as f64).abs() < 1e-10);
        assert!(s0.hermitian_eigenvalues().iter().all(|v| *v >= -1e-12));
        let dual = canonical_dual_window(&w, &lat).unwrap();
        let expect = w.densify().scaled(1.0 / a);
        assert!(rel(dual.densify().matrix(), expect.matrix()) < 1e-12);
    }

    #[test]
    fn frame_operator_commutes_with_lattice_shifts() {
        let n = 12;
        let lat = Lattice::new(n, 3, 2).unwrap();
        let s0 = frame_operator(&random_window(n, 2, 14), &lat).unwrap();
        for l in lat.points() {
            let p = tf_shift_matrix(*l, n);
            let comm = s0.matrix() * &p - &p * s0.matrix();
            assert!(comm.norm() <= 1e-10 * s0.frobenius_norm());
        }
    }

    #[test]
    fn not_a_frame_is_reported() {
        let n = 8;
        // one lattice point cannot cover an 8-dimensional space with a rank-1 window
        let lat = Lattice::new(n, 8, 8).unwrap();
        let w = OperatorWindow::rank_one(&gaussian_window(n));
        assert!(matches!(FrameSystem::new(w.clone(), lat.clone()), Err(Error::NotAFrame { .. })));
        assert!(matches!(canonical_dual_window(&w, &lat), Err(Error::NotAFrame { .. })));
    }

    #[test]
    fn reconstruction_both_ways() {
        let n = 16;
        let lat = Lattice::new(n, 2, 2).unwrap();
        let w = OperatorWindow::rank_one(&gaussian_window(n));
        let fs = FrameSystem::new(w.clone(), lat.clone()).unwrap();
        let f = random_op(n, 15);
        let back = fs.reconstruct(&fs.analyze(&f).unwrap()).unwrap();
        assert!(rel(back.matrix(), f.matrix()) < 1e-8);
        let swapped = op_synthesize(&op_stft_analyze(&f, fs.dual_window(), &lat).unwrap(), &w, &lat).unwrap();
        assert!(rel(swapped.matrix(), f.matrix()) < 1e-8);
        assert!(rel(swapped.matrix(), back.matrix()) < 1e-8);
    }

    #[test]
    fn dual_keeps_rank() {
        let n = 16;
        let lat = Lattice::new(n, 2, 2).unwrap();
        let g = gaussian_window(n);
        let vecs: Vec<Signal> = (0..3).map(|k| tf_shift(&g, LatticePoint { x: k, omega: 2 * k })).collect();
        let w = OperatorWindow::projector(&vecs).unwrap();
        let dual = canonical_dual_window(&w, &lat).unwrap();
        assert_eq!(dual.rank(), 3);
        assert_eq!(dual.numerical_rank(), 3);
    }

    #[test]
    fn gram_rank_one_is_stft_modulus() {
        let n = 16;
        let lat = Lattice::new(n, 2, 2).unwrap();
        let g = gaussian_window(n);
        let gram = gram_localization(&OperatorWindow::rank_one(&g), &lat).unwrap();
        let v = stft_full(&g, &g).unwrap();
        let dense = gram.dense();
        for (i, l) in lat.points().iter().enumerate() {
            for (j, m) in lat.points().iter().enumerate() {
                let expect = v.get(l.sub(*m, n)).norm();
                assert!((dense[(i, j)] - expect).abs() < 1e-12);
                assert!((dense[(i, j)] - dense[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_general_window_matches_dense_norm() {
        let n = 8;
        let lat = Lattice::new(n, 2, 2).unwrap();
        let w = random_window(n, 2, 16);
        let gram = gram_localization(&w, &lat).unwrap();
        let d = w.densify();
        let dd = d.adjoint().matrix() * d.matrix();
        for (i, l) in lat.points().iter().enumerate() {
            assert!((gram.entry(i, i) - dd.norm()).abs() < 1e-10 * dd.norm());
            for (j, m) in lat.points().iter().enumerate() {
                let op = d.adjoint().matrix() * tf_shift_matrix(*l, n).adjoint() * tf_shift_matrix(*m, n) * d.matrix();
                assert!((gram.entry(i, j) - op.norm()).abs() < 1e-10 * dd.norm());
            }
        }
    }

    #[test]
    fn decay_fit_recovers_planted_and_constant() {
        let lat = Lattice::new(24, 1, 1).unwrap();
        let profile: Vec<f64> = lat
            .points()
            .iter()
            .map(|p| (1.0 + wrapped_distance(*p, LatticePoint::ORIGIN, 24)).powf(-3.0))
            .collect();
        let fit = fit_decay_exponent(&LocalizationMatrix::from_profile(lat.clone(), profile).unwrap()).unwrap();
        assert!((fit.s_hat - 3.0).abs() < 1e-6);
        assert!(fit.r2 > 0.999999);
        assert!((fit.c_hat - 1.0).abs() < 1e-6);
        let flat = LocalizationMatrix::from_profile(lat.clone(), vec![0.5; lat.len()]).unwrap();
        let fit = fit_decay_exponent(&flat).unwrap();
        assert!(fit.s_hat.abs() < 1e-12);
        let tiny = Lattice::new(2, 1, 1).unwrap();
        let few = LocalizationMatrix::from_profile(tiny, vec![1.0; 4]).unwrap();
        assert!(matches!(fit_decay_exponent(&few), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn gaussian_decay_exponent_grows_with_n() {
        let fit_for = |n: usize| {
            let lat = Lattice::full(n).unwrap();
            let gram = gram_localization(&OperatorWindow::rank_one(&gaussian_window(n)), &lat).unwrap();
            fit_decay_exponent(&gram).unwrap().s_hat
        };
        let (s16, s32) = (fit_for(16), fit_for(32));
        assert!(s16 > 1.0 && s32 > s16, "{s16} {s32}");
    }

    #[test]
    fn parseval_identity() {
        let n = 8;
        let full = Lattice::full(n).unwrap();
        let w = OperatorWindow::rank_one(&gaussian_window(n));
        assert_eq!(hs_parseval_check(&HSOperator::zeros(n), &w, &full).unwrap(), (0.0, 0.0));
        let f = random_op(n, 17);
        let (lhs, rhs) = hs_parseval_check(&f, &w, &full).unwrap();
        let tight = n as f64 * f.frobenius_norm().powi(2);
        assert!((lhs - tight).abs() < 1e-10 * tight && (rhs - tight).abs() < 1e-10 * tight);

        let n = 16;
        let lat = Lattice::new(n, 2, 2).unwrap();
        let f = random_op(n, 18);
        let (lhs, rhs) = hs_parseval_check(&f, &random_window(n, 2, 19), &lat).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * rhs);
    }
}
