//! Analysis windows used by the experiments.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{gabor_multiplier, Mask};
use crate::hs::{CMatrix, HSOperator, OperatorWindow};
use crate::rng::RngStream;
use crate::tf::{gaussian_window, tf_shift, LatticePoint, Signal, C64};

/// Eigenpairs below this fraction of the largest eigenvalue are dropped
/// from the full-rank window.
pub const FULL_RANK_CUTOFF: f64 = 1e-13;

/// `phi_0 (x) phi_0` for the finite Gaussian.
pub fn gaussian_rank_one(n: usize) -> OperatorWindow {
    OperatorWindow::rank_one(&gaussian_window(n))
}

/// Projector onto `rank` time-frequency shifted Gaussians. The first shift
/// is the origin; the others are distinct and drawn uniformly from the
/// box `|x|, |w| <= floor(sqrt(N) / 2)`.
pub fn multi_gaussian(n: usize, rank: usize, rng: &mut RngStream) -> Result<OperatorWindow> {
    if rank == 0 || rank > n {
        return Err(Error::InvalidParameter(format!("rank {rank} outside 1..={n}")));
    }
    let half = ((n as f64).sqrt() / 2.0).floor() as i64;
    let side = (2 * half + 1) as usize;
    if rank > side * side {
        return Err(Error::InvalidParameter(format!("rank {rank} exceeds {} available shifts", side * side)));
    }
    let g = gaussian_window(n);
    let mut shifts = vec![LatticePoint::ORIGIN];
    while shifts.len() < rank {
        let x = rng.below(side) as i64 - half;
        let w = rng.below(side) as i64 - half;
        let z = LatticePoint::new(x, w, n);
        if !shifts.contains(&z) {
            shifts.push(z);
        }
    }
    let atoms: Vec<Signal> = shifts.iter().map(|&z| tf_shift(&g, z)).collect();
    OperatorWindow::projector(&atoms)
}

/// Eigenpairs of a Hermitian matrix, eigenvalues descending.
pub(crate) fn hermitian_eigen_desc(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Projector onto the `rank` leading left singular vectors of `f`, i.e.
/// the top eigenvectors of `F F^*`.
pub fn eigenfunction_window(f: &HSOperator, rank: usize) -> Result<OperatorWindow> {
    let n = f.n();
    if rank == 0 || rank > n {
        return Err(Error::InvalidParameter(format!("rank {rank} outside 1..={n}")));
    }
    let ff = f.matrix() * f.matrix().adjoint();
    let (_, vectors) = hermitian_eigen_desc(&ff);
    let q = vectors.columns(0, rank).into_owned();
    OperatorWindow::from_matrices(q.clone(), q)
}

/// Localization operator of the Gaussian under the mask
/// `exp(-pi d(z, 0)^2 / (spread N))`, factored as `sum_k mu_k v_k (x) v_k`
/// over the eigenpairs with `mu_k > FULL_RANK_CUTOFF * mu_max`.
///
/// Its eigenvalues decay geometrically, so it is the finite stand-in for a
/// localized window of infinite rank.
pub fn localized_full_rank(n: usize, spread: f64) -> Result<OperatorWindow> {
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::InvalidParameter(format!("spread {spread} must be positive")));
    }
    let width = (spread * n as f64).sqrt();
    let mask = Mask::gaussian_blobs(n, &[(LatticePoint::ORIGIN, width)]);
    let h = gabor_multiplier(&mask, &gaussian_window(n))?;
    let (values, vectors) = hermitian_eigen_desc(h.matrix());
    let top = values[0];
    let keep = values.iter().take_while(|&&mu| mu > FULL_RANK_CUTOFF * top).count().max(1);
    let mut phis = vectors.columns(0, keep).into_owned();
    for (k, mut col) in phis.column_iter_mut().enumerate() {
        col *= C64::new(values[k].sqrt(), 0.0);
    }
    OperatorWindow::from_matrices(phis.clone(), phis)
}

/// Window families selectable from configurations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowSpec {
    GaussianRank1,
    MultiGaussian { rank: usize },
    /// Leading eigenvectors of the analyzed operator.
    Eigenfunctions { rank: usize },
    FullRank,
}

impl WindowSpec {
    /// Builds the window. `source` is needed for eigenfunction windows.
    pub fn build(&self, n: usize, source: Option<&HSOperator>, rng: &mut RngStream) -> Result<OperatorWindow> {
        match *self {
            WindowSpec::GaussianRank1 => Ok(gaussian_rank_one(n)),
            WindowSpec::MultiGaussian { rank: 1 } => Ok(gaussian_rank_one(n)),
            WindowSpec::MultiGaussian { rank } => multi_gaussian(n, rank, rng),
            WindowSpec::Eigenfunctions { rank } => {
                let f = source.ok_or_else(|| Error::InvalidParameter("eigenfunction window needs an operator".into()))?;
                eigenfunction_window(f, rank)
            }
            WindowSpec::FullRank => localized_full_rank(n, 1.0),
        }
    }

    pub fn label(&self) -> String {
        match self {
            WindowSpec::GaussianRank1 => "gaussian".into(),
            WindowSpec::MultiGaussian { rank } => format!("multi-gaussian-{rank}"),
            WindowSpec::Eigenfunctions { rank } => format!("eigen-{rank}"),
            WindowSpec::FullRank => "full-rank".into(),
        }
    }
}
