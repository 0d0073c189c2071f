//! Greedy best-K-term approximation in the canonical operator dictionary,
//! error metrics, sequence-space quasi-norms and decay fits.
//!
//! The selector keeps the `K` lattice points with the largest coefficient
//! norms `||Phi^* pi(lambda)^* F||_HS` and resynthesizes with the canonical
//! dual window. Two tail sequences are exposed: the coefficient tail
//! `sigma_m(a)` and the realized greedy reconstruction error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hs::{CMatrix, CoefficientField, FrameSystem, HSOperator, SynthesisAtoms};
use crate::rng::RngStream;
use crate::stats::linear_fit;
use crate::tf::{Lattice, Weight};

/// Errors at or below this level are excluded from decay fits.
pub const FIT_ERROR_FLOOR: f64 = 1e-7;

/// Quasi-norm exponents reported by default.
pub const DEFAULT_P_GRID: [f64; 4] = [0.25, 0.5, 1.0, 1.5];

/// Lattice indices sorted by descending coefficient norm.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedCoefficients {
    order: Vec<usize>,
    norms: Vec<f64>,
}

impl RankedCoefficients {
    /// Ties keep lattice order, which is lexicographic in `(x, w)`.
    pub fn from_norms(norms: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..norms.len()).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        let sorted = order.iter().map(|&i| norms[i]).collect();
        RankedCoefficients { order, norms: sorted }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `Lambda_K`, the first `k` indices.
    pub fn selected(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }
}

pub fn rank_coefficients(coeffs: &CoefficientField) -> RankedCoefficients {
    RankedCoefficients::from_norms(&coeffs.hs_norms())
}

/// Analysis, ranking and synthesis atoms of one operator, reused across budgets.
pub struct GreedyApproximation<'a> {
    frame: &'a FrameSystem,
    target: HSOperator,
    coeffs: CoefficientField,
    ranked: RankedCoefficients,
    atoms: SynthesisAtoms,
}

impl<'a> GreedyApproximation<'a> {
    pub fn new(target: &HSOperator, frame: &'a FrameSystem) -> Result<Self> {
        let coeffs = frame.analyze(target)?;
        Self::from_coefficients(target, frame, coeffs)
    }

    /// Approximates `target` from coefficients computed elsewhere, e.g. of a
    /// noisy observation.
    pub fn from_coefficients(target: &HSOperator, frame: &'a FrameSystem, coeffs: CoefficientField) -> Result<Self> {
        if coeffs.lattice() != frame.lattice() {
            return Err(Error::LatticeMismatch);
        }
        let ranked = rank_coefficients(&coeffs);
        let atoms = SynthesisAtoms::new(coeffs.window_psis(), frame.dual_window(), frame.lattice())?;
        Ok(GreedyApproximation { frame, target: target.clone(), coeffs, ranked, atoms })
    }

    pub fn coefficients(&self) -> &CoefficientField {
        &self.coeffs
    }

    pub fn ranked(&self) -> &RankedCoefficients {
        &self.ranked
    }

    pub fn frame(&self) -> &FrameSystem {
        self.frame
    }

    pub fn target(&self) -> &HSOperator {
        &self.target
    }

    pub fn reconstruct(&self, k: usize) -> Result<HSOperator> {
        let max = self.ranked.len();
        if k > max {
            return Err(Error::OutOfRange { k, max });
        }
        let n = self.target.n();
        let mut acc = CMatrix::zeros(n, n);
        self.atoms.accumulate(&self.coeffs, self.ranked.selected(k), &mut acc);
        Ok(HSOperator::from_matrix_unchecked(acc))
    }

    /// Calls `visit(k, F_hat_k)` for every budget in `ks` (ascending after
    /// sorting), building each reconstruction from the previous one.
    pub fn for_each_budget(&self, ks: &[usize], mut visit: impl FnMut(usize, &HSOperator) -> Result<()>) -> Result<()> {
        let max = self.ranked.len();
        let mut sorted = ks.to_vec();
        sorted.sort_unstable();
        if let Some(&k) = sorted.iter().find(|&&k| k > max) {
            return Err(Error::OutOfRange { k, max });
        }
        let n = self.target.n();
        let mut acc = CMatrix::zeros(n, n);
        let mut done = 0;
        for k in sorted {
            self.atoms.accumulate(&self.coeffs, &self.ranked.order()[done..k], &mut acc);
            done = k;
            let f_hat = HSOperator::from_matrix_unchecked(acc.clone());
            visit(k, &f_hat)?;
        }
        Ok(())
    }

    /// Relative errors `||target - F_hat_k|| / ||target||`, in the order of `ks`.
    pub fn error_curve(&self, ks: &[usize]) -> Result<Vec<f64>> {
        let reference = self.target.frobenius_norm();
        if reference == 0.0 {
            return Err(Error::ZeroReference);
        }
        let mut by_k = std::collections::HashMap::new();
        self.for_each_budget(ks, |k, f_hat| {
            by_k.insert(k, self.target.sub(f_hat).frobenius_norm() / reference);
            Ok(())
        })?;
        Ok(ks.iter().map(|k| by_k[k]).collect())
    }

    /// Relative errors for every budget `0..=|Lambda|`.
    pub fn full_error_curve(&self) -> Result<Vec<f64>> {
        let reference = self.target.frobenius_norm();
        if reference == 0.0 {
            return Err(Error::ZeroReference);
        }
        let n = self.target.n();
        let r = self.coeffs.window_rank();
        let mut residual = self.target.matrix().clone();
        let mut out = Vec::with_capacity(self.ranked.len() + 1);
        out.push(1.0);
        for &i in self.ranked.order() {
            // residual -= atom * block^*
            let atom = self.atoms.atom(i);
            let block = self.coeffs.block(i);
            for m in 0..r {
                residual.gerc(crate::tf::C64::new(-1.0, 0.0), &atom.column(m), &block.column(m), crate::tf::C64::new(1.0, 0.0));
            }
            out.push(residual.norm() / reference);
        }
        debug_assert_eq!(residual.nrows(), n);
        Ok(out)
    }
}

/// Greedy `K`-term reconstruction and the selected lattice indices.
pub fn best_k_reconstruct(f: &HSOperator, frame: &FrameSystem, k: usize) -> Result<(HSOperator, Vec<usize>)> {
    let max = frame.lattice().len();
    if k > max {
        return Err(Error::OutOfRange { k, max });
    }
    let greedy = GreedyApproximation::new(f, frame)?;
    let f_hat = greedy.reconstruct(k)?;
    Ok((f_hat, greedy.ranked().selected(k).to_vec()))
}

/// `||F - F_hat||_F / ||F||_F`.
pub fn app_err(f: &HSOperator, f_hat: &HSOperator) -> Result<f64> {
    let reference = f.frobenius_norm();
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(f.sub(f_hat).frobenius_norm() / reference)
}

/// Monte-Carlo mean of `||(F - F_hat) eta|| / ||F eta||` over complex normal
/// probes. Probes with `F eta = 0` are skipped.
pub fn white_noise_error(f: &HSOperator, f_hat: &HSOperator, trials: usize, rng: &mut RngStream) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidParameter("white-noise error needs trials >= 1".into()));
    }
    let n = f.n();
    let probes = CMatrix::from_fn(n, trials, |_, _| rng.complex_normal());
    let clean = f.matrix() * &probes;
    let diff = (f.matrix() - f_hat.matrix()) * &probes;
    let mut sum = 0.0;
    let mut used = 0usize;
    for t in 0..trials {
        let denom = clean.column(t).norm();
        if denom == 0.0 {
            continue;
        }
        sum += diff.column(t).norm() / denom;
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateProbe { trials });
    }
    Ok(sum / used as f64)
}

/// `sigma_m = (sum_{j > m} a_j^2)^{1/2}` for `m = 0..=len`.
pub fn sigma_tail_of(sorted: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; sorted.len() + 1];
    let mut acc = 0.0;
    for (m, a) in sorted.iter().enumerate().rev() {
        acc += a * a;
        out[m] = acc.sqrt();
    }
    out
}

pub fn sigma_tail(ranked: &RankedCoefficients) -> Vec<f64> {
    sigma_tail_of(ranked.norms())
}

/// `(sum_lambda (norm_lambda w(lambda))^p)^{1/p}`; `norms` in lattice order.
pub fn lp_quasi_norm(norms: &[f64], p: f64, weight: &Weight, lattice: &Lattice) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be positive")));
    }
    if norms.len() != lattice.len() {
        return Err(Error::DimensionMismatch { expected: lattice.len(), found: norms.len() });
    }
    weight.validate(lattice)?;
    Ok(lp_sum(norms.iter().enumerate().map(|(i, v)| v * weight.value(lattice, i)), p))
}

fn lp_sum(values: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p == f64::INFINITY {
        return values.map(f64::abs).fold(0.0, f64::max);
    }
    // scale by the max to keep small p well conditioned
    let v: Vec<f64> = values.map(f64::abs).collect();
    let max = v.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    max * v.iter().map(|x| (x / max).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// `(sum_{m >= 1} (m^alpha sigma_{m-1})^p / m)^{1/p}`, or the supremum of
/// `m^alpha sigma_{m-1}` for `p = inf`. `sigma[m]` holds `sigma_m`.
pub fn approx_space_norm(sigma: &[f64], alpha: f64, p: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(p > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha}, p = {p} must be positive")));
    }
    let terms = sigma.iter().enumerate().map(|(i, s)| ((i + 1) as f64).powf(alpha) * s);
    if p == f64::INFINITY {
        return Ok(terms.fold(0.0, f64::max));
    }
    let weighted = terms.enumerate().map(|(i, t)| t * ((i + 1) as f64).powf(-1.0 / p));
    Ok(lp_sum(weighted, p))
}

/// Both directions of the two-sided equivalence between the approximation
/// quasi-norm and `||a||_p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StechkinRatios {
    /// `||a||_p / |a|_{A}`.
    pub lower_ratio: f64,
    /// `|a|_{A} / ||a||_p`.
    pub upper_ratio: f64,
}

/// Ratio of `(sum_m (m^alpha sigma_{m-1}(a))^p / m)^{1/p}` to `||a||_p`
/// with `alpha = 1/p - 1/2`.
pub fn stechkin_check(a: &[f64], p: f64) -> Result<StechkinRatios> {
    if !(p > 0.0 && p < 2.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must lie in (0, 2)")));
    }
    for (i, w) in a.windows(2).enumerate() {
        if w[1] > w[0] + 1e-12 {
            return Err(Error::NotMonotone { index: i + 1 });
        }
    }
    if a.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidParameter("sequence must be nonnegative".into()));
    }
    let lp = lp_sum(a.iter().copied(), p);
    if lp == 0.0 {
        return Err(Error::ZeroReference);
    }
    let sigma = sigma_tail_of(a);
    // sigma_len = 0 contributes nothing
    let approx = approx_space_norm(&sigma[..a.len()], 1.0 / p - 0.5, p)?;
    let r = approx / lp;
    Ok(StechkinRatios { lower_ratio: 1.0 / r, upper_ratio: r })
}

/// `sup_m (m+1)^alpha AppErr(m) ||F|| / ||a||_p`, `alpha = 1/p - 1/2`,
/// over the realized greedy curve.
pub fn rate_check(f: &HSOperator, frame: &FrameSystem, p: f64) -> Result<f64> {
    let greedy = GreedyApproximation::new(f, frame)?;
    rate_check_with(&greedy, p)
}

pub fn rate_check_with(greedy: &GreedyApproximation<'_>, p: f64) -> Result<f64> {
    Ok(rate_checks(greedy, &[p])?[0])
}

/// [`rate_check_with`] for several `p` sharing one greedy error curve.
pub fn rate_checks(greedy: &GreedyApproximation<'_>, ps: &[f64]) -> Result<Vec<f64>> {
    if let Some(&p) = ps.iter().find(|&&p| !(p > 0.0 && p < 2.0)) {
        return Err(Error::InvalidParameter(format!("p = {p} must lie in (0, 2)")));
    }
    let fnorm = greedy.target().frobenius_norm();
    let curve = greedy.full_error_curve()?;
    ps.iter()
        .map(|&p| {
            let alpha = 1.0 / p - 0.5;
            let lp = lp_sum(greedy.ranked().norms().iter().copied(), p);
            if lp == 0.0 {
                return Err(Error::ZeroReference);
            }
            Ok(curve
                .iter()
                .enumerate()
                .map(|(m, e)| ((m + 1) as f64).powf(alpha) * e * fnorm / lp)
                .fold(0.0, f64::max))
        })
        .collect()
}

/// Power-law rate of an error curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayRate {
    pub rate: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least-squares slope of `log err` against `log K` over `K > 0`,
/// `err > FIT_ERROR_FLOOR`.
pub fn fit_error_decay(ks: &[usize], errs: &[f64]) -> Result<DecayRate> {
    if ks.len() != errs.len() {
        return Err(Error::DimensionMismatch { expected: ks.len(), found: errs.len() });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = ks
        .iter()
        .zip(errs)
        .filter(|(k, e)| **k > 0 && **e > FIT_ERROR_FLOOR)
        .map(|(k, e)| ((*k as f64).ln(), e.ln()))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} usable points, need 3", xs.len())));
    }
    let fit = linear_fit(&xs, &ys);
    Ok(DecayRate { rate: fit.slope, r2: fit.r2, points: xs.len() })
}

/// Quasi-norm entry of a report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuasiNormEntry {
    pub p: f64,
    pub alpha: f64,
    /// `||(||C F(lambda)||)_lambda||_p`.
    pub coefficient_lp: f64,
    /// Approximation-space quasi-norm of the coefficient tail.
    pub approx_space: f64,
}

/// Per-`K` error curves and sparsity diagnostics of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxReport {
    pub ks: Vec<usize>,
    pub app_err: Vec<f64>,
    pub wne: Option<Vec<f64>>,
    /// `sigma_K(a)` at each `K`.
    pub sigma_tail: Vec<f64>,
    pub quasi_norms: Vec<QuasiNormEntry>,
    pub fit: Option<DecayRate>,
    /// Ranked lattice indices; `Lambda_K` is the first `K` entries.
    pub ranked_order: Vec<usize>,
    pub coefficient_count: usize,
}

impl ApproxReport {
    pub fn selected(&self, k: usize) -> &[usize] {
        &self.ranked_order[..k.min(self.ranked_order.len())]
    }
}

/// Options for [`approx_report`].
#[derive(Clone, Debug)]
pub struct ReportOptions {
    pub p_grid: Vec<f64>,
    /// `(trials, seed)` for white-noise probes.
    pub white_noise: Option<(usize, u64)>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { p_grid: DEFAULT_P_GRID.to_vec(), white_noise: None }
    }
}

pub fn approx_report(greedy: &GreedyApproximation<'_>, ks: &[usize], opts: &ReportOptions) -> Result<ApproxReport> {
    let reference = greedy.target().frobenius_norm();
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    let mut errs = std::collections::HashMap::new();
    let mut wnes = std::collections::HashMap::new();
    greedy.for_each_budget(ks, |k, f_hat| {
        errs.insert(k, greedy.target().sub(f_hat).frobenius_norm() / reference);
        if let Some((trials, seed)) = opts.white_noise {
            // same probes for every K
            let mut rng = RngStream::new(seed);
            wnes.insert(k, white_noise_error(greedy.target(), f_hat, trials, &mut rng)?);
        }
        Ok(())
    })?;
    let app_err: Vec<f64> = ks.iter().map(|k| errs[k]).collect();
    let wne = opts.white_noise.map(|_| ks.iter().map(|k| wnes[k]).collect());
    let tail = sigma_tail(greedy.ranked());
    let sigma_tail = ks.iter().map(|&k| tail[k]).collect();
    let mut quasi_norms = Vec::new();
    for &p in &opts.p_grid {
        let alpha = 1.0 / p - 0.5;
        let coefficient_lp = lp_sum(greedy.ranked().norms().iter().copied(), p);
        let approx_space = if alpha > 0.0 { approx_space_norm(&tail, alpha, p)? } else { f64::NAN };
        quasi_norms.push(QuasiNormEntry { p, alpha, coefficient_lp, approx_space });
    }
    let fit = fit_error_decay(ks, &app_err).ok();
    Ok(ApproxReport {
        ks: ks.to_vec(),
        app_err,
        wne,
        sigma_tail,
        quasi_norms,
        fit,
        ranked_order: greedy.ranked().order().to_vec(),
        coefficient_count: greedy.ranked().len(),
    })
}
