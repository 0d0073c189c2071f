//! Test-operator families: spreading (Fourier-Wigner) operators, Gabor
//! multipliers, mixed states, weighted random spreading operators, dense
//! random baselines and additive noise.

use std::f64::consts::PI;

use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::hs::{CMatrix, HSOperator};
use crate::rng::RngStream;
use crate::tf::{tf_shift, wrapped_distance, GridField, LatticePoint, Signal, C64};

/// Spreading function `eta` of `H = sum_z eta(z) pi(z)`.
pub type SpreadingField = GridField;

/// `H_eta = sum_{z in Z_N^2} eta(z) pi(z)`.
///
/// The `x`-th cyclic diagonal `H[i, i - x]` is the unnormalized inverse DFT
/// of `eta(x, .)`.
pub fn spreading_to_operator(eta: &SpreadingField) -> HSOperator {
    let n = eta.n();
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut h = CMatrix::zeros(n, n);
    for x in 0..n {
        let mut row = eta.values()[x * n..(x + 1) * n].to_vec();
        ifft.process(&mut row);
        for (i, v) in row.into_iter().enumerate() {
            h[(i, (i + n - x) % n)] = v;
        }
    }
    HSOperator::from_matrix_unchecked(h)
}

/// `eta(z) = trace(pi(z)^* H) / N`.
pub fn operator_to_spreading(h: &HSOperator) -> SpreadingField {
    let n = h.n();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let scale = 1.0 / n as f64;
    let mut values = Vec::with_capacity(n * n);
    for x in 0..n {
        let mut diag: Vec<C64> = (0..n).map(|i| h.matrix()[(i, (i + n - x) % n)]).collect();
        fft.process(&mut diag);
        values.extend(diag.into_iter().map(|v| v * scale));
    }
    GridField::from_values(n, values).expect("n*n values")
}

/// `eta(z) = exp(-pi d_wrap(z, 0)^2 / (width N))`.
pub fn gaussian_spreading(n: usize, width: f64) -> Result<SpreadingField> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::InvalidParameter(format!("spreading width {width} must be positive")));
    }
    let denom = width * n as f64;
    Ok(GridField::from_fn(n, |z| {
        let d = wrapped_distance(z, LatticePoint::ORIGIN, n);
        C64::new((-PI * d * d / denom).exp(), 0.0)
    }))
}

/// Real mask on `Z_N x Z_N`, x-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    n: usize,
    values: Vec<f64>,
}

impl Mask {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: values.len() });
        }
        Ok(Mask { n, values })
    }

    pub fn constant(n: usize, v: f64) -> Self {
        Mask { n, values: vec![v; n * n] }
    }

    /// Sum of Gaussian bumps `exp(-pi d_wrap(z, c)^2 / r^2)`.
    pub fn gaussian_blobs(n: usize, blobs: &[(LatticePoint, f64)]) -> Self {
        let values = (0..n * n)
            .map(|i| {
                let z = LatticePoint { x: i / n, omega: i % n };
                blobs
                    .iter()
                    .map(|(c, r)| {
                        let d = wrapped_distance(z, *c, n);
                        (-PI * d * d / (r * r)).exp()
                    })
                    .sum()
            })
            .collect();
        Mask { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, z: LatticePoint) -> f64 {
        self.values[z.x * self.n + z.omega]
    }
}

/// `H = (1/N) sum_z mask(z) pi(z) (g (x) g) pi(z)^*` with `g` normalized.
///
/// Summing the modulations first gives
/// `H[i, j] = (1/N) sum_x g[i-x] conj(g[j-x]) mhat_x(i - j)` where `mhat_x`
/// is the inverse DFT of the mask row at time `x`.
pub fn gabor_multiplier(mask: &Mask, g: &Signal) -> Result<HSOperator> {
    let n = mask.n();
    if g.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: g.len() });
    }
    let g = g.normalized();
    let gs = g.as_slice();
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut h = CMatrix::zeros(n, n);
    for x in 0..n {
        let mut mhat: Vec<C64> = mask.values[x * n..(x + 1) * n].iter().map(|&v| C64::new(v, 0.0)).collect();
        if mhat.iter().all(|v| v.re == 0.0) {
            continue;
        }
        ifft.process(&mut mhat);
        for j in 0..n {
            let gj = gs[(j + n - x) % n].conj();
            for i in 0..n {
                h[(i, j)] += gs[(i + n - x) % n] * gj * mhat[(i + n - j) % n];
            }
        }
    }
    Ok(HSOperator::from_matrix_unchecked(h * C64::new(1.0 / n as f64, 0.0)))
}

/// Parameters of the randomized mixed-state construction.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixedStateParams {
    pub count: usize,
    pub jitter_scale: f64,
    pub jitter_amp: f64,
    pub trace_normalize: bool,
}

impl Default for MixedStateParams {
    fn default() -> Self {
        MixedStateParams { count: 250, jitter_scale: 20.0, jitter_amp: 0.3, trace_normalize: true }
    }
}

/// `sum_k P(pi(z_k) g) + amp^2 P(pi(w_k) g)` with `z_k` uniform on the grid
/// and `w_k` a rounded normal jitter around the origin; `P(v) = v (x) v`.
pub fn mixed_state(g: &Signal, params: &MixedStateParams, rng: &mut RngStream) -> Result<HSOperator> {
    if params.count == 0 {
        return Err(Error::InvalidParameter("mixed state needs count >= 1".into()));
    }
    let n = g.len();
    let mut vecs = CMatrix::zeros(n, 2 * params.count);
    for k in 0..params.count {
        let z = LatticePoint { x: rng.below(n), omega: rng.below(n) };
        let jx = (params.jitter_scale * rng.standard_normal()).round() as i64;
        let jw = (params.jitter_scale * rng.standard_normal()).round() as i64;
        let w = LatticePoint::new(jx, jw, n);
        vecs.set_column(2 * k, tf_shift(g, z).vector());
        vecs.set_column(2 * k + 1, &(tf_shift(g, w).into_vector() * C64::new(params.jitter_amp, 0.0)));
    }
    let mut f = &vecs * vecs.adjoint();
    // exact Hermitian symmetry
    f = (&f + f.adjoint()) * C64::new(0.5, 0.0);
    if params.trace_normalize {
        let tr = f.trace().re;
        f /= C64::new(tr, 0.0);
    }
    Ok(HSOperator::from_matrix_unchecked(f))
}

/// Envelope applied to a random spreading field.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum SpreadingProfile {
    /// `(1 + d_wrap(z, 0))^{-alpha}`.
    Polynomial(f64),
    /// `exp(-pi d_wrap(z, 0)^2 / N)`.
    Gaussian,
}

impl SpreadingProfile {
    pub fn weight(&self, z: LatticePoint, n: usize) -> f64 {
        let d = wrapped_distance(z, LatticePoint::ORIGIN, n);
        match *self {
            SpreadingProfile::Polynomial(alpha) => (1.0 + d).powf(-alpha),
            SpreadingProfile::Gaussian => (-PI * d * d / n as f64).exp(),
        }
    }
}

/// iid complex normal spreading field times the profile envelope.
pub fn weighted_spreading_field(profile: SpreadingProfile, n: usize, rng: &mut RngStream) -> Result<SpreadingField> {
    if let SpreadingProfile::Polynomial(alpha) = profile {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("decay exponent {alpha} must be >= 0")));
        }
    }
    Ok(GridField::from_fn(n, |z| rng.complex_normal() * profile.weight(z, n)))
}

pub fn weighted_fw_operator(profile: SpreadingProfile, n: usize, rng: &mut RngStream) -> Result<HSOperator> {
    Ok(spreading_to_operator(&weighted_spreading_field(profile, n, rng)?))
}

/// iid complex normal entries, unit Frobenius norm.
pub fn random_operator(n: usize, rng: &mut RngStream) -> HSOperator {
    let m = CMatrix::from_fn(n, n, |_, _| rng.complex_normal());
    let nrm = m.norm();
    HSOperator::from_matrix_unchecked(m / C64::new(nrm, 0.0))
}

/// `F + sigma E` with `||E||_F = 1` and `sigma = ||F||_F 10^{-snr/20}`.
/// An infinite SNR returns `F` unchanged.
pub fn add_noise(f: &HSOperator, snr_db: f64, rng: &mut RngStream) -> Result<HSOperator> {
    let fnorm = f.frobenius_norm();
    if fnorm == 0.0 {
        return Err(Error::ZeroReference);
    }
    if snr_db == f64::INFINITY {
        return Ok(f.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidParameter("snr is NaN".into()));
    }
    let e = random_operator(f.n(), rng);
    let sigma = fnorm * 10f64.powf(-snr_db / 20.0);
    Ok(f.add(&e.scaled(sigma)))
}
