//! Finite Weyl-Heisenberg machinery on the cyclic group `Z_N`.
//!
//! Time-frequency shifts follow the convention `pi(x, w) = M_w T_x`, i.e.
//!
//! ```text
//! (pi(x, w) f)[n] = exp(2 pi i w n / N) f[n - x]
//! ```
//!
//! and every phase factor in this crate (composition law, twisted
//! convolution, spreading representation) is derived from that order.
//! Inner products are linear in the first slot and conjugate-linear in the
//! second: `<f, g> = sum_n f[n] conj(g[n])`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// `exp(2 pi i k / n)` with `k` reduced mod `n` before the float conversion.
#[inline]
pub fn unit_root(k: i64, n: usize) -> C64 {
    let k = k.rem_euclid(n as i64) as f64;
    C64::from_polar(1.0, 2.0 * PI * k / n as f64)
}

#[inline]
fn wrap(v: i64, n: usize) -> usize {
    v.rem_euclid(n as i64) as usize
}

/// A length-`N` complex vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    data: DVector<C64>,
}

impl Signal {
    pub fn new(entries: Vec<C64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("empty signal".into()));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("signal has non-finite entries".into()));
        }
        Ok(Signal { data: DVector::from_vec(entries) })
    }

    pub fn from_real(entries: &[f64]) -> Result<Self> {
        Self::new(entries.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub(crate) fn from_vector(data: DVector<C64>) -> Self {
        Signal { data }
    }

    pub fn zeros(n: usize) -> Self {
        Signal { data: DVector::zeros(n) }
    }

    /// The `k`-th standard basis vector.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut s = Self::zeros(n);
        s.data[k % n] = C64::new(1.0, 0.0);
        s
    }

    pub fn constant(n: usize, value: C64) -> Self {
        Signal { data: DVector::from_element(n, value) }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        self.data.as_slice()
    }

    pub fn vector(&self) -> &DVector<C64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<C64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    /// `<self, other>`, conjugate-linear in `other`.
    pub fn inner(&self, other: &Signal) -> C64 {
        other.data.dotc(&self.data)
    }

    pub fn normalized(&self) -> Signal {
        let nrm = self.norm();
        if nrm == 0.0 {
            return self.clone();
        }
        Signal { data: &self.data / C64::new(nrm, 0.0) }
    }

    pub fn scaled(&self, c: C64) -> Signal {
        Signal { data: &self.data * c }
    }
}

/// A point `(x, w)` of the phase-space torus `Z_N x Z_N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticePoint {
    pub x: usize,
    pub omega: usize,
}

impl LatticePoint {
    /// Reduces both coordinates mod `n`.
    pub fn new(x: i64, omega: i64, n: usize) -> Self {
        LatticePoint { x: wrap(x, n), omega: wrap(omega, n) }
    }

    pub const ORIGIN: LatticePoint = LatticePoint { x: 0, omega: 0 };

    pub fn add(self, other: LatticePoint, n: usize) -> Self {
        LatticePoint { x: (self.x + other.x) % n, omega: (self.omega + other.omega) % n }
    }

    pub fn sub(self, other: LatticePoint, n: usize) -> Self {
        LatticePoint { x: (self.x + n - other.x) % n, omega: (self.omega + n - other.omega) % n }
    }

    pub fn neg(self, n: usize) -> Self {
        LatticePoint::ORIGIN.sub(self, n)
    }
}

/// Separable lattice `aZ_N x bZ_N`, points in x-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lattice {
    n: usize,
    a: usize,
    b: usize,
    points: Vec<LatticePoint>,
}

impl Lattice {
    pub fn new(n: usize, a: usize, b: usize) -> Result<Self> {
        if n == 0 || a == 0 || b == 0 || !n.is_multiple_of(a) || !n.is_multiple_of(b) {
            return Err(Error::InvalidLattice { n, a, b });
        }
        let points = (0..n / a)
            .flat_map(|j| (0..n / b).map(move |k| LatticePoint { x: j * a, omega: k * b }))
            .collect();
        Ok(Lattice { n, a, b, points })
    }

    /// The full grid `Z_N x Z_N`.
    pub fn full(n: usize) -> Result<Self> {
        Self::new(n, 1, 1)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn points(&self) -> &[LatticePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn time_steps(&self) -> usize {
        self.n / self.a
    }

    pub fn freq_steps(&self) -> usize {
        self.n / self.b
    }

    pub fn index_of(&self, p: LatticePoint) -> Option<usize> {
        if p.x >= self.n || p.omega >= self.n || !p.x.is_multiple_of(self.a) || !p.omega.is_multiple_of(self.b) {
            return None;
        }
        Some((p.x / self.a) * self.freq_steps() + p.omega / self.b)
    }
}

/// Weight on lattice points.
#[derive(Clone, Debug, PartialEq)]
pub enum Weight {
    Trivial,
    /// `(1 + d_wrap(z, 0))^s`.
    Polynomial(f64),
    /// One strictly positive value per lattice index.
    Custom(Vec<f64>),
}

impl Weight {
    pub fn value(&self, lattice: &Lattice, index: usize) -> f64 {
        match self {
            Weight::Trivial => 1.0,
            Weight::Polynomial(s) => {
                let p = lattice.points()[index];
                (1.0 + wrapped_distance(p, LatticePoint::ORIGIN, lattice.n())).powf(*s)
            }
            Weight::Custom(values) => values[index],
        }
    }

    pub fn validate(&self, lattice: &Lattice) -> Result<()> {
        match self {
            Weight::Trivial => Ok(()),
            Weight::Polynomial(s) if *s >= 0.0 && s.is_finite() => Ok(()),
            Weight::Polynomial(s) => Err(Error::InvalidParameter(format!("weight exponent {s}"))),
            Weight::Custom(v) if v.len() != lattice.len() => {
                Err(Error::DimensionMismatch { expected: lattice.len(), found: v.len() })
            }
            Weight::Custom(v) if v.iter().all(|w| *w > 0.0 && w.is_finite()) => Ok(()),
            Weight::Custom(_) => Err(Error::InvalidParameter("weights must be positive".into())),
        }
    }
}

/// Complex field on the full grid `Z_N x Z_N`, stored x-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    n: usize,
    values: Vec<C64>,
}

impl GridField {
    pub fn zeros(n: usize) -> Self {
        GridField { n, values: vec![C64::new(0.0, 0.0); n * n] }
    }

    pub fn from_values(n: usize, values: Vec<C64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: values.len() });
        }
        Ok(GridField { n, values })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(LatticePoint) -> C64) -> Self {
        let values = (0..n * n).map(|i| f(LatticePoint { x: i / n, omega: i % n })).collect();
        GridField { n, values }
    }

    /// `scale` at `z`, zero elsewhere.
    pub fn delta(n: usize, z: LatticePoint, scale: C64) -> Self {
        let mut f = Self::zeros(n);
        f.set(z, scale);
        f
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn get(&self, z: LatticePoint) -> C64 {
        self.values[z.x * self.n + z.omega]
    }

    pub fn set(&mut self, z: LatticePoint, v: C64) {
        self.values[z.x * self.n + z.omega] = v;
    }

    /// `sum_z |F(z)|^2`.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (LatticePoint, C64)> + '_ {
        let n = self.n;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (LatticePoint { x: i / n, omega: i % n }, *v))
    }
}

/// `f[(n - x) mod N]`.
pub fn translate(f: &Signal, x: i64) -> Signal {
    let n = f.len();
    let x = wrap(x, n);
    let s = f.as_slice();
    Signal::from_vector(DVector::from_fn(n, |i, _| s[(i + n - x) % n]))
}

/// `exp(2 pi i w n / N) f[n]`.
pub fn modulate(f: &Signal, omega: i64) -> Signal {
    let n = f.len();
    let w = wrap(omega, n);
    let s = f.as_slice();
    Signal::from_vector(DVector::from_fn(n, |i, _| unit_root((w * i) as i64, n) * s[i]))
}

/// `pi(lambda) f = M_w T_x f`.
pub fn tf_shift(f: &Signal, lambda: LatticePoint) -> Signal {
    let n = f.len();
    let s = f.as_slice();
    Signal::from_vector(DVector::from_fn(n, |i, _| {
        unit_root((lambda.omega * i) as i64, n) * s[(i + n - lambda.x % n) % n]
    }))
}

/// `pi(lambda)^* f = T_{-x} M_{-w} f`.
pub fn tf_shift_adjoint(f: &Signal, lambda: LatticePoint) -> Signal {
    let n = f.len();
    let s = f.as_slice();
    Signal::from_vector(DVector::from_fn(n, |i, _| {
        let src = (i + lambda.x) % n;
        unit_root(-((lambda.omega * src) as i64), n) * s[src]
    }))
}

/// Dense matrix of `pi(lambda)`: entry `(i, i - x)` equals `exp(2 pi i w i / N)`.
pub fn tf_shift_matrix(lambda: LatticePoint, n: usize) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, (i + n - lambda.x % n) % n)] = unit_root((lambda.omega * i) as i64, n);
    }
    m
}

/// The scalar `c` with `pi(lambda) pi(mu) = c pi(lambda + mu)`.
pub fn tf_shift_phase(lambda: LatticePoint, mu: LatticePoint, n: usize) -> C64 {
    let k = ((lambda.x % n) * (mu.omega % n)) % n;
    unit_root(-(k as i64), n)
}

/// Discrete STFT `V_g f(z) = <f, pi(z) g>` sampled on `lattice`, in lattice order.
pub fn stft(f: &Signal, g: &Signal, lattice: &Lattice) -> Result<Vec<C64>> {
    let n = f.len();
    if g.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: g.len() });
    }
    if lattice.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: lattice.n() });
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    let fs = f.as_slice();
    let gs = g.as_slice();
    let cols: Vec<Vec<C64>> = (0..lattice.time_steps())
        .into_par_iter()
        .map(|j| {
            let x = j * lattice.a();
            // sum_n f[n] conj(g[n - x]) exp(-2 pi i w n / N) is a forward DFT in n
            let mut buf: Vec<C64> = (0..n).map(|i| fs[i] * gs[(i + n - x) % n].conj()).collect();
            fft.process(&mut buf);
            (0..lattice.freq_steps()).map(|k| buf[k * lattice.b()]).collect()
        })
        .collect();
    Ok(cols.into_iter().flatten().collect())
}

/// STFT over the whole grid `Z_N x Z_N`.
pub fn stft_full(f: &Signal, g: &Signal) -> Result<GridField> {
    let n = f.len();
    let lattice = Lattice::full(n)?;
    GridField::from_values(n, stft(f, g, &lattice)?)
}

/// Periodized Gaussian `sum_{k=-3..3} exp(-pi (n - N/2 + kN)^2 / N)`, unit norm.
pub fn gaussian_window(n: usize) -> Signal {
    assert!(n >= 2, "gaussian window needs n >= 2");
    let nf = n as f64;
    let center = nf / 2.0;
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            (-3..=3)
                .map(|k| {
                    let t = i as f64 - center + k as f64 * nf;
                    (-PI * t * t / nf).exp()
                })
                .sum()
        })
        .collect();
    let nrm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    Signal::from_vector(DVector::from_iterator(n, raw.iter().map(|v| C64::new(v / nrm, 0.0))))
}

/// Phase in the twisted convolution: `exp(-2 pi i z.x w.omega / N)`.
pub fn twist_phase(z: LatticePoint, w: LatticePoint, n: usize) -> C64 {
    tf_shift_phase(z, w, n)
}

/// `(eta # G)(lambda) = sum_z eta(z) G(lambda - z) c(z, lambda - z)`.
///
/// Realizes operator composition in the spreading domain. Direct `O(N^4)`
/// evaluation, intended for small grids.
pub fn twisted_convolution(eta: &GridField, g: &GridField) -> Result<GridField> {
    let n = eta.n();
    if g.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: g.n() });
    }
    let support: Vec<(LatticePoint, C64)> = eta.iter().filter(|(_, v)| *v != C64::new(0.0, 0.0)).collect();
    let values = (0..n * n)
        .into_par_iter()
        .map(|i| {
            let lambda = LatticePoint { x: i / n, omega: i % n };
            support
                .iter()
                .map(|&(z, ez)| {
                    let w = lambda.sub(z, n);
                    ez * g.get(w) * twist_phase(z, w, n)
                })
                .sum()
        })
        .collect();
    GridField::from_values(n, values)
}

/// Euclidean norm of the componentwise torus distance.
pub fn wrapped_distance(lambda: LatticePoint, mu: LatticePoint, n: usize) -> f64 {
    let d = |u: usize, v: usize| {
        let diff = (u as i64 - v as i64).unsigned_abs() as usize % n;
        diff.min(n - diff) as f64
    };
    d(lambda.x, mu.x).hypot(d(lambda.omega, mu.omega))
}
