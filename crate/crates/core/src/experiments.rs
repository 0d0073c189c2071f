//! Experiment configurations and drivers behind the `opcoorbit` binary.
//!
//! Every driver is a pure function of its [`ExperimentConfig`]: random
//! inputs come from streams split off the configured seeds, seeds run in
//! parallel but are collected in order, and all reductions have a fixed
//! order. Outputs are therefore byte-identical across runs and thread
//! counts.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{
    approx_report, rate_checks, ApproxReport, GreedyApproximation, ReportOptions, DEFAULT_P_GRID,
    FIT_ERROR_FLOOR,
};
use crate::error::{Error, Result};
use crate::generators::{
    add_noise, gabor_multiplier, gaussian_spreading, mixed_state, random_operator, spreading_to_operator,
    weighted_fw_operator, Mask, MixedStateParams, SpreadingProfile,
};
use crate::hs::{
    frame_operator, gram_localization, hs_parseval_check, fit_decay_exponent, op_stft_analyze, DecayFit,
    FrameSystem, HSOperator,
};
use crate::io::{approx_report_csv, decode_hso, encode_hso, write_text};
use crate::rng::RngStream;
use crate::stats::linear_fit;
use crate::tf::{
    gaussian_window, stft, stft_full, tf_shift, tf_shift_matrix, tf_shift_phase, wrapped_distance, Lattice,
    LatticePoint, Signal,
};
use crate::windows::{gaussian_rank_one, multi_gaussian, WindowSpec};
use crate::VERSION;

const STREAM_OPERATOR: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_WINDOW: u64 = 2;
const STREAM_PROBES: u64 = 3;
const STREAM_MIXED: u64 = 4;
const STREAM_RANDOM: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Underspread,
    Denoise,
    Scenarios,
    Decay,
    Localize,
    Selftest,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Underspread => "underspread",
            Command::Denoise => "denoise",
            Command::Scenarios => "scenarios",
            Command::Decay => "decay",
            Command::Localize => "localize",
            Command::Selftest => "selftest",
        }
    }
}

/// Test operator of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    /// `pi(z) H_eta pi(z)^*` for the Gaussian spreading function and a
    /// seeded shift `z`.
    GaussianSpreading { width: f64 },
    /// Gabor multiplier of the Gaussian with two Gaussian blobs of radius
    /// `radius` centred at `(N/4, N/4)` and `(2N/3, 2N/3)`.
    TwoBlobMultiplier { radius: f64 },
    MixedState { params: MixedStateParams },
    WeightedSpreading { profile: SpreadingProfile },
    Random,
}

impl OperatorSpec {
    pub fn build(&self, n: usize, rng: &mut RngStream) -> Result<HSOperator> {
        match *self {
            OperatorSpec::GaussianSpreading { width } => {
                let h = spreading_to_operator(&gaussian_spreading(n, width)?);
                let z = LatticePoint { x: rng.below(n), omega: rng.below(n) };
                let p = HSOperator::tf_shift(z, n);
                Ok(p.compose(&h).compose(&p.adjoint()))
            }
            OperatorSpec::TwoBlobMultiplier { radius } => {
                if !(radius > 0.0) {
                    return Err(Error::InvalidParameter(format!("blob radius {radius} must be positive")));
                }
                let (c1, c2) = ((n / 4) as i64, (2 * n / 3) as i64);
                let mask = Mask::gaussian_blobs(
                    n,
                    &[(LatticePoint::new(c1, c1, n), radius), (LatticePoint::new(c2, c2, n), radius)],
                );
                gabor_multiplier(&mask, &gaussian_window(n))
            }
            OperatorSpec::MixedState { params } => mixed_state(&gaussian_window(n), &params, rng),
            OperatorSpec::WeightedSpreading { profile } => weighted_fw_operator(profile, n, rng),
            OperatorSpec::Random => Ok(random_operator(n, rng)),
        }
    }
}

/// Full description of one run; echoed verbatim into every summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub n: usize,
    pub a: usize,
    pub b: usize,
    pub window: WindowSpec,
    pub operator: OperatorSpec,
    /// Budgets; `None` selects the command default.
    pub k_grid: Option<Vec<usize>>,
    pub p_grid: Vec<f64>,
    /// Polynomial decay exponents for `decay`.
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `None` means noiseless.
    pub snr_db: Option<f64>,
    /// White-noise probes per budget; 0 disables the measurement.
    pub probes: usize,
    /// Echoed only; every driver already reduces in a fixed order.
    pub reproducible: bool,
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        let n = 144;
        let mut cfg = ExperimentConfig {
            command,
            n,
            a: 4,
            b: 4,
            window: WindowSpec::GaussianRank1,
            operator: OperatorSpec::GaussianSpreading { width: 1.0 },
            k_grid: None,
            p_grid: DEFAULT_P_GRID.to_vec(),
            alphas: Vec::new(),
            seeds: vec![0],
            snr_db: None,
            probes: 0,
            reproducible: false,
        };
        match command {
            Command::Underspread => {
                cfg.a = 2;
                cfg.b = 2;
                cfg.k_grid = Some(vec![20, 30, 100, 500]);
            }
            Command::Denoise => {
                cfg.operator = OperatorSpec::TwoBlobMultiplier { radius: (n as f64).sqrt() };
                cfg.snr_db = Some(10.0);
            }
            Command::Scenarios => cfg.probes = 16,
            Command::Decay => {
                cfg.a = 3;
                cfg.b = 3;
                cfg.alphas = (1..=9).map(f64::from).collect();
            }
            Command::Localize => {}
            Command::Selftest => {
                cfg.n = 16;
                cfg.a = 2;
                cfg.b = 2;
            }
        }
        cfg
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.n, self.a, self.b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("n = {} must be at least 2", self.n)));
        }
        let lattice = self.lattice()?;
        if let Some(ks) = &self.k_grid {
            if ks.is_empty() {
                return Err(Error::InvalidParameter("k grid is empty".into()));
            }
            if let Some(&k) = ks.iter().find(|&&k| k > lattice.len()) {
                return Err(Error::OutOfRange { k, max: lattice.len() });
            }
        }
        if let Some(&p) = self.p_grid.iter().find(|&&p| !(p > 0.0 && p < 2.0)) {
            return Err(Error::InvalidParameter(format!("p = {p} must lie in (0, 2)")));
        }
        if let Some(&al) = self.alphas.iter().find(|&&al| !(al >= 0.0 && al.is_finite())) {
            return Err(Error::InvalidParameter(format!("alpha = {al} must be finite and >= 0")));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(Error::InvalidParameter("snr is NaN".into()));
            }
        }
        match self.window {
            WindowSpec::MultiGaussian { rank } | WindowSpec::Eigenfunctions { rank } if rank == 0 || rank > self.n => {
                Err(Error::InvalidParameter(format!("window rank {rank} outside 1..={}", self.n)))
            }
            _ => Ok(()),
        }
    }

    /// The configured grid, or the command default for `total` coefficients.
    pub fn k_grid_for(&self, total: usize) -> Vec<usize> {
        match (&self.k_grid, self.command) {
            (Some(ks), _) => ks.clone(),
            (None, Command::Denoise) => (0..=total).collect(),
            (None, _) => default_k_grid(total),
        }
    }

    fn report_options(&self, seed: u64) -> ReportOptions {
        let white_noise = (self.probes > 0).then(|| (self.probes, RngStream::split(seed, STREAM_PROBES).seed()));
        ReportOptions { p_grid: self.p_grid.clone(), white_noise }
    }
}

/// Uniform grid with about 48 steps plus a few small budgets and `|Lambda|/10`.
pub fn default_k_grid(total: usize) -> Vec<usize> {
    let step = (total / 48).max(1);
    let mut ks: Vec<usize> = (0..=total).step_by(step).collect();
    ks.extend([10, 20, 50, 100, 200, 500, total / 10, total].into_iter().filter(|&k| k <= total));
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// One greedy run.
#[derive(Clone, Debug, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub label: String,
    pub frame_bounds: (f64, f64),
    pub report: ApproxReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct UnderspreadResult {
    pub coefficient_count: usize,
    pub runs: Vec<SeedReport>,
    /// `(p, sup_m (m+1)^alpha AppErr(m) ||F|| / ||a||_p)` per seed.
    pub rate_sup: Vec<Vec<(f64, f64)>>,
}

pub fn cmd_underspread(cfg: &ExperimentConfig) -> Result<UnderspreadResult> {
    cfg.validate()?;
    let lattice = cfg.lattice()?;
    let fs = FrameSystem::new(cfg.window.build(cfg.n, None, &mut RngStream::split(cfg.seeds[0], STREAM_WINDOW))?, lattice)?;
    let ks = cfg.k_grid_for(fs.lattice().len());
    let runs: Vec<(SeedReport, Vec<(f64, f64)>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let f = cfg.operator.build(cfg.n, &mut RngStream::split(seed, STREAM_OPERATOR))?;
            let greedy = GreedyApproximation::new(&f, &fs)?;
            let report = approx_report(&greedy, &ks, &cfg.report_options(seed))?;
            let rates = cfg.p_grid.iter().copied().zip(rate_checks(&greedy, &cfg.p_grid)?).collect();
            Ok((SeedReport { seed, label: "underspread".into(), frame_bounds: fs.bounds(), report }, rates))
        })
        .collect::<Result<_>>()?;
    let (runs, rate_sup) = runs.into_iter().unzip();
    Ok(UnderspreadResult { coefficient_count: fs.lattice().len(), runs, rate_sup })
}

/// Clean and noisy error curves for one seed.
#[derive(Clone, Debug, Serialize)]
pub struct DenoiseRun {
    pub seed: u64,
    pub ks: Vec<usize>,
    /// Error of the greedy reconstruction against the noisy input.
    pub noisy_err: Vec<f64>,
    /// Error of the same reconstruction against the clean operator.
    pub clean_err: Vec<f64>,
    pub k_star: usize,
    pub clean_min: f64,
    /// Clean error at the largest budget on the grid.
    pub clean_at_max: f64,
    /// Smallest clean error among budgets zeroing at least 70% of the coefficients.
    pub sparse_best: Option<SparsePoint>,
    pub noisy_report: ApproxReport,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SparsePoint {
    pub k: usize,
    pub zeroed_fraction: f64,
    pub clean_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DenoiseResult {
    pub coefficient_count: usize,
    pub snr_db: Option<f64>,
    pub runs: Vec<DenoiseRun>,
}

/// Fraction of zeroed coefficients required for the sparse operating point.
pub const SPARSE_ZEROED: f64 = 0.7;

pub fn cmd_denoise(cfg: &ExperimentConfig) -> Result<DenoiseResult> {
    cfg.validate()?;
    let lattice = cfg.lattice()?;
    let fs = FrameSystem::new(cfg.window.build(cfg.n, None, &mut RngStream::split(cfg.seeds[0], STREAM_WINDOW))?, lattice)?;
    let total = fs.lattice().len();
    let ks = cfg.k_grid_for(total);
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let clean = cfg.operator.build(cfg.n, &mut RngStream::split(seed, STREAM_OPERATOR))?;
            let noisy = add_noise(&clean, cfg.snr_db.unwrap_or(f64::INFINITY), &mut RngStream::split(seed, STREAM_NOISE))?;
            let greedy = GreedyApproximation::new(&noisy, &fs)?;
            let noisy_report = approx_report(&greedy, &ks, &cfg.report_options(seed))?;
            let against_clean = GreedyApproximation::from_coefficients(&clean, &fs, greedy.coefficients().clone())?;
            let clean_err = against_clean.error_curve(&ks)?;
            let (mut k_star, mut clean_min) = (ks[0], f64::INFINITY);
            for (&k, &e) in ks.iter().zip(&clean_err) {
                if e < clean_min {
                    (k_star, clean_min) = (k, e);
                }
            }
            let kmax_idx = (0..ks.len()).max_by_key(|&i| ks[i]).expect("non-empty grid");
            let sparse_best = ks
                .iter()
                .zip(&clean_err)
                .map(|(&k, &e)| SparsePoint { k, zeroed_fraction: 1.0 - k as f64 / total as f64, clean_err: e })
                .filter(|p| p.zeroed_fraction >= SPARSE_ZEROED)
                .min_by(|x, y| x.clean_err.total_cmp(&y.clean_err).then(x.k.cmp(&y.k)));
            Ok(DenoiseRun {
                seed,
                ks: ks.clone(),
                noisy_err: noisy_report.app_err.clone(),
                clean_at_max: clean_err[kmax_idx],
                clean_err,
                k_star,
                clean_min,
                sparse_best,
                noisy_report,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DenoiseResult { coefficient_count: total, snr_db: cfg.snr_db, runs })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    InfiniteRank,
    MixedState,
    Random,
}

/// One of the ten operator/window pairings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ScenarioId(u8);

impl ScenarioId {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=10).contains(&id) {
            Ok(ScenarioId(id))
        } else {
            Err(Error::InvalidParameter(format!("scenario {id} outside 1..=10")))
        }
    }

    pub fn all() -> Vec<ScenarioId> {
        (1..=10).map(ScenarioId).collect()
    }

    pub fn id(&self) -> u8 {
        self.0
    }

    pub fn operator(&self) -> OperatorKind {
        match self.0 {
            1..=6 => OperatorKind::InfiniteRank,
            7..=9 => OperatorKind::MixedState,
            _ => OperatorKind::Random,
        }
    }

    pub fn window(&self) -> WindowSpec {
        match self.0 {
            1 | 7 => WindowSpec::FullRank,
            2 | 8 => WindowSpec::MultiGaussian { rank: 2 },
            3 | 9 | 10 => WindowSpec::GaussianRank1,
            4 => WindowSpec::MultiGaussian { rank: 4 },
            5 => WindowSpec::MultiGaussian { rank: 6 },
            _ => WindowSpec::Eigenfunctions { rank: 6 },
        }
    }

    pub fn description(&self) -> String {
        let op = match self.operator() {
            OperatorKind::InfiniteRank => "infinite-rank operator",
            OperatorKind::MixedState => "mixed-state operator",
            OperatorKind::Random => "random operator",
        };
        format!("{op}, {} analysis", self.window().label())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioRun {
    pub scenario: u8,
    pub description: String,
    pub window_rank: usize,
    pub run: SeedReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenariosResult {
    pub coefficient_count: usize,
    /// Runs per seed, scenarios in order 1..=10.
    pub seeds: Vec<Vec<ScenarioRun>>,
    /// `r^2` of the linear fit of squared error against K for the baseline, per seed.
    pub baseline_linear_r2: Vec<f64>,
}

/// Operators of the scenario suite for one seed.
pub fn scenario_operators(n: usize, seed: u64) -> Result<[HSOperator; 3]> {
    let inf = OperatorSpec::GaussianSpreading { width: 1.0 }.build(n, &mut RngStream::split(seed, STREAM_OPERATOR))?;
    let mixed = OperatorSpec::MixedState { params: MixedStateParams::default() }
        .build(n, &mut RngStream::split(seed, STREAM_MIXED))?;
    let random = random_operator(n, &mut RngStream::split(seed, STREAM_RANDOM));
    Ok([inf, mixed, random])
}

pub fn run_scenario(cfg: &ExperimentConfig, id: ScenarioId, seed: u64, ops: &[HSOperator; 3]) -> Result<ScenarioRun> {
    let f = match id.operator() {
        OperatorKind::InfiniteRank => &ops[0],
        OperatorKind::MixedState => &ops[1],
        OperatorKind::Random => &ops[2],
    };
    let spec = id.window();
    let window = spec.build(cfg.n, Some(f), &mut RngStream::split(seed, STREAM_WINDOW))?;
    let fs = FrameSystem::new(window, cfg.lattice()?)?;
    let ks = cfg.k_grid_for(fs.lattice().len());
    let greedy = GreedyApproximation::new(f, &fs)?;
    let report = approx_report(&greedy, &ks, &cfg.report_options(seed))?;
    Ok(ScenarioRun {
        scenario: id.id(),
        description: id.description(),
        window_rank: fs.window().rank(),
        run: SeedReport { seed, label: format!("scenario{:02}", id.id()), frame_bounds: fs.bounds(), report },
    })
}

pub fn cmd_scenarios(cfg: &ExperimentConfig) -> Result<ScenariosResult> {
    cfg.validate()?;
    let total = cfg.lattice()?.len();
    let seeds: Vec<Vec<ScenarioRun>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let ops = scenario_operators(cfg.n, seed)?;
            ScenarioId::all().into_par_iter().map(|id| run_scenario(cfg, id, seed, &ops)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let baseline_linear_r2 = seeds
        .iter()
        .map(|runs| {
            let rep = &runs[9].run.report;
            let xs: Vec<f64> = rep.ks.iter().map(|&k| k as f64).collect();
            let ys: Vec<f64> = rep.app_err.iter().map(|e| e * e).collect();
            linear_fit(&xs, &ys).r2
        })
        .collect();
    Ok(ScenariosResult { coefficient_count: total, seeds, baseline_linear_r2 })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayCurve {
    /// `alpha` for polynomial profiles, `None` for the Gaussian baseline.
    pub alpha: Option<f64>,
    pub rank1: SeedReport,
    pub rank6: SeedReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayResult {
    pub coefficient_count: usize,
    /// Curves per seed; polynomial profiles in configured order, then the baseline.
    pub seeds: Vec<Vec<DecayCurve>>,
}

impl DecayResult {
    /// Largest ratio between the rank-1 and rank-6 errors over budgets where
    /// either exceeds the fit floor.
    pub fn max_rank_ratio(curve: &DecayCurve) -> f64 {
        curve
            .rank1
            .report
            .app_err
            .iter()
            .zip(&curve.rank6.report.app_err)
            .filter(|(a, b)| a.max(**b) > FIT_ERROR_FLOOR)
            .map(|(a, b)| a.max(*b) / a.min(*b).max(f64::MIN_POSITIVE))
            .fold(1.0, f64::max)
    }
}

pub fn cmd_decay_study(cfg: &ExperimentConfig) -> Result<DecayResult> {
    cfg.validate()?;
    let lattice = cfg.lattice()?;
    let fs1 = FrameSystem::new(gaussian_rank_one(cfg.n), lattice.clone())?;
    let total = lattice.len();
    let ks = cfg.k_grid_for(total);
    let mut profiles: Vec<SpreadingProfile> = cfg.alphas.iter().map(|&a| SpreadingProfile::Polynomial(a)).collect();
    profiles.push(SpreadingProfile::Gaussian);
    let seeds = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let w6 = multi_gaussian(cfg.n, 6, &mut RngStream::split(seed, STREAM_WINDOW))?;
            let fs6 = FrameSystem::new(w6, lattice.clone())?;
            profiles
                .par_iter()
                .map(|&profile| {
                    // same field for every profile
                    let f = weighted_fw_operator(profile, cfg.n, &mut RngStream::split(seed, STREAM_OPERATOR))?;
                    let label = match profile {
                        SpreadingProfile::Polynomial(a) => format!("alpha{a}"),
                        SpreadingProfile::Gaussian => "gaussian".into(),
                    };
                    let run = |fs: &FrameSystem, suffix: &str| -> Result<SeedReport> {
                        let greedy = GreedyApproximation::new(&f, fs)?;
                        Ok(SeedReport {
                            seed,
                            label: format!("{label}_{suffix}"),
                            frame_bounds: fs.bounds(),
                            report: approx_report(&greedy, &ks, &cfg.report_options(seed))?,
                        })
                    };
                    let alpha = match profile {
                        SpreadingProfile::Polynomial(a) => Some(a),
                        SpreadingProfile::Gaussian => None,
                    };
                    Ok(DecayCurve { alpha, rank1: run(&fs1, "rank1")?, rank6: run(&fs6, "rank6")? })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DecayResult { coefficient_count: total, seeds })
}

/// One lattice difference of the localization profile.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ProfileRow {
    pub x: usize,
    pub omega: usize,
    pub distance: f64,
    pub entry: f64,
    /// `|V_phi phi(d)|` for rank-one windows.
    pub stft_abs: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalizeResult {
    pub window: String,
    pub rank: usize,
    pub numerical_rank: usize,
    pub dual_numerical_rank: usize,
    pub frame_bounds: (f64, f64),
    pub fit: DecayFit,
    /// `entry(lambda, lambda)`, the same for every `lambda`.
    pub diagonal: f64,
    /// `max |entry - |V_phi phi||` for rank-one windows.
    pub max_stft_deviation: Option<f64>,
    #[serde(skip)]
    pub profile: Vec<ProfileRow>,
}

pub fn cmd_localization_report(cfg: &ExperimentConfig) -> Result<LocalizeResult> {
    cfg.validate()?;
    let lattice = cfg.lattice()?;
    let seed = cfg.seeds[0];
    let source = match cfg.window {
        WindowSpec::Eigenfunctions { .. } => Some(cfg.operator.build(cfg.n, &mut RngStream::split(seed, STREAM_OPERATOR))?),
        _ => None,
    };
    let window = cfg.window.build(cfg.n, source.as_ref(), &mut RngStream::split(seed, STREAM_WINDOW))?;
    let fs = FrameSystem::new(window.clone(), lattice.clone())?;
    let gram = gram_localization(&window, &lattice)?;
    let fit = fit_decay_exponent(&gram)?;
    let stft_abs: Option<Vec<f64>> = if window.rank() == 1 {
        let phi = &window.phis()[0];
        let psi = &window.psis()[0];
        // ||psi||^2 |V_phi phi| for the window phi (x) psi
        let scale = psi.norm() * psi.norm();
        Some(stft(phi, phi, &lattice)?.iter().map(|v| scale * v.norm()).collect())
    } else {
        None
    };
    let profile: Vec<ProfileRow> = lattice
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| ProfileRow {
            x: p.x,
            omega: p.omega,
            distance: wrapped_distance(*p, LatticePoint::ORIGIN, cfg.n),
            entry: gram.profile()[i],
            stft_abs: stft_abs.as_ref().map(|s| s[i]),
        })
        .collect();
    let max_stft_deviation = stft_abs.as_ref().map(|s| {
        s.iter().zip(gram.profile()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    });
    Ok(LocalizeResult {
        window: cfg.window.label(),
        rank: window.rank(),
        numerical_rank: window.numerical_rank(),
        dual_numerical_rank: fs.dual_window().numerical_rank(),
        frame_bounds: fs.bounds(),
        fit,
        diagonal: gram.profile()[0],
        max_stft_deviation,
        profile,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestResult {
    pub checks: Vec<SelftestCheck>,
    pub passed: bool,
}

/// Core identities at the configured small size.
pub fn selftest(cfg: &ExperimentConfig) -> Result<SelftestResult> {
    cfg.validate()?;
    let n = cfg.n;
    let lattice = cfg.lattice()?;
    let mut rng = RngStream::split(cfg.seeds[0], STREAM_OPERATOR);
    let mut checks = Vec::new();
    let mut check = |name: &str, value: f64, tolerance: f64| {
        checks.push(SelftestCheck { name: name.into(), value, tolerance, passed: value <= tolerance });
    };
    let sig = |rng: &mut RngStream| Signal::new((0..n).map(|_| rng.complex_normal()).collect()).expect("finite");
    let (f, g) = (sig(&mut rng), sig(&mut rng));

    let moyal: f64 = stft_full(&f, &g)?.energy();
    let expect = n as f64 * f.norm().powi(2) * g.norm().powi(2);
    check("moyal", (moyal - expect).abs() / expect, 1e-10);

    let mut comp: f64 = 0.0;
    for _ in 0..16 {
        let l = LatticePoint { x: rng.below(n), omega: rng.below(n) };
        let m = LatticePoint { x: rng.below(n), omega: rng.below(n) };
        let lhs = tf_shift(&tf_shift(&f, m), l);
        let rhs = tf_shift(&f, l.add(m, n)).scaled(tf_shift_phase(l, m, n));
        comp = comp.max((lhs.vector() - rhs.vector()).norm() / f.norm());
    }
    check("composition", comp, 1e-12);

    let op = random_operator(n, &mut rng);
    let eta = crate::generators::operator_to_spreading(&op);
    let back = spreading_to_operator(&eta);
    check("spreading_roundtrip", back.sub(&op).frobenius_norm() / op.frobenius_norm(), 1e-12);

    let window = gaussian_rank_one(n);
    let s0 = frame_operator(&window, &lattice)?;
    let comm = lattice
        .points()
        .iter()
        .map(|&mu| {
            let p = tf_shift_matrix(mu, n);
            (s0.matrix() * &p - &p * s0.matrix()).norm()
        })
        .fold(0.0, f64::max);
    check("commutation", comm / s0.frobenius_norm(), 1e-8);

    let (lhs, rhs) = hs_parseval_check(&op, &window, &lattice)?;
    check("parseval", (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE), 1e-10);

    let fs = FrameSystem::new(window, lattice)?;
    let rec = fs.reconstruct(&op_stft_analyze(&op, fs.window(), fs.lattice())?)?;
    check("reconstruction", rec.sub(&op).frobenius_norm() / op.frobenius_norm(), 1e-8);

    let (decoded, _) = decode_hso(&encode_hso(&op))?;
    check("hso_roundtrip", if decoded == op { 0.0 } else { 1.0 }, 0.0);

    let passed = checks.iter().all(|c| c.passed);
    Ok(SelftestResult { checks, passed })
}

/// Output of any command, with its files.
#[derive(Clone, Debug)]
pub enum RunResult {
    Underspread(UnderspreadResult),
    Denoise(DenoiseResult),
    Scenarios(ScenariosResult),
    Decay(DecayResult),
    Localize(LocalizeResult),
    Selftest(SelftestResult),
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    Ok(match cfg.command {
        Command::Underspread => RunResult::Underspread(cmd_underspread(cfg)?),
        Command::Denoise => RunResult::Denoise(cmd_denoise(cfg)?),
        Command::Scenarios => RunResult::Scenarios(cmd_scenarios(cfg)?),
        Command::Decay => RunResult::Decay(cmd_decay_study(cfg)?),
        Command::Localize => RunResult::Localize(cmd_localization_report(cfg)?),
        Command::Selftest => RunResult::Selftest(selftest(cfg)?),
    })
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    command: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    seeds: &'a [u64],
    result: &'a T,
}

fn summary_json<T: Serialize>(cfg: &ExperimentConfig, result: &T) -> Result<String> {
    let s = Summary { command: cfg.command.name(), version: VERSION, config: cfg, seeds: &cfg.seeds, result };
    Ok(serde_json::to_string_pretty(&s)? + "\n")
}

impl RunResult {
    /// `(file name, contents)` pairs: one CSV per curve and one JSON summary.
    pub fn artifacts(&self, cfg: &ExperimentConfig) -> Result<Vec<(String, String)>> {
        let name = cfg.command.name();
        let mut files = Vec::new();
        let summary = match self {
            RunResult::Underspread(r) => {
                for run in &r.runs {
                    files.push((format!("underspread_seed{}.csv", run.seed), approx_report_csv(&run.report)));
                    files.push((format!("underspread_ranked_seed{}.csv", run.seed), ranked_csv(&run.report)));
                }
                summary_json(cfg, r)?
            }
            RunResult::Denoise(r) => {
                for run in &r.runs {
                    let mut s = String::from("K,noisy_err,clean_err\n");
                    for ((k, a), b) in run.ks.iter().zip(&run.noisy_err).zip(&run.clean_err) {
                        s.push_str(&format!("{k},{a},{b}\n"));
                    }
                    files.push((format!("denoise_seed{}.csv", run.seed), s));
                    files.push((format!("denoise_noisy_seed{}.csv", run.seed), approx_report_csv(&run.noisy_report)));
                }
                summary_json(cfg, r)?
            }
            RunResult::Scenarios(r) => {
                for runs in &r.seeds {
                    for s in runs {
                        files.push((format!("{}_seed{}.csv", s.run.label, s.run.seed), approx_report_csv(&s.run.report)));
                    }
                }
                summary_json(cfg, r)?
            }
            RunResult::Decay(r) => {
                for curves in &r.seeds {
                    for c in curves {
                        for run in [&c.rank1, &c.rank6] {
                            files.push((format!("decay_{}_seed{}.csv", run.label, run.seed), approx_report_csv(&run.report)));
                        }
                    }
                }
                summary_json(cfg, r)?
            }
            RunResult::Localize(r) => {
                let mut s = String::from("x,omega,distance,entry,stft_abs\n");
                for p in &r.profile {
                    let v = p.stft_abs.map(|v| v.to_string()).unwrap_or_default();
                    s.push_str(&format!("{},{},{},{},{}\n", p.x, p.omega, p.distance, p.entry, v));
                }
                files.push(("localize.csv".to_string(), s));
                summary_json(cfg, r)?
            }
            RunResult::Selftest(r) => summary_json(cfg, r)?,
        };
        files.push((format!("{name}.json"), summary));
        Ok(files)
    }

    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>> {
        let files = self.artifacts(cfg)?;
        for (name, text) in &files {
            write_text(&dir.join(name), text)?;
        }
        Ok(files.into_iter().map(|(n, _)| n).collect())
    }
}

/// Columns `rank,index,x,omega,hs_norm`; the first `K` rows form `Lambda_K`.
fn ranked_csv(report: &ApproxReport) -> String {
    let mut s = String::from("rank,index\n");
    for (r, i) in report.ranked_order.iter().enumerate() {
        s.push_str(&format!("{},{}\n", r + 1, i));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(command: Command) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(command);
        cfg.n = 24;
        cfg.a = 2;
        cfg.b = 2;
        cfg.seeds = vec![1, 2];
        if cfg.k_grid.is_some() {
            cfg.k_grid = Some(vec![0, 10, 50, 144]);
        }
        cfg
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::new(Command::Underspread);
        assert!(cfg.validate().is_ok());
        cfg.a = 5;
        assert!(matches!(cfg.validate(), Err(Error::InvalidLattice { .. })));
        cfg.a = 2;
        cfg.k_grid = Some(vec![5185]);
        assert!(matches!(cfg.validate(), Err(Error::OutOfRange { .. })));
        cfg.k_grid = None;
        cfg.p_grid = vec![2.0];
        assert!(cfg.validate().is_err());
        cfg.p_grid = vec![1.0];
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_grid_shape() {
        let ks = default_k_grid(1296);
        assert_eq!(ks[0], 0);
        assert_eq!(*ks.last().unwrap(), 1296);
        assert!(ks.contains(&129) && ks.contains(&100));
        assert!(ks.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn scenario_table() {
        assert_eq!(ScenarioId::all().len(), 10);
        assert_eq!(ScenarioId::new(6).unwrap().window(), WindowSpec::Eigenfunctions { rank: 6 });
        assert_eq!(ScenarioId::new(10).unwrap().operator(), OperatorKind::Random);
        assert_eq!(ScenarioId::new(7).unwrap().operator(), OperatorKind::MixedState);
        assert!(ScenarioId::new(0).is_err() && ScenarioId::new(11).is_err());
    }

    #[test]
    fn underspread_small_and_reproducible() {
        let cfg = small(Command::Underspread);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        let fa = a.artifacts(&cfg).unwrap();
        assert_eq!(fa, b.artifacts(&cfg).unwrap());
        let RunResult::Underspread(r) = a else { panic!() };
        assert_eq!(r.coefficient_count, 144);
        for run in &r.runs {
            assert!((run.report.app_err[0] - 1.0).abs() < 1e-12);
            assert!(run.report.app_err[3] < 1e-8);
        }
        let json = &fa.last().unwrap().1;
        assert!(json.contains("\"version\"") && json.contains("\"seeds\""));
    }

    #[test]
    fn denoise_without_noise_curves_coincide() {
        let mut cfg = small(Command::Denoise);
        cfg.operator = OperatorSpec::TwoBlobMultiplier { radius: 4.0 };
        cfg.snr_db = None;
        cfg.seeds = vec![3];
        let r = cmd_denoise(&cfg).unwrap();
        let run = &r.runs[0];
        assert_eq!(run.ks.len(), 145);
        for (a, b) in run.noisy_err.iter().zip(&run.clean_err) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn localize_rank_one_matches_stft() {
        let cfg = small(Command::Localize);
        let r = cmd_localization_report(&cfg).unwrap();
        assert!(r.max_stft_deviation.unwrap() < 1e-12);
        assert!((r.diagonal - 1.0).abs() < 1e-12);
        assert_eq!(r.dual_numerical_rank, 1);
    }

    #[test]
    fn selftest_passes() {
        let r = selftest(&ExperimentConfig::new(Command::Selftest)).unwrap();
        assert!(r.passed, "{:?}", r.checks);
    }
}
