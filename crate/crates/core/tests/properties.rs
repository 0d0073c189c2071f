use opcoorbit::approx::{lp_quasi_norm, sigma_tail, stechkin_check, GreedyApproximation};
use opcoorbit::generators::{add_noise, operator_to_spreading, spreading_to_operator};
use opcoorbit::hs::{op_stft_analyze, op_synthesize, op_synthesize_subset, CMatrix, CoefficientField, OperatorWindow};
use opcoorbit::io::{decode_hso, encode_hso};
use opcoorbit::tf::{stft_full, tf_shift, twisted_convolution};
use opcoorbit::{FrameSystem, GridField, HSOperator, Lattice, LatticePoint, RngStream, Signal, Weight};
use proptest::prelude::*;

fn signal(n: usize, seed: u64) -> Signal {
    let mut rng = RngStream::new(seed);
    Signal::new((0..n).map(|_| rng.complex_normal()).collect()).unwrap()
}

fn operator(n: usize, seed: u64) -> HSOperator {
    let mut rng = RngStream::new(seed);
    HSOperator::new(CMatrix::from_fn(n, n, |_, _| rng.complex_normal())).unwrap()
}

fn window(n: usize, rank: usize, seed: u64) -> OperatorWindow {
    let phis = (0..rank).map(|k| signal(n, seed.wrapping_add(2 * k as u64))).collect();
    let psis = (0..rank).map(|k| signal(n, seed.wrapping_add(2 * k as u64 + 1))).collect();
    OperatorWindow::new(phis, psis).unwrap()
}

fn rel(a: &HSOperator, b: &HSOperator) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm()
}

/// `(N, a, b)` with `a, b` dividing `N`.
fn lattice_dims() -> impl Strategy<Value = (usize, usize, usize)> {
    prop::sample::select(vec![(6, 2, 3), (8, 2, 2), (8, 4, 2), (9, 3, 3), (10, 2, 5), (12, 3, 2)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shifts_are_unitary(n in 1usize..40, x in 0usize..40, w in 0usize..40, seed in any::<u64>()) {
        let f = signal(n, seed);
        let g = tf_shift(&f, LatticePoint { x: x % n, omega: w % n });
        prop_assert!((g.norm() - f.norm()).abs() <= 1e-12 * f.norm());
    }

    #[test]
    fn stft_covariance_in_modulus(n in 2usize..24, x in 0usize..24, w in 0usize..24, seed in any::<u64>()) {
        let (f, g) = (signal(n, seed), signal(n, seed ^ 1));
        let mu = LatticePoint { x: x % n, omega: w % n };
        let shifted = stft_full(&tf_shift(&f, mu), &g).unwrap();
        let plain = stft_full(&f, &g).unwrap();
        for (z, v) in shifted.iter() {
            prop_assert!((v.norm() - plain.get(z.sub(mu, n)).norm()).abs() <= 1e-10 * f.norm() * g.norm());
        }
    }

    #[test]
    fn twisted_convolution_composes(n in 2usize..7, s1 in any::<u64>(), s2 in any::<u64>()) {
        let mut r1 = RngStream::new(s1);
        let mut r2 = RngStream::new(s2);
        let e1 = GridField::from_fn(n, |_| r1.complex_normal());
        let e2 = GridField::from_fn(n, |_| r2.complex_normal());
        let h = spreading_to_operator(&e1).compose(&spreading_to_operator(&e2));
        let via = spreading_to_operator(&twisted_convolution(&e1, &e2).unwrap());
        prop_assert!(rel(&via, &h) <= 1e-10);
    }

    #[test]
    fn spreading_is_scaled_isometry(n in 1usize..20, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let eta = GridField::from_fn(n, |_| rng.complex_normal());
        let h = spreading_to_operator(&eta);
        prop_assert!((h.frobenius_norm().powi(2) - n as f64 * eta.energy()).abs() <= 1e-10 * n as f64 * eta.energy());
        let back = operator_to_spreading(&h);
        let d: f64 = eta.values().iter().zip(back.values()).map(|(a, b)| (a - b).norm_sqr()).sum();
        prop_assert!(d.sqrt() <= 1e-12 * eta.energy().sqrt() * n as f64);
    }

    #[test]
    fn reconstruction_both_ways((n, a, b) in lattice_dims(), rank in 1usize..3, seed in any::<u64>()) {
        let lattice = Lattice::new(n, a, b).unwrap();
        let Ok(fs) = FrameSystem::new(window(n, rank, seed), lattice.clone()) else { return Ok(()) };
        let f = operator(n, seed ^ 7);
        let c = op_stft_analyze(&f, fs.window(), &lattice).unwrap();
        prop_assert!(rel(&op_synthesize(&c, fs.dual_window(), &lattice).unwrap(), &f) <= 1e-8);
        let c = op_stft_analyze(&f, fs.dual_window(), &lattice).unwrap();
        prop_assert!(rel(&op_synthesize(&c, fs.window(), &lattice).unwrap(), &f) <= 1e-8);
    }

    #[test]
    fn greedy_error_is_bounded_by_the_tail_and_exact_at_full_budget((n, a, b) in lattice_dims(), seed in any::<u64>()) {
        let lattice = Lattice::new(n, a, b).unwrap();
        let Ok(fs) = FrameSystem::new(window(n, 1, seed), lattice) else { return Ok(()) };
        let f = operator(n, seed ^ 3);
        let greedy = GreedyApproximation::new(&f, &fs).unwrap();
        let curve = greedy.full_error_curve().unwrap();
        prop_assert!((curve[0] - 1.0).abs() <= 1e-12);
        prop_assert!(*curve.last().unwrap() <= 1e-8);
        // chain with the coefficient tail
        let sigma = sigma_tail(greedy.ranked());
        for (e, s) in curve.iter().zip(&sigma) {
            prop_assert!(e * f.frobenius_norm() <= fs.dual_synthesis_norm() * s + 1e-10);
        }
    }

    #[test]
    fn greedy_is_exact_best_k_for_an_orthonormal_system(n in 2usize..16, seed in any::<u64>()) {
        // time shifts of a delta lift to an orthonormal basis of the HS matrices
        let lattice = Lattice::new(n, 1, n).unwrap();
        let fs = FrameSystem::new(OperatorWindow::rank_one(&Signal::basis(n, 0)), lattice).unwrap();
        let f = operator(n, seed);
        let greedy = GreedyApproximation::new(&f, &fs).unwrap();
        let curve = greedy.full_error_curve().unwrap();
        let sigma = sigma_tail(greedy.ranked());
        for (e, s) in curve.iter().zip(&sigma) {
            prop_assert!((e - s / f.frobenius_norm()).abs() <= 1e-12);
        }
        prop_assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn ranking_is_a_sorted_permutation(norms in prop::collection::vec(0.0f64..10.0, 0..60)) {
        let ranked = opcoorbit::approx::RankedCoefficients::from_norms(&norms);
        let mut order = ranked.order().to_vec();
        prop_assert!(ranked.norms().windows(2).all(|w| w[0] >= w[1]));
        for (i, &j) in ranked.order().iter().enumerate() {
            prop_assert_eq!(ranked.norms()[i], norms[j]);
        }
        order.sort_unstable();
        prop_assert_eq!(order, (0..norms.len()).collect::<Vec<_>>());
    }

    #[test]
    fn selection_is_scale_invariant(seed in any::<u64>(), c in 0.01f64..100.0, k in 0usize..=16) {
        let lattice = Lattice::new(8, 2, 2).unwrap();
        let fs = FrameSystem::new(window(8, 1, seed), lattice).unwrap();
        let f = operator(8, seed ^ 5);
        let g1 = GreedyApproximation::new(&f, &fs).unwrap();
        let g2 = GreedyApproximation::new(&f.scaled(c), &fs).unwrap();
        let (s1, s2) = (sigma_tail(g1.ranked()), sigma_tail(g2.ranked()));
        prop_assert!((s2[k] - c * s1[k]).abs() <= 1e-10 * c * s1[0]);
        let mut a = g1.ranked().selected(k).to_vec();
        let mut b = g2.ranked().selected(k).to_vec();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sum_of_two_k_term_approximations_lives_on_the_union(seed in any::<u64>(), k in 0usize..=16) {
        let lattice = Lattice::new(8, 2, 2).unwrap();
        let fs = FrameSystem::new(window(8, 1, seed), lattice.clone()).unwrap();
        let (f, g) = (operator(8, seed ^ 11), operator(8, seed ^ 13));
        let gf = GreedyApproximation::new(&f, &fs).unwrap();
        let gg = GreedyApproximation::new(&g, &fs).unwrap();
        let mut union: Vec<usize> = gf.ranked().selected(k).iter().chain(gg.ranked().selected(k)).copied().collect();
        union.sort_unstable();
        union.dedup();
        prop_assert!(union.len() <= 2 * k);
        let mut combined = CoefficientField::zeros(lattice.clone(), gf.coefficients().window_psis().clone());
        for i in 0..lattice.len() {
            let mut block = CMatrix::zeros(8, 1);
            if gf.ranked().selected(k).contains(&i) {
                block += gf.coefficients().block(i);
            }
            if gg.ranked().selected(k).contains(&i) {
                block += gg.coefficients().block(i);
            }
            combined.set_block(i, block).unwrap();
        }
        let joint = op_synthesize_subset(&combined, fs.dual_window(), &lattice, &union).unwrap();
        let sum = gf.reconstruct(k).unwrap().add(&gg.reconstruct(k).unwrap());
        prop_assert!(joint.sub(&sum).frobenius_norm() <= 1e-10 * (f.frobenius_norm() + g.frobenius_norm()));
    }

    #[test]
    fn hso_roundtrip_is_bit_exact(n in 1usize..12, seed in any::<u64>()) {
        let f = operator(n, seed);
        let bytes = encode_hso(&f);
        let (g, _) = decode_hso(&bytes).unwrap();
        prop_assert_eq!(encode_hso(&g), bytes);
    }

    #[test]
    fn stechkin_ratio_is_finite_and_positive(
        mut a in prop::collection::vec(0.0f64..1.0, 1..200),
        p in prop::sample::select(vec![0.25, 0.5, 1.0, 1.5]),
    ) {
        a.sort_by(|x, y| y.total_cmp(x));
        prop_assume!(a[0] > 0.0);
        let r = stechkin_check(&a, p).unwrap();
        prop_assert!(r.upper_ratio.is_finite() && r.upper_ratio > 0.0);
        prop_assert!((r.lower_ratio * r.upper_ratio - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn quasi_norm_is_homogeneous(norms in prop::collection::vec(0.0f64..5.0, 16), c in 0.1f64..10.0, p in 0.2f64..2.0) {
        let lattice = Lattice::new(8, 2, 2).unwrap();
        let base = lp_quasi_norm(&norms, p, &Weight::Trivial, &lattice).unwrap();
        let scaled: Vec<f64> = norms.iter().map(|v| c * v).collect();
        let got = lp_quasi_norm(&scaled, p, &Weight::Trivial, &lattice).unwrap();
        prop_assert!((got - c * base).abs() <= 1e-10 * (1.0 + c * base));
    }

    #[test]
    fn noise_has_the_requested_level(n in 2usize..16, snr in -10.0f64..40.0, seed in any::<u64>()) {
        let f = operator(n, seed);
        let g = add_noise(&f, snr, &mut RngStream::new(seed ^ 9)).unwrap();
        let level = g.sub(&f).frobenius_norm() / f.frobenius_norm();
        prop_assert!((level - 10f64.powf(-snr / 20.0)).abs() <= 1e-12 * (1.0 + level));
    }
}

