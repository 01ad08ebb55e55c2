use num_complex::Complex64;
use proptest::prelude::*;

use secure_isac::acf::{empirical_acf, metrics_closed_form};
use secure_isac::constellation::make_constellation;
use secure_isac::designer::Polytope;
use secure_isac::detection::{ca_cfar_power, CfarConfig};
use secure_isac::estimation::{matched_squared_errors, wrap_distance};
use secure_isac::seed::seeded_rng;
use secure_isac::units::{db_to_linear, linear_to_db};
use secure_isac::waveform::{ideal_acf_to_allocation, secure_comb, structured_allocation, SecureAcfSpec};

fn spec() -> impl Strategy<Value = SecureAcfSpec> {
    (0.01f64..0.95, prop::sample::select(vec![1usize, 3, 7, 15, 31]))
        .prop_map(|(a, l)| SecureAcfSpec::new(a, l).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn comb_round_trip(s in spec()) {
        let alloc = structured_allocation(&s, 64, 1).unwrap();
        let back = ideal_acf_to_allocation(&secure_comb(&s, 64).unwrap()).unwrap();
        for (x, y) in back.power().iter().zip(alloc.power()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let total: f64 = alloc.power().iter().sum();
        prop_assert!((total - 64.0).abs() < 1e-9);
    }

    #[test]
    fn dominant_shift_keeps_unit_symbol_acf(s in spec(), shift in 0usize..32) {
        let unit = vec![Complex64::new(1.0, 0.0); 64];
        let n0 = 1 + shift % s.kappa();
        let a = empirical_acf(&structured_allocation(&s, 64, 1).unwrap(), &unit).unwrap();
        let b = empirical_acf(&structured_allocation(&s, 64, n0).unwrap(), &unit).unwrap();
        for (x, y) in a.squared.iter().zip(&b.squared) {
            prop_assert!((x - y).abs() <= 1e-9 * a.squared[0]);
        }
    }

    #[test]
    fn isl_is_linear_in_psl(s in spec(), name in prop::sample::select(vec!["QPSK", "16QAM", "64QAM"])) {
        let c = make_constellation(name).unwrap();
        let m = metrics_closed_form(&s, &c);
        let expect = c.mu4() * (s.kappa() as f64 - 1.0) * m.psl_linear + c.mu4() - 1.0;
        prop_assert!((m.isl_linear - expect).abs() < 1e-9);
        prop_assert!((m.psl_linear - s.alpha_frac().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn projection_is_feasible_idempotent_and_optimal(
        v in prop::collection::vec(-3.0f64..6.0, 32),
        kappa in prop::sample::select(vec![2usize, 4, 8]),
        budget_frac in 0.05f64..0.9,
        seed in any::<u64>(),
    ) {
        let n = 32;
        let n_comp = n - n / kappa;
        let budget = 1e-4 * n_comp as f64 + budget_frac * (n as f64 - 1e-3 * n as f64);
        let poly = Polytope::new(n, kappa, 1, budget.min(n as f64 * 0.95), 1e-4).unwrap();
        let p = poly.project(&v);
        prop_assert!(poly.contains(&p, 1e-9));
        let pp = poly.project(&p);
        for (x, y) in p.iter().zip(&pp) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        // Variational inequality: <v - P(v), x - P(v)> <= 0 for feasible x.
        let mut rng = seeded_rng(seed);
        for _ in 0..20 {
            let x = poly.random_point(&mut rng);
            let dot: f64 = v.iter().zip(&p).zip(&x).map(|((vi, pi), xi)| (vi - pi) * (xi - pi)).sum();
            prop_assert!(dot <= 1e-7);
        }
    }

    #[test]
    fn cfar_matches_direct_window_sums(
        power in prop::collection::vec(0.0f64..10.0, 64),
        train in 1usize..8,
        guard in 0usize..4,
    ) {
        let cfg = CfarConfig { train_cells: train, guard_cells: guard, pfa: 1e-3 };
        let det = ca_cfar_power(&power, &cfg).unwrap();
        let n = power.len() as isize;
        let t = cfg.threshold_factor();
        for k in 0..n {
            let mut sum = 0.0;
            for d in (guard as isize + 1)..=(guard + train) as isize {
                sum += power[(k - d).rem_euclid(n) as usize] + power[(k + d).rem_euclid(n) as usize];
            }
            let th = t * sum / (2 * train) as f64;
            prop_assert!((det.threshold_profile[k as usize] - th).abs() <= 1e-9 * th.max(1.0));
            prop_assert_eq!(det.detected_bins.contains(&(k as usize)), power[k as usize] > th);
        }
    }

    #[test]
    fn db_round_trip(x in 1e-12f64..1e12) {
        prop_assert!((db_to_linear(linear_to_db(x)) - x).abs() <= 1e-12 * x);
    }

    #[test]
    fn wrap_distance_is_a_circular_metric(a in 0.0f64..768.0, b in 0.0f64..768.0, c in 0.0f64..768.0) {
        let r = 768.0;
        let d = |x, y| wrap_distance(x, y, r);
        prop_assert!((d(a, b) - d(b, a)).abs() < 1e-9);
        prop_assert!(d(a, b) <= r / 2.0 + 1e-9);
        prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-9);
    }

    #[test]
    fn matching_never_beats_the_identity_assignment(
        truths in prop::collection::vec(0.0f64..768.0, 2),
        est in prop::collection::vec(0.0f64..768.0, 2),
    ) {
        let e = matched_squared_errors(&est, &truths, 768.0);
        let best: f64 = e.iter().sum();
        let direct: f64 = est.iter().zip(&truths).map(|(x, t)| wrap_distance(*x, *t, 768.0).powi(2)).sum();
        let swapped = wrap_distance(est[0], truths[1], 768.0).powi(2) + wrap_distance(est[1], truths[0], 768.0).powi(2);
        prop_assert!((best - direct.min(swapped)).abs() < 1e-6);
    }
}
