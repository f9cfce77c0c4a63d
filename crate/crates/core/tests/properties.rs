use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tangle_core::harness::{NpChoice, NpStep, RunRecord, TraceSummary, SELECTION};
use tangle_core::ptmc::{exchange_accept, update_ladder, ExchangeStats, Ladder};
use tangle_core::qstate::{PureState, C64, DIM};
use tangle_core::roof::{
    project_feasible, random_decomposition, random_feasible_decomposition, random_state,
};
use tangle_core::{
    average_tangle, energy, make_density, residual_r2, three_tangle_pure, validate_density,
    EnergyParams, EngineConfig, ScenarioSpec,
};

fn unitary(theta: f64, phi: f64, chi: f64) -> [[C64; 2]; 2] {
    let (c, s) = (theta.cos(), theta.sin());
    let e = |x: f64| C64::from_polar(1.0, x);
    [[e(phi) * c, e(chi) * s], [-e(-chi) * s, e(-phi) * c]]
}

fn state(seed: u64) -> PureState {
    random_state(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn scenario() -> impl Strategy<Value = ScenarioSpec> {
    prop_oneof![
        (0.0..=1.0f64).prop_map(|p| ScenarioSpec::GhzW { p }),
        (0.0..=1.0f64, 1.0..4.0f64).prop_map(|(p, n)| ScenarioSpec::GhzWFlipW { p, n }),
        (0.0..=1.0f64).prop_map(|p| ScenarioSpec::GhzNoise { p }),
        (0.0..=1.0f64, -1.0..=1.0f64, 0.0..0.7f64, 0.0..0.7f64)
            .prop_map(|(p, a, c, d)| ScenarioSpec::GGhzGW { p, a, c, d }),
    ]
}

proptest! {
    #[test]
    fn tangle_in_unit_interval(seed in any::<u64>()) {
        let psi = state(seed);
        prop_assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
        let t = three_tangle_pure(&psi);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&t));
    }

    #[test]
    fn tangle_invariant_under_local_unitaries(
        seed in any::<u64>(),
        qubit in 0usize..3,
        theta in 0.0..6.3f64,
        phi in 0.0..6.3f64,
        chi in 0.0..6.3f64,
    ) {
        let psi = state(seed);
        let moved = psi.apply_local(qubit, unitary(theta, phi, chi));
        prop_assert!((three_tangle_pure(&psi) - three_tangle_pure(&moved)).abs() < 1e-12);
    }

    #[test]
    fn tangle_invariant_under_qubit_permutations(seed in any::<u64>(), k in 0usize..6) {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let psi = state(seed);
        let t = three_tangle_pure(&psi.permute_qubits(perms[k]));
        prop_assert!((three_tangle_pure(&psi) - t).abs() < 1e-12);
    }

    #[test]
    fn scenario_densities_are_valid(spec in scenario()) {
        let rho = make_density(&spec).unwrap();
        let diag = validate_density(&rho);
        prop_assert!(diag.is_valid(), "{diag:?}");
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn defining_ensembles_are_exactly_feasible(spec in scenario()) {
        if let Some(ens) = spec.defining_ensemble().unwrap() {
            let dec = tangle_core::Decomposition::from_ensemble(&ens).unwrap();
            let rho = make_density(&spec).unwrap();
            prop_assert!(residual_r2(&dec, &rho) < 1e-24);
        }
    }

    #[test]
    fn decompositions_are_normalized(seed in any::<u64>(), np in 1usize..12) {
        let dec = random_decomposition(np, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let total: f64 = dec.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(dec.weights().iter().all(|&w| w >= 0.0));
        prop_assert!(dec.states().iter().all(|s| (s.norm_sqr() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn energy_splits_into_tangle_and_penalty(
        seed in any::<u64>(),
        np in 1usize..8,
        kappa in 1.0..1e8f64,
        spec in scenario(),
    ) {
        let dec = random_decomposition(np, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let rho = make_density(&spec).unwrap();
        let r2 = residual_r2(&dec, &rho);
        prop_assert!(r2 >= 0.0);
        let params = EnergyParams::new(kappa, rho).unwrap();
        let e = energy(&dec, &params);
        let parts = average_tangle(&dec) + kappa * r2;
        prop_assert!((e - parts).abs() <= 1e-12 * parts.max(1.0));
    }

    #[test]
    fn feasible_starts_and_projection(seed in any::<u64>(), extra in 0usize..6, spec in scenario()) {
        let rho = make_density(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = validate_density(&rho).rank;
        let np = rank.max(1) + extra;
        let dec = random_feasible_decomposition(&rho, np, &mut rng).unwrap();
        prop_assert!(residual_r2(&dec, &rho) < 1e-24);

        // A perturbed copy projects back onto the constraint.
        let states: Vec<PureState> = dec
            .states()
            .iter()
            .map(|s| {
                let mut c = *s.coeffs();
                c[(seed % DIM as u64) as usize] += C64::new(1e-3, -1e-3);
                PureState::new(c).unwrap()
            })
            .collect();
        let nudged = tangle_core::Decomposition::new(dec.weights().to_vec(), states).unwrap();
        let fixed = project_feasible(&nudged, &rho).unwrap();
        prop_assert!(residual_r2(&fixed, &rho) < 1e-24);
        let total: f64 = fixed.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ladder_update_keeps_order_and_endpoints(
        m in 2usize..40,
        c in 0.05..0.95f64,
        rates in proptest::collection::vec((1u64..500, 0.0..=1.0f64), 39),
        rounds in 1usize..50,
    ) {
        let mut ladder = Ladder::geometric(m, 100.0, 1e-6, c).unwrap();
        let (lo, hi) = (ladder.betas()[0], ladder.betas()[m - 1]);
        for r in 0..rounds {
            let mut stats = ExchangeStats::new(m - 1);
            for pair in 0..m - 1 {
                let (n, f) = rates[(pair + r) % rates.len()];
                stats.attempts[pair] = n;
                stats.accepts[pair] = (f * n as f64).floor() as u64;
            }
            ladder = update_ladder(&ladder, &stats).unwrap();
            prop_assert!(ladder.is_strictly_increasing());
            prop_assert_eq!(ladder.betas()[0], lo);
            prop_assert_eq!(ladder.betas()[m - 1], hi);
        }
    }

    #[test]
    fn exchange_downhill_always_accepted(
        b0 in 1e-3..1e3f64,
        db in 0.0..1e3f64,
        e0 in -10.0..10.0f64,
        de in 0.0..10.0f64,
        u in 0.0..1.0f64,
    ) {
        // The colder slot holds the higher energy.
        prop_assert!(exchange_accept(b0, e0, b0 + db, e0 + de, u));
    }

    #[test]
    fn run_record_json_round_trip_is_exact(
        tau3 in any::<f64>().prop_filter("finite", |x| x.is_finite()),
        r2 in any::<f64>().prop_filter("finite", |x| x.is_finite()),
        trace in proptest::collection::vec(-1e6..1e6f64, 0..200),
        rates in proptest::collection::vec(0.0..=1.0f64, 3),
        seed in any::<u64>(),
        fixed in proptest::option::of(1usize..30),
    ) {
        let ladder = Ladder::from_betas(vec![0.01, 0.5, 7.0, 1e6], 0.7).unwrap();
        let rec = RunRecord {
            scenario: ScenarioSpec::GGhzGW { p: tau3.abs().fract(), a: 0.2, c: 0.2, d: 0.2 },
            config: EngineConfig { seed, ..EngineConfig::default() },
            np_choice: fixed.map_or(NpChoice::Auto, NpChoice::Fixed),
            seed,
            tau3,
            r2,
            np_used: fixed.unwrap_or(4),
            wall_time_s: r2.abs(),
            ladder: Some(ladder),
            exchange_rates: rates,
            tuner_converged: seed % 2 == 0,
            tuner_max_relative_change: tau3.abs(),
            best_slot: (seed % 64) as usize,
            selection: SELECTION.to_string(),
            energy_trace: TraceSummary::new(&trace),
            np_history: vec![NpStep { np: 4, tau3, r2 }],
        };
        let back = RunRecord::from_json(&rec.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.tau3.to_bits(), rec.tau3.to_bits());
        prop_assert_eq!(back.r2.to_bits(), rec.r2.to_bits());
        prop_assert_eq!(back, rec);
    }
}
