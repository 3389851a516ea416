use std::collections::BTreeMap;
use std::sync::OnceLock;

use nelsonlab::dispersion::energy_dispersions;
use nelsonlab::nelson::{
    advance_ensemble, decompose_velocities, sample_density_with, step_forward_sde_with, BinnedField, DriftTable,
};
use nelsonlab::phase_space::{
    characteristic_function, default_offset_grid, density_from_amplitudes, marginals, phase_space_amplitude,
    wigner_from_characteristic,
};
use nelsonlab::scenario::{
    Analyses, Bound, EnsembleSpec, GridSpec, InitialState, ScenarioConfig, ScenarioName,
};
use nelsonlab::schrodinger::{solve_eigenstates, Eigenstate, VelocityFields, WaveFunction};
use nelsonlab::hydro::gaussian_packet;
use nelsonlab::{make_grid, ComplexField, Execution, Potential, RealField, SimUnits};
use num_complex::Complex64;
use proptest::prelude::*;

fn harmonic_states() -> &'static Vec<Eigenstate> {
    static STATES: OnceLock<Vec<Eigenstate>> = OnceLock::new();
    STATES.get_or_init(|| {
        let g = make_grid(-10.0, 10.0, 256).unwrap();
        solve_eigenstates(&Potential::Harmonic { omega: 1.0 }, &g, &SimUnits::default(), 4).unwrap()
    })
}

fn superposition(coeffs: &[(f64, f64)]) -> WaveFunction {
    let states = harmonic_states();
    let grid = *states[0].psi.grid();
    let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (st, &(a, ph)) in states.iter().zip(coeffs) {
        let w = Complex64::from_polar(a, ph);
        values.iter_mut().zip(&st.psi.field.values).for_each(|(v, s)| *v += w * s);
    }
    WaveFunction::normalized(ComplexField::new(grid, values).unwrap(), 0.0).unwrap()
}

fn scenario_name() -> impl Strategy<Value = ScenarioName> {
    prop::sample::select(ScenarioName::ALL.to_vec())
}

fn ensemble_spec() -> impl Strategy<Value = EnsembleSpec> {
    (1usize..200_000, 1e-4f64..0.1, 1usize..2000, 0..=i64::MAX as u64, 1usize..4, 5usize..100).prop_map(
        |(particles, dt, steps, seed, lag, record_steps)| EnsembleSpec {
            particles,
            dt,
            steps,
            seed,
            lag,
            record_steps,
            histogram_points: 128,
            checkpoints: 10,
            estimator_half_width: 4.0,
            estimator_bins: 64,
        },
    )
}

fn config() -> impl Strategy<Value = ScenarioConfig> {
    let potential = prop_oneof![
        Just(Potential::Free),
        (0.1f64..5.0).prop_map(|omega| Potential::Harmonic { omega }),
        (1.0f64..10.0).prop_map(|width| Potential::Box { width }),
        prop::collection::vec(-2.0f64..2.0, 1..6).prop_map(|coefficients| Potential::Polynomial { coefficients }),
    ];
    let initial = prop_oneof![
        (0usize..5).prop_map(|level| InitialState::Eigenstate { level }),
        (-2.0f64..2.0, 0.2f64..3.0, -3.0f64..3.0).prop_map(|(x0, sigma, k)| InitialState::Gaussian { x0, sigma, k }),
    ];
    let toggles = prop::array::uniform5(any::<bool>()).prop_map(|t| Analyses {
        wigner: t[0],
        dispersion: t[1],
        force_balance: t[2],
        hydro: t[3],
        parabolic: t[4],
    });
    let tolerances = prop::collection::btree_map(
        prop::sample::select(nelsonlab::scenario::METRICS.to_vec()).prop_map(str::to_string),
        (prop::option::of(-1.0f64..1.0), prop::option::of(1.0f64..2.0)).prop_map(|(min, max)| Bound { min, max }),
        0..4,
    );
    (
        scenario_name(),
        "[a-z ]{0,20}",
        (-20.0f64..-1.0, 1.0f64..20.0, 3u32..11),
        potential,
        initial,
        prop::option::of(ensemble_spec()),
        toggles,
        tolerances,
        prop::option::of("[a-z]{1,8}"),
    )
        .prop_map(
            |(scenario, description, (x_min, x_max, p), potential, initial, ensemble, analyses, tolerances, out)| {
                ScenarioConfig {
                    scenario,
                    description,
                    output_dir: out.map(Into::into),
                    grid: GridSpec { x_min, x_max, n: 1 << p },
                    units: SimUnits::default(),
                    potential,
                    initial,
                    ensemble,
                    analyses,
                    dispersion: Default::default(),
                    hydro: Default::default(),
                    parabolic: Default::default(),
                    tolerances: tolerances.into_iter().collect::<BTreeMap<_, _>>(),
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips_through_toml(c in config()) {
        let text = c.to_toml().unwrap();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn grid_cells_contain_their_points(x_min in -50.0f64..0.0, width in 0.5f64..100.0, p in 3u32..12) {
        let g = make_grid(x_min, x_min + width, 1 << p).unwrap();
        for j in [0, g.len() / 3, g.len() - 1] {
            prop_assert_eq!(g.cell_of(g.x(j)), Some(j));
        }
        prop_assert!(make_grid(x_min, x_min + width, (1 << p) + 1).is_err());
    }

    #[test]
    fn decomposition_recombines(vals in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20)) {
        let n = vals.len();
        let mk = |v: Vec<f64>| BinnedField {
            bin_centers: (0..n).map(|i| i as f64).collect(),
            values: v,
            counts: vec![100; n],
            std_err: vec![0.1; n],
            valid: vec![true; n],
        };
        let c = mk(vals.iter().map(|p| p.0).collect());
        let cs = mk(vals.iter().map(|p| p.1).collect());
        let (v, u) = decompose_velocities(&c, &cs).unwrap();
        for b in 0..n {
            prop_assert!((v.values[b] + u.values[b] - c.values[b]).abs() < 1e-12);
            prop_assert!((v.values[b] - u.values[b] - cs.values[b]).abs() < 1e-12);
        }
    }

    #[test]
    fn kinetic_time_product_is_half_hbar(
        x0 in -2.0f64..2.0, sigma in 0.5f64..2.0, k in -2.0f64..2.0,
        hbar in 0.5f64..2.0, mass in 0.5f64..2.0,
    ) {
        let g = make_grid(-25.0, 25.0, 1024).unwrap();
        let psi = gaussian_packet(g, x0, sigma, k).unwrap();
        let units = SimUnits::new(hbar, mass).unwrap();
        let rep = energy_dispersions(&psi, &Potential::Harmonic { omega: 1.0 }, &units).unwrap();
        prop_assert!((rep.product_tk.unwrap() - 0.5 * hbar).abs() <= 1e-12 * hbar);
        prop_assert!(rep.product_te.unwrap() >= 0.5 * hbar - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn wigner_structure_for_superpositions(coeffs in prop::collection::vec((0.1f64..1.0, 0.0f64..6.3), 4)) {
        let psi = superposition(&coeffs);
        let units = SimUnits::default();
        let chi = characteristic_function(&psi, &default_offset_grid(psi.grid())).unwrap();
        prop_assert!(chi.hermitian_defect() <= 1e-12);
        let f = wigner_from_characteristic(&chi, &units).unwrap();
        prop_assert!((f.integral() - 1.0).abs() < 1e-10);
        let (mx, _) = marginals(&f);
        let rho = psi.density();
        let worst = mx.values.iter().zip(&rho.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-10);
        let f2 = density_from_amplitudes(&phase_space_amplitude(&psi, &units).unwrap()).unwrap();
        prop_assert!(f.max_difference(&f2).unwrap() < 1e-10);
    }

    #[test]
    fn segmented_runs_match_single_run(seed in any::<u64>(), split in 1usize..30) {
        let g = make_grid(-10.0, 10.0, 256).unwrap();
        let rho = RealField::from_fn(g, |x| (-x * x).exp() / std::f64::consts::PI.sqrt());
        let table = DriftTable::from_fields(&VelocityFields::from_fns(g, |x| 0.1 * x.sin(), |x| -x)).unwrap();
        let units = SimUnits::default();
        let ens = sample_density_with(&rho, 700, seed, Execution::Parallel).unwrap();
        let seq = sample_density_with(&rho, 700, seed, Execution::Sequential).unwrap();
        prop_assert_eq!(&ens, &seq);
        let whole = advance_ensemble(&ens, &table, &units, 0.01, 30, Execution::Parallel).unwrap();
        let first = advance_ensemble(&ens, &table, &units, 0.01, split, Execution::Sequential).unwrap();
        let rest = advance_ensemble(&first, &table, &units, 0.01, 30 - split, Execution::Parallel).unwrap();
        prop_assert_eq!(&whole.positions, &rest.positions);
        let batch = step_forward_sde_with(&ens, &table, &units, 0.01, 30, Execution::Sequential).unwrap();
        prop_assert_eq!(batch.column(30), whole.positions);
    }
}
