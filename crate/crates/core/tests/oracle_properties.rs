use airsurrogate::dataset::{make_windows, SeriesBundle, N_EMIS, N_MET};
use airsurrogate::evaluator::evaluate_persistence;
use airsurrogate::dataset::NormStats;
use airsurrogate::graph::{build_graph, SpatialGraph};
use airsurrogate::numerics::Tensor;
use airsurrogate::oracle::{simulate, synthetic_stations, Forcing, OracleConfig, OracleState};
use chrono::{DateTime, Duration, Utc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph(n: usize, seed: u64) -> SpatialGraph {
    build_graph(synthetic_stations(n, (40.0, 116.0), 250.0, seed), 200.0).unwrap()
}

fn random_forcing(n: usize, steps: usize, seed: u64, wind: f64, emission: f64) -> Forcing {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Forcing::zeros(steps, n);
    for x in f.wind.data_mut() {
        *x = rng.gen_range(-wind..=wind);
    }
    for x in f.emission.data_mut() {
        *x = emission * rng.gen_range(0.0..1.0);
    }
    for x in f.radiation.data_mut() {
        *x = rng.gen_range(0.0..1.0);
    }
    f
}

fn state(n: usize, seed: u64) -> OracleState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OracleState {
        conc: Tensor::new(vec![n, 2], (0..2 * n).map(|_| rng.gen_range(0.0..80.0)).collect()).unwrap(),
        precursor: (0..n).map(|_| rng.gen_range(0.0..20.0)).collect(),
    }
}

fn closed(reaction: f64) -> OracleConfig {
    OracleConfig {
        deposition: [0.0, 0.0],
        reaction_rate: reaction,
        ..OracleConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn closed_system_conserves_mass(n in 2usize..14, seed in 0u64..1000, wind in 0.0..8.0f64, r in 0.0..0.5f64) {
        let g = graph(n, seed);
        let f = random_forcing(n, 200, seed + 1, wind, 0.0);
        let init = state(n, seed + 2);
        let (frames, clamped) = simulate(&init, &closed(r), &g, &f, 200).unwrap();
        prop_assert_eq!(clamped, 0.0);
        let m0 = init.total_mass();
        for fr in &frames {
            prop_assert!(((fr.total_mass() - m0) / m0).abs() < 1e-12);
            prop_assert!(fr.conc.data().iter().all(|&c| c >= 0.0));
        }
    }

    #[test]
    fn sources_with_reaction_off_act_linearly(n in 2usize..10, seed in 0u64..1000, k in 0.5..4.0f64) {
        let g = graph(n, seed);
        let cfg = OracleConfig { reaction_rate: 0.0, ..OracleConfig::default() };
        let f = random_forcing(n, 60, seed, 4.0, 3.0);
        let mut fk = f.clone();
        for x in fk.emission.data_mut() {
            *x *= k;
        }
        let zero = OracleState { conc: Tensor::zeros(&[n, 2]), precursor: vec![0.0; n] };
        let (a, _) = simulate(&zero, &cfg, &g, &f, 60).unwrap();
        let (b, _) = simulate(&zero, &cfg, &g, &fk, 60).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.conc.data().iter().zip(y.conc.data()) {
                prop_assert!((k * u - v).abs() <= 1e-10 * (1.0 + v.abs()));
            }
        }
    }
}

/// Series driven by mean-reverting noise only: no wind, no radiation cycle,
/// sources drawn independently every hour.
fn mean_reverting_bundle(seed: u64, steps: usize) -> SeriesBundle {
    let n = 6;
    let g = graph(n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Forcing::zeros(steps, n);
    for x in f.emission.data_mut() {
        *x = rng.gen_range(0.0..6.0);
    }
    let cfg = OracleConfig { reaction_rate: 0.0, ..OracleConfig::default() };
    let init = OracleState { conc: Tensor::full(&[n, 2], 40.0), precursor: vec![0.0; n] };
    let (frames, _) = simulate(&init, &cfg, &g, &f, steps).unwrap();
    let x = Tensor::stack(&frames.iter().map(|f| f.conc.clone()).collect::<Vec<_>>()).unwrap();
    let start: DateTime<Utc> = "2024-01-01T00:00:00Z".parse().unwrap();
    SeriesBundle::new(
        g.stations().iter().map(|s| s.id.clone()).collect(),
        (0..steps).map(|t| start + Duration::hours(t as i64)).collect(),
        x,
        Tensor::zeros(&[steps, n, N_MET]),
        Tensor::zeros(&[steps, n, N_EMIS]),
    )
    .unwrap()
}

#[test]
fn persistence_error_grows_with_lead_on_mean_reverting_data() {
    for seed in 1..=3 {
        // Burn in past the initial transient.
        let b = mean_reverting_bundle(seed, 4000);
        let windows: Vec<_> = make_windows(&b, 4, 24, 1)
            .unwrap()
            .into_iter()
            .filter(|w| w.origin_index > 200)
            .collect();
        let r = evaluate_persistence(&windows, &NormStats::identity()).unwrap();
        for lead in 2..=24 {
            assert!(
                r.mae_at(lead) >= r.mae_at(lead - 1),
                "seed {seed}: lead {lead} MAE {} < lead {} MAE {}",
                r.mae_at(lead),
                lead - 1,
                r.mae_at(lead - 1)
            );
        }
    }
}
