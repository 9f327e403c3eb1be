use airsurrogate::dataset::{prepare_splits, make_windows, NormStats};
use airsurrogate::evaluator::{build_matrix, evaluate_model, evaluate_persistence, run_experiment_suite, score};
use airsurrogate::graph::build_graph;
use airsurrogate::model::{predict, ModelConfig, ModelParams};
use airsurrogate::oracle::{generate, synthetic_stations, OracleConfig};
use airsurrogate::trainer::TrainConfig;

fn setup() -> (airsurrogate::graph::SpatialGraph, airsurrogate::dataset::SeriesBundle) {
    let g = build_graph(synthetic_stations(5, (40.0, 116.0), 250.0, 3), 200.0).unwrap();
    let b = generate(&OracleConfig::default(), &g, 300).unwrap();
    (g, b)
}

#[test]
fn scores_are_reported_in_physical_units() {
    let (g, b) = setup();
    let splits = prepare_splits(&b, [0.6, 0.2, 0.2], 6, 4, 3).unwrap();
    let cfg = ModelConfig { hidden: 8, ..ModelConfig::default() };
    let params = ModelParams::init(&cfg, 4).unwrap();
    let model = evaluate_model("m", None, &splits.test, &g, &params, &cfg, &splits.stats).unwrap();

    // Same forecasts, denormalized by hand and scored against raw windows.
    let raw: Vec<_> = make_windows(&b, 6, 4, 3)
        .unwrap()
        .into_iter()
        .filter(|w| splits.test.iter().any(|t| t.origin_index == w.origin_index))
        .collect();
    assert_eq!(raw.len(), splits.test.len());
    let preds: Vec<_> = splits
        .test
        .iter()
        .map(|s| splits.stats.denormalize_x(&predict(s, &g, &params, &cfg).unwrap()))
        .collect();
    let by_hand = score("m", None, &raw, &preds, &NormStats::identity()).unwrap();
    assert!((model.mae - by_hand.mae).abs() < 1e-8);
    assert!((model.rmse - by_hand.rmse).abs() < 1e-8);
    for (a, b) in model.per_lead.iter().zip(&by_hand.per_lead) {
        assert!((a.mae - b.mae).abs() < 1e-8 && (a.rmse - b.rmse).abs() < 1e-8);
    }

    let base = evaluate_persistence(&splits.test, &splits.stats).unwrap();
    let raw_base = evaluate_persistence(&raw, &NormStats::identity()).unwrap();
    assert!((base.mae - raw_base.mae).abs() < 1e-8);
}

#[test]
fn suite_results_do_not_depend_on_worker_count() {
    let (g, b) = setup();
    let splits = prepare_splits(&b, [0.6, 0.2, 0.2], 6, 4, 6).unwrap();
    let model = ModelConfig { hidden: 6, ..ModelConfig::default() };
    let train = TrainConfig { max_epochs: 2, batch_size: 8, lr: 1e-3, ..TrainConfig::default() };
    let names: Vec<String> = ["full", "no-tad", "persistence"].iter().map(|s| s.to_string()).collect();
    let cells = build_matrix(&names, &model, &train, &[1, 2]).unwrap();
    let one = run_experiment_suite(&cells, &splits, &g, 1).unwrap();
    let two = run_experiment_suite(&cells, &splits, &g, 2).unwrap();
    assert_eq!(one.len(), 6);
    for (a, b) in one.iter().zip(&two) {
        assert_eq!(a.cell.tag, b.cell.tag);
        assert_eq!(a.params, b.params);
        let (ra, rb) = (a.report.as_ref().unwrap(), b.report.as_ref().unwrap());
        assert_eq!(ra.mae.to_bits(), rb.mae.to_bits());
    }
}

#[test]
fn a_failing_cell_does_not_stop_the_suite() {
    let (g, b) = setup();
    let splits = prepare_splits(&b, [0.6, 0.2, 0.2], 6, 4, 6).unwrap();
    let model = ModelConfig { hidden: 4, ..ModelConfig::default() };
    // A huge step drives the weights to overflow.
    let bad = TrainConfig { max_epochs: 3, lr: 1e200, clip_norm: 0.0, ..TrainConfig::default() };
    let mut cells = build_matrix(&["full".to_string()], &model, &bad, &[1]).unwrap();
    cells.extend(build_matrix(&["persistence".to_string()], &model, &bad, &[1]).unwrap());
    let out = run_experiment_suite(&cells, &splits, &g, 1).unwrap();
    assert!(out[0].report.is_err(), "{:?}", out[0].report);
    assert!(out[1].report.is_ok());
}
