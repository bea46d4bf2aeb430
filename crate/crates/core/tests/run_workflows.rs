//! Cross-module workflows: a boosted run flowing through selection,
//! diagnostics, and storage, plus the reduction behaviors the baselines
//! must satisfy against each other.

use cbnn_core::boost::BoostConfig;
use cbnn_core::data::{make_blobs, split};
use cbnn_core::engine::{
    ensemble_predictions, run_cbnn, run_horizontal_voting, select_checkpoints, ScheduleSettings,
};
use cbnn_core::learner::LearnerConfig;
use cbnn_core::metrics;
use cbnn_core::persist;

#[test]
fn boosted_run_selection_and_reload_pipeline() {
    let source = make_blobs(120, 3, 2, 1.5, 77).unwrap();
    let (train, test) = split(&source, 0.25, 77, true).unwrap();
    let learner_cfg = LearnerConfig {
        hidden: vec![24],
        l2: 1e-4,
        batch_size: 32,
    };
    let boost_cfg = BoostConfig::new(0.01, 80, 560, 3).unwrap();
    let (ensemble, record) = run_cbnn(
        &train,
        Some(&test),
        &boost_cfg,
        &learner_cfg,
        &ScheduleSettings::default(),
        77,
    )
    .unwrap();
    assert!(ensemble.len() >= 5);

    // Half the checkpoints still produce a sane classifier.
    let selected = select_checkpoints(&ensemble, ensemble.len() / 2).unwrap();
    let predictions = ensemble_predictions(&selected, &test).unwrap();
    let selected_error = metrics::error_rate(predictions.view(), test.labels());
    assert!(selected_error < 0.5, "selected-subset error {selected_error}");

    // Correlation matrix over the members is well-formed.
    let outputs = metrics::member_softmax_outputs(&ensemble, &test).unwrap();
    let matrix = metrics::correlation_matrix(&outputs).unwrap();
    for (i, row) in matrix.iter().enumerate() {
        assert!((row[i] - 1.0).abs() < 1e-12);
        for (j, v) in row.iter().enumerate() {
            assert!((*v - matrix[j][i]).abs() < 1e-15);
            assert!((-1.0..=1.0).contains(v));
        }
    }

    // Surface over the first, middle, and final checkpoints evaluates
    // finite losses everywhere.
    let members = ensemble.members();
    let grid = metrics::surface_grid(
        &members[0].params,
        &members[members.len() / 2].params,
        &members[members.len() - 1].params,
        &train,
        metrics::SurfaceExtent {
            x: (-1.0, 2.0),
            y: (-1.0, 2.0),
        },
        (6, 6),
    )
    .unwrap();
    assert!(grid
        .values
        .iter()
        .all(|row| row.iter().all(|v| v.is_finite())));

    // Store, reload, and keep behaving identically on fresh inputs.
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    persist::save_run(&record, &ensemble, &run_dir).unwrap();
    let (reloaded_record, reloaded) = persist::load_run(&run_dir).unwrap();
    assert_eq!(reloaded_record.checkpoints.len(), reloaded.len());
    let before = ensemble_predictions(&ensemble, &test).unwrap();
    let after = ensemble_predictions(&reloaded, &test).unwrap();
    assert_eq!(before, after);
}

#[test]
fn horizontal_voting_reuses_the_single_trajectory() {
    let source = make_blobs(90, 3, 2, 1.5, 5).unwrap();
    let (train, _) = split(&source, 0.2, 5, true).unwrap();
    let learner_cfg = LearnerConfig {
        hidden: vec![16],
        l2: 1e-4,
        batch_size: 32,
    };
    let sched = ScheduleSettings::default();
    let (hv, record) =
        run_horizontal_voting(&train, None, &learner_cfg, &sched, 400, 100, 5).unwrap();
    assert_eq!(hv.len(), 4);
    // No reweighting: the recorded z values are all exactly one and the
    // sample weights stayed uniform.
    assert!(record.checkpoints.iter().all(|c| c.z == 1.0));
    let n = train.len() as f64;
    assert!(record
        .final_weights
        .iter()
        .all(|&w| (w - 1.0 / n).abs() < 1e-15));
}
