use fedban_core::harness::{
    emit_plot_data, format_sig9, parse_config, read_csv, run_experiment, run_sweep, summarize, write_csv, Axis,
    ConfigError, HarnessError, CSV_HEADER,
};
use proptest::prelude::*;

const SMALL: &str = r#"{
    "mode": "centralized",
    "env": {"d": 3, "agents": 3, "horizon": 250, "master_seed": 4},
    "budget": {"epsilon": 1.0, "delta": 0.1, "alpha": 0.1},
    "threshold": "theorem_default",
    "repeats": 3,
    "checkpoint_every": 100,
    "sweep": {"epsilon": [0.1, 1.0, 10.0], "communication": ["every_round", "theorem_default", "never"], "dimension": [2, 3, 4]}
}"#;

#[test]
fn csv_round_trip_and_shape() {
    let cfg = parse_config(SMALL).unwrap();
    let records = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/runs.csv");
    write_csv(&records, &path).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    // ⌈250/100⌉ checkpoints (100, 200, 250)
    assert_eq!(text.lines().count() - 1, 3 * 3 * 3);

    let rows = read_csv(&path).unwrap();
    let keys: Vec<_> = rows.iter().map(|r| (r.run_id, r.t, r.agent)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let original: Vec<_> = records.iter().flat_map(|r| r.rows.iter()).collect();
    for (got, want) in rows.iter().zip(original) {
        assert_eq!((got.run_id, got.t, got.agent, got.sync_count, got.messages_sent),
                   (want.run_id, want.t, want.agent, want.sync_count, want.messages_sent));
        let tol = 5e-9 * want.cum_regret.abs().max(1e-300);
        assert!((got.cum_regret - want.cum_regret).abs() <= tol);
    }
}

#[test]
fn runs_are_reproducible_and_distinct() {
    let cfg = parse_config(SMALL).unwrap();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].final_regret, a[1].final_regret);
    assert!(a.iter().all(|r| r.meta.config_hash == cfg.hash()));
}

#[test]
fn summary_matches_direct_mean() {
    let cfg = parse_config(SMALL).unwrap();
    let records = run_experiment(&cfg).unwrap();
    let summary = summarize(&records);
    assert_eq!(summary.iter().map(|s| s.t).collect::<Vec<_>>(), vec![100, 200, 250]);
    for s in &summary {
        let per_run: Vec<f64> = records
            .iter()
            .map(|r| {
                let rows: Vec<f64> = r.rows.iter().filter(|x| x.t == s.t).map(|x| x.cum_regret).collect();
                rows.iter().sum::<f64>() / rows.len() as f64
            })
            .collect();
        let mean = per_run.iter().sum::<f64>() / 3.0;
        let var = per_run.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2.0;
        assert!((s.mean_per_agent_regret - mean).abs() < 1e-9 * mean.abs().max(1.0));
        assert!((s.std - var.sqrt()).abs() < 1e-9 * mean.abs().max(1.0));
        assert_eq!(s.runs, 3);
    }
}

#[test]
fn plot_data_has_one_series_per_value() {
    let cfg = parse_config(SMALL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for axis in [Axis::Epsilon, Axis::Communication, Axis::Dimension] {
        let series = run_sweep(&cfg, axis).unwrap();
        assert_eq!(series.len(), 3, "{axis}");
        let path = dir.path().join(format!("plot_{axis}.csv"));
        emit_plot_data(&series, axis, &path).unwrap();
        let mut rd = csv::Reader::from_path(&path).unwrap();
        assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["axis_value", "T", "mean_per_agent_regret", "std"]);
        let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 9);
        let values: std::collections::BTreeSet<String> = rows.iter().map(|r| r[0].to_string()).collect();
        assert_eq!(values.len(), 3);
    }
}

#[test]
fn empty_sweep_reports_missing_axis() {
    let mut cfg = parse_config(SMALL).unwrap();
    cfg.sweep.as_mut().unwrap().dimension.clear();
    let series = run_sweep(&cfg, Axis::Dimension).unwrap();
    let dir = tempfile::tempdir().unwrap();
    match emit_plot_data(&series, Axis::Dimension, dir.path().join("p.csv")) {
        Err(HarnessError::MissingAxis(a)) => assert_eq!(a, "dimension"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn decentralized_config_runs() {
    let text = r#"{
        "mode": "decentralized",
        "env": {"d": 3, "agents": 6, "horizon": 300},
        "budget": {"epsilon": 1.0, "delta": 0.1, "alpha": 0.1},
        "network": {"topology": {"kind": "line"}, "gamma": 2},
        "repeats": 2
    }"#;
    let cfg = parse_config(text).unwrap();
    let recs = run_experiment(&cfg).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].meta.cover_size, Some(2));
    assert_eq!(recs[0].rows.len(), 3 * 6);
}

#[test]
fn every_violation_is_listed() {
    let text = SMALL
        .replace("\"epsilon\": 1.0", "\"epsilon\": -1.0")
        .replace("\"delta\": 0.1", "\"delta\": 2.0")
        .replace("\"repeats\": 3", "\"repeats\": 0");
    match parse_config(&text) {
        Err(ConfigError::Validation(v)) => {
            for field in ["budget.epsilon", "budget.delta", "repeats"] {
                assert!(v.iter().any(|m| m.starts_with(field)), "{field} missing from {v:?}");
            }
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_config("{ not json"), Err(ConfigError::Parse { .. })));
    assert!(matches!(parse_config(&SMALL.replace("\"repeats\"", "\"repeat\"")), Err(ConfigError::Parse { .. })));
}

proptest! {
    #[test]
    fn sig9_keeps_nine_digits(x in -1e12f64..1e12) {
        let s = format_sig9(x);
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-9 * x.abs());
        let digits = s.trim_start_matches('-').chars().filter(|c| c.is_ascii_digit()).collect::<String>();
        prop_assert!(digits.trim_start_matches('0').trim_end_matches('0').len() <= 9, "{}", s);
    }
}
