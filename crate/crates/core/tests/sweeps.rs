//! Shipped configs and sweep specs: they parse, expand to the intended table
//! shapes, and a small sweep aggregates as a hand computation does.

use std::path::{Path, PathBuf};

use ipm_ssl::config::{validate_config, ExperimentConfig};
use ipm_ssl::eval::{mean_std, run_sweep, RowStatus, SweepSpec};
use serde_json::json;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cells(spec: &SweepSpec) -> Vec<(Vec<String>, bool)> {
    spec.rows()
        .iter()
        .map(|row| {
            let doc = spec.cell_document(row, &json!(0)).unwrap();
            let cfg = ExperimentConfig::from_value(doc).unwrap();
            (spec.row_labels(row), validate_config(&cfg).is_ok())
        })
        .collect()
}

#[test]
fn shipped_configs_validate() {
    for name in [
        "synthetic_fisher_kplus1.json",
        "benchmark_fisher_kplus1.json",
        "benchmark_supervised.json",
    ] {
        let cfg = ExperimentConfig::load(&configs().join(name), &[]).unwrap();
        assert!(validate_config(&cfg).is_ok(), "{name}");
    }
}

#[test]
fn placement_sweep_has_twelve_valid_rows() {
    let spec = SweepSpec::load(&configs().join("sweep_constraint_placement.json")).unwrap();
    let rows = cells(&spec);
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|(_, ok)| *ok), "{rows:?}");
    assert_eq!(rows[0].0, vec!["GP(f)".to_string()]);
    assert_eq!(rows[11].0, vec!["F(f+),S(f-)".to_string()]);
    assert_eq!(spec.seeds().len(), 5);
}

#[test]
fn formulation_sweep_covers_every_pair() {
    let spec = SweepSpec::load(&configs().join("sweep_formulation.json")).unwrap();
    let rows = cells(&spec);
    assert_eq!(rows.len(), 15);
    assert!(rows.iter().all(|(_, ok)| *ok));
}

#[test]
fn normalization_sweep_rejects_what_cannot_run() {
    let spec = SweepSpec::load(&configs().join("sweep_normalization.json")).unwrap();
    let rows = cells(&spec);
    assert_eq!(rows.len(), 24);
    for (labels, ok) in &rows {
        let bn_gradient = labels[0] == "bn" && labels[1] != "fisher";
        let per_channel_stats = labels[0].starts_with("ln_c11");
        assert_eq!(*ok, !(bn_gradient || per_channel_stats), "{labels:?}");
    }
}

#[test]
fn small_sweep_aggregates_like_a_hand_computation() {
    let base = json!({
        "ipm": "fisher",
        "formulation": "k_plus_one",
        "norm": {"kind": "no_norm"},
        "dataset": {"kind": "synthetic", "classes": 3, "n_per_class": 40, "input_dim": 2, "seed": 0},
        "n_labeled": 6,
        "arch": {"backbone": {"kind": "mlp", "hidden": [8], "feature_dim": 4}, "leaky_slope": 0.2,
                 "noise_dim": 2, "gen_hidden": [8]},
        "hyper": {"epochs": 2, "batch_size": 16},
        "seed": 0
    });
    let spec: SweepSpec = serde_json::from_value(json!({
        "base": base,
        "axes": [
            {"name": "norm", "key": "norm", "values": [{"kind": "no_norm"}, {"kind": "batch_norm"}],
             "labels": ["none", "bn"]},
            {"name": "ipm", "key": "ipm", "values": ["fisher", "sobolev"]},
            {"name": "seed", "key": "seed", "values": [0, 1]}
        ]
    }))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = run_sweep(&spec, dir.path(), 2).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3].status, RowStatus::Rejected);
    assert!(rows[3].reason.as_deref().unwrap().contains("bn_gradient_norm"));

    let cells = std::fs::read_to_string(dir.path().join("cells.csv")).unwrap();
    for (coords, row) in spec.rows().iter().zip(&rows).take(3) {
        let labels = spec.row_labels(coords);
        assert_eq!(row.status, RowStatus::Ok);
        assert_eq!(row.n_seeds, 2);
        let errors: Vec<f64> = cells
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|f| f[0] == labels[0] && f[1] == labels[1])
            .map(|f| f[4].parse().unwrap())
            .collect();
        assert_eq!(errors.len(), 2);
        let mean = (errors[0] + errors[1]) / 2.0;
        let std = ((errors[0] - mean).powi(2) + (errors[1] - mean).powi(2)).sqrt() / 2f64.sqrt();
        assert!((row.mean.unwrap() - mean).abs() < 1e-15);
        assert!((row.std.unwrap() - std).abs() < 1e-15);
        assert_eq!(mean_std(&errors), Some((row.mean.unwrap(), row.std.unwrap())));
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}
