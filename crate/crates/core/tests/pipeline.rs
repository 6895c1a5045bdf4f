use std::path::{Path, PathBuf};

use curvaudit::attack::Method;
use curvaudit::curvature::{CurvatureConfig, ProbeMode, Variant};
use curvaudit::data::{CsvSchema, TransformSpec};
use curvaudit::experiment::{
    observe, run_experiment, sweep_csv, sweep_dataset_size, DatasetSpec, ExperimentManifest, RunOptions, Selection,
    Stage,
};
use curvaudit::nn::{init_mlp, Example, LayerSizes};
use curvaudit::Error;

fn minimal() -> ExperimentManifest {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../manifests/minimal.json");
    ExperimentManifest::load(&path).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn minimal_manifest_produces_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&minimal(), &RunOptions::new(dir.path())).unwrap();
    for f in [
        "manifest.json",
        "dataset.json",
        "dataset.csv",
        "target/model.json",
        "shadows/ledger.json",
        "shadows/model_3.json",
        "scores.jsonl",
        "attacks.jsonl",
        "metrics.json",
        "roc_yeom.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let metrics = out.metrics.unwrap();
    assert_eq!(metrics.n_members + metrics.n_nonmembers, 60);
    assert_eq!(metrics.methods.len(), 1);
    assert_eq!(metrics.methods[0].method, "yeom");
    // 5 models x 60 examples x 4 statistics
    let lines = String::from_utf8(read(&dir.path().join("scores.jsonl")))
        .unwrap()
        .lines()
        .count();
    assert_eq!(lines, 5 * 60 * 4);
}

#[test]
fn reruns_are_byte_identical_and_thread_count_free() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = minimal();
    run_experiment(&m, &RunOptions::new(a.path())).unwrap();
    let mut opts = RunOptions::new(b.path());
    opts.jobs = 3;
    run_experiment(&m, &opts).unwrap();
    for f in ["metrics.json", "scores.jsonl", "attacks.jsonl", "shadows/ledger.json"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f} differs");
    }
}

#[test]
fn cached_stages_are_reused_and_stale_ones_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let m = minimal();
    run_experiment(&m, &RunOptions::new(dir.path())).unwrap();
    let metrics = read(&dir.path().join("metrics.json"));

    // a corrupted output invalidates its stage stamp
    let model = dir.path().join("shadows/model_0.json");
    let good = read(&model);
    std::fs::write(&model, b"{}").unwrap();
    run_experiment(&m, &RunOptions::new(dir.path())).unwrap();
    assert_eq!(read(&model), good);
    assert_eq!(read(&dir.path().join("metrics.json")), metrics);

    // a different manifest digest recomputes everything
    let other = ExperimentManifest { master_seed: 8, ..m };
    run_experiment(&other, &RunOptions::new(dir.path())).unwrap();
    assert_ne!(read(&dir.path().join("metrics.json")), metrics);
}

#[test]
fn stages_run_incrementally() {
    let dir = tempfile::tempdir().unwrap();
    let m = minimal();
    let mut opts = RunOptions::new(dir.path());
    opts.until = Stage::Shadows;
    let out = run_experiment(&m, &opts).unwrap();
    assert!(out.ensemble.is_some() && out.observations.is_none());
    assert!(!dir.path().join("scores.jsonl").exists());
    opts.until = Stage::Evaluate;
    run_experiment(&m, &opts).unwrap();

    let fresh = tempfile::tempdir().unwrap();
    run_experiment(&m, &RunOptions::new(fresh.path())).unwrap();
    assert_eq!(
        read(&dir.path().join("metrics.json")),
        read(&fresh.path().join("metrics.json"))
    );
}

#[test]
fn missing_csv_aborts_at_data_stage() {
    let dir = tempfile::tempdir().unwrap();
    let m = ExperimentManifest {
        dataset: DatasetSpec::Csv {
            path: dir.path().join("absent.csv"),
            schema: CsvSchema::default(),
        },
        ..minimal()
    };
    match run_experiment(&m, &RunOptions::new(dir.path().join("out"))) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "data"),
        other => panic!("expected a data-stage error, got {other:?}"),
    }
}

#[test]
fn csv_dataset_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let first = tempfile::tempdir().unwrap();
    run_experiment(&minimal(), &RunOptions::new(first.path())).unwrap();
    let csv = dir.path().join("pool.csv");
    std::fs::copy(first.path().join("dataset.csv"), &csv).unwrap();
    let m = ExperimentManifest {
        dataset: DatasetSpec::Csv {
            path: csv,
            schema: CsvSchema::default(),
        },
        ..minimal()
    };
    let out = run_experiment(&m, &RunOptions::new(dir.path().join("out"))).unwrap();
    assert_eq!(out.dataset.len(), 60);
    assert_eq!(
        out.dataset.examples,
        run_experiment(&minimal(), &RunOptions::new(first.path()))
            .unwrap()
            .dataset
            .examples
    );
}

#[test]
fn curvature_attacks_need_two_in_and_two_out_observations() {
    let dir = tempfile::tempdir().unwrap();
    let m = ExperimentManifest {
        n_shadow_models: 2,
        methods: vec![Method::CurvNll],
        ..minimal()
    };
    match run_experiment(&m, &RunOptions::new(dir.path())) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "attack");
            assert!(matches!(*source, Error::InsufficientObservations { .. }));
        }
        other => panic!("expected an attack-stage error, got {other:?}"),
    }
    assert!(dir.path().join("scores.jsonl").is_file(), "partial outputs are kept");
}

#[test]
fn all_methods_with_augmentations() {
    let dir = tempfile::tempdir().unwrap();
    let m = ExperimentManifest {
        n_shadow_models: 16,
        methods: Method::ALL.to_vec(),
        transforms: vec![TransformSpec::Identity, TransformSpec::Mirror],
        ..minimal()
    };
    let out = run_experiment(&m, &RunOptions::new(dir.path())).unwrap();
    let metrics = out.metrics.unwrap();
    assert_eq!(metrics.methods.len(), Method::ALL.len());
    for r in &metrics.methods {
        assert!((0.0..=1.0).contains(&r.auroc));
        assert!((0.5..=1.0).contains(&r.bal_acc));
        assert!(dir.path().join(format!("roc_{}.csv", r.method)).is_file());
    }
    assert!(metrics.curvature_kl.is_some());
}

#[test]
fn mirror_symmetric_network_aggregates_to_single_view() {
    // palindromic first-layer rows make the network invariant to mirroring
    let mut p = init_mlp(&LayerSizes::new(vec![4, 6, 3]).unwrap(), 21);
    let first = &mut p.layers[0];
    for o in 0..first.n_out {
        let row = &mut first.w[o * 4..(o + 1) * 4];
        row[3] = row[0];
        row[2] = row[1];
    }
    let d = p.digest();
    let ex = Example {
        id: 5,
        x: vec![0.3, -1.2, 0.8, 2.0],
        y: 2,
    };
    let both = [TransformSpec::Identity, TransformSpec::Mirror];

    // exact trace, loss, logit and entropy are all mirror-invariant here
    let exact = CurvatureConfig {
        variant: Variant::ExactOracle,
        ..CurvatureConfig::default()
    };
    let single = observe(&p, &d, &ex, &[TransformSpec::Identity], &exact).unwrap();
    let pooled = observe(&p, &d, &ex, &both, &exact).unwrap();
    for k in 0..4 {
        assert!(
            (single[k] - pooled[k]).abs() <= 1e-9,
            "statistic {k}: {} vs {}",
            single[k],
            pooled[k]
        );
    }

    // zero-order probes are shared across views, so a palindromic input agrees too
    let pal = Example {
        id: 5,
        x: vec![0.3, -1.2, -1.2, 0.3],
        y: 2,
    };
    let zo = CurvatureConfig {
        probe_mode: ProbeMode::Coupled,
        ..CurvatureConfig::default()
    };
    let single = observe(&p, &d, &pal, &[TransformSpec::Identity], &zo).unwrap();
    let pooled = observe(&p, &d, &pal, &both, &zo).unwrap();
    for k in 0..4 {
        assert!((single[k] - pooled[k]).abs() <= 1e-9);
    }
}

fn small_sweep_manifest() -> ExperimentManifest {
    ExperimentManifest {
        dataset: DatasetSpec::Mixture {
            k: 2,
            d: 4,
            per_class: 100,
            separation: 1.0,
            noise: 1.0,
            seed: 2,
        },
        hyper: curvaudit::trainer::TrainHyper {
            epochs: 5,
            lr_decay_epochs: vec![],
            ..Default::default()
        },
        methods: vec![Method::Yeom, Method::CurvNll],
        n_shadow_models: 16,
        ..minimal()
    }
}

#[test]
fn sweep_emits_one_row_per_size_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep_dataset_size(
        &small_sweep_manifest(),
        &[50, 60, 70],
        Selection::Random,
        &RunOptions::new(dir.path()),
    )
    .unwrap();
    assert_eq!(rows.len(), 3 * 2);
    let csv = sweep_csv(&rows);
    assert!(csv.starts_with("size,seed,method,auroc,bal_acc\n"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn sweep_rejects_sizes_beyond_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let err = sweep_dataset_size(
        &small_sweep_manifest(),
        &[101],
        Selection::Random,
        &RunOptions::new(dir.path()),
    );
    assert!(err.is_err());
}

#[test]
fn lowest_curvature_on_the_whole_pool_equals_random() {
    let m = small_sweep_manifest();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let low = sweep_dataset_size(&m, &[100], Selection::LowestCurvature, &RunOptions::new(a.path())).unwrap();
    let rnd = sweep_dataset_size(&m, &[100], Selection::Random, &RunOptions::new(b.path())).unwrap();
    assert_eq!(low, rnd);
    assert!(a.path().join("reference_scores.jsonl").is_file());
}
