use std::fmt::Write as _;
use std::time::Instant;

use gppf::bench::{
    emit_plot_data, parse_models, run_case, run_generalization, write_case, BenchError, CaseConfig,
    GeneralizationConfig, ModelKind, PlotKind, PlotOptions,
};
use gppf::feeder::{generate_synthetic_feeder, ieee123_style, load_feeder, PhaseMix, SyntheticSpec};
use gppf::gp::{GpConfig, GpModel};
use gppf::scenario::{generate_dataset, LoadshapeAssignment, LoadshapeClass, ScenarioConfig};
use gppf::Feeder64;

fn small_feeder() -> Feeder64 {
    generate_synthetic_feeder(&SyntheticSpec::new(25, PhaseMix::Mixed, 10, 7)).unwrap()
}

/// Single-phase chain with identical segments and identical loads.
fn uniform_chain(buses: usize) -> Feeder64 {
    let mut doc = String::from("[source]\nbus = 0\nbase_kv = 4.16\nbase_kva = 1000\n[bus]\n");
    for b in 0..buses {
        writeln!(doc, "{b} a").unwrap();
    }
    doc.push_str("[line]\n");
    for b in 1..buses {
        writeln!(doc, "{} {b} a 0.2+j0.4", b - 1).unwrap();
    }
    doc.push_str("[load]\n");
    for b in 1..buses {
        writeln!(doc, "{b} a 20 10 residential").unwrap();
    }
    load_feeder(&doc).unwrap()
}

fn csv_rows(path: &std::path::Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn case_one_gp_report_is_written() {
    let f = small_feeder();
    let mut cfg = CaseConfig::standard(1, 3).unwrap();
    cfg.models = vec![ModelKind::Gp];
    let out = run_case(&f, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_case(dir.path(), &f, &out).unwrap();
    let (header, rows) = csv_rows(&dir.path().join("reports.csv"));
    assert_eq!(rows.len(), 1);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows[0][col("model")], "GP");
    assert_eq!(rows[0][col("train_size")], "24");
    assert_eq!(rows[0][col("test_size")], "144");
    let mae: f64 = rows[0][col("mae")].parse().unwrap();
    assert!(mae < 1e-3, "{mae}");
    for f in ["manifest.json", "timings.csv", "feeder.txt", "predictions/truth.csv", "predictions/GP.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn case_one_ordering_and_fairness() {
    let f = small_feeder();
    let out = run_case(&f, &CaseConfig::standard(1, 7).unwrap()).unwrap();
    let mae = |m| out.run(m).unwrap().errors.mae;
    assert!(mae(ModelKind::Gp) < mae(ModelKind::Ldf));
    assert!(mae(ModelKind::Ldf) < mae(ModelKind::Dnn));
    let reports = out.reports();
    assert_eq!(reports.len(), 3);
    for r in &reports {
        assert_eq!(r.train_hash, reports[0].train_hash);
        assert_eq!(r.test_hash, reports[0].test_hash);
        assert!(r.train_seconds >= 0.0 && r.predict_seconds >= 0.0);
    }
    let ldf = reports.iter().find(|r| r.model == ModelKind::Ldf).unwrap();
    assert!(ldf.notes.iter().any(|n| n.contains("cumulative")));
}

#[test]
fn unknown_ids_are_rejected_up_front() {
    assert!(matches!(parse_models("GP,SVR"), Err(BenchError::UnknownModel(m)) if m == "SVR"));
    assert!(matches!("bar-chart".parse::<PlotKind>(), Err(BenchError::UnknownPlot(_))));
    let mut cfg = CaseConfig::<f64>::custom(24, 0);
    cfg.models.clear();
    assert!(matches!(run_case(&small_feeder(), &cfg), Err(BenchError::Config(_))));
}

#[test]
fn plot_tables_have_the_expected_shape() {
    let f = small_feeder();
    let mut cfg = CaseConfig::standard(1, 5).unwrap();
    cfg.models = vec![ModelKind::Ldf, ModelKind::Gp];
    let out = run_case(&f, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_case(dir.path(), &f, &out).unwrap();
    let d = f.dim();

    let snap = emit_plot_data(dir.path(), PlotKind::VoltageProfileSnapshot, &PlotOptions::default()).unwrap();
    let (header, rows) = csv_rows(&snap);
    assert_eq!(header, ["hour", "bus", "phase", "depth", "order", "oracle", "LDF", "GP"]);
    assert_eq!(rows.len(), d);
    let orders: Vec<usize> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert_eq!(orders, (0..d).collect::<Vec<_>>());

    let at_30 = PlotOptions { hour: Some(30), ..Default::default() };
    let (_, rows) = csv_rows(&emit_plot_data(dir.path(), PlotKind::VoltageProfileSnapshot, &at_30).unwrap());
    assert!(rows.iter().all(|r| r[0] == "30"));
    let bad_hour = PlotOptions { hour: Some(3), ..Default::default() };
    assert!(emit_plot_data(dir.path(), PlotKind::VoltageProfileSnapshot, &bad_hour).is_err());

    let (header, rows) = csv_rows(&emit_plot_data(dir.path(), PlotKind::PerBusMae, &PlotOptions::default()).unwrap());
    assert_eq!(header, ["bus", "phase", "depth", "order", "LDF_mae", "GP_mae"]);
    assert_eq!(rows.len(), d);

    let (header, rows) =
        csv_rows(&emit_plot_data(dir.path(), PlotKind::TimeSeries3Phase, &PlotOptions::default()).unwrap());
    assert_eq!(header, ["hour", "bus", "phase", "oracle", "LDF", "GP"]);
    assert_eq!(rows.len(), 144 * 3);
}

#[test]
fn missing_artifacts_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let e = emit_plot_data(dir.path(), PlotKind::PerBusMae, &PlotOptions::default()).unwrap_err();
    assert!(matches!(e, BenchError::Artifact { .. }), "{e}");
}

#[test]
fn per_bus_error_peaks_at_the_far_end_of_a_uniform_chain() {
    let f = uniform_chain(12);
    let mut cfg = CaseConfig::standard(1, 2).unwrap();
    cfg.models = vec![ModelKind::Ldf, ModelKind::Gp];
    cfg.scenario.loadshapes = LoadshapeAssignment::All(LoadshapeClass::Residential);
    let out = run_case(&f, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_case(dir.path(), &f, &out).unwrap();
    let (_, rows) = csv_rows(&emit_plot_data(dir.path(), PlotKind::PerBusMae, &PlotOptions::default()).unwrap());
    assert_eq!(rows.len(), 11);
    let deepest = rows.iter().map(|r| r[2].parse::<usize>().unwrap()).max().unwrap();
    for col in [4, 5] {
        let worst = rows
            .iter()
            .max_by(|a, b| a[col].parse::<f64>().unwrap().total_cmp(&b[col].parse().unwrap()))
            .unwrap();
        assert_eq!(worst[2].parse::<usize>().unwrap(), deepest, "column {col}");
    }
}

#[test]
fn identical_rows_generalize_exactly() {
    let f: Feeder64 = generate_synthetic_feeder(&SyntheticSpec::new(20, PhaseMix::Mixed, 0, 4)).unwrap();
    let mut cfg = GeneralizationConfig::new(1);
    cfg.scenario.variability = 0.0;
    cfg.scenario.loadshapes = LoadshapeAssignment::All(LoadshapeClass::Industrial);
    let out = run_generalization(&f, &cfg).unwrap();
    assert_eq!((out.summary.train_hours, out.summary.test_hours), (24, 144));
    assert!(out.summary.avg_mae < 1e-9, "{}", out.summary.avg_mae);
}

#[test]
fn day_of_data_on_123_bus_feeder_fits_in_seconds() {
    let f: Feeder64 = ieee123_style();
    let ds = generate_dataset(&f, &ScenarioConfig::new(25, 3)).unwrap();
    let train = ds.slice(0..24).unwrap();
    let t0 = Instant::now();
    let gp = GpModel::fit(train.inputs.view(), train.targets.view(), &GpConfig::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 10.0, "{secs}s");
    let p = gp.predict_mean(ds.inputs.slice(ndarray::s![24..25, ..])).unwrap();
    let mae = (&p - &ds.targets.slice(ndarray::s![24..25, ..])).mapv(f64::abs).mean().unwrap();
    assert!(mae < 1e-3, "{mae}");
}

#[test]
fn reruns_write_identical_reports() {
    let f = small_feeder();
    let mut cfg = CaseConfig::custom(24, 9);
    cfg.test_hours = 24;
    cfg.mlp.epochs = 10;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_case(d.path(), &f, &run_case(&f, &cfg).unwrap()).unwrap();
    }
    for name in ["reports.csv", "manifest.json", "predictions/GP.csv", "predictions/DNN.csv"] {
        let read = |i: usize| std::fs::read(dirs[i].path().join(name)).unwrap();
        assert_eq!(read(0), read(1), "{name}");
    }
}
