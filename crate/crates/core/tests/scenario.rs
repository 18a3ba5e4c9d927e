use gppf::feeder::{generate_synthetic_feeder, ieee123_style, PhaseMix, SyntheticSpec};
use gppf::powerflow::{mismatch, NetLoadVector, PfSolution};
use gppf::scenario::{
    generate_dataset, load_dataset, save_dataset, split_cases, synthetic_irradiance, LoadshapeAssignment,
    LoadshapeClass, MultiplierMode, ScenarioConfig, ScenarioError, ScenarioModel,
};
use gppf::Feeder64;

fn feeder_with_ders() -> Feeder64 {
    generate_synthetic_feeder(&SyntheticSpec::new(25, PhaseMix::Mixed, 10, 7)).unwrap()
}

#[test]
fn same_seed_gives_identical_datasets() {
    let f = feeder_with_ders();
    let cfg = ScenarioConfig::new(24, 3);
    let a = generate_dataset(&f, &cfg).unwrap();
    let b = generate_dataset(&f, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.content_hash(), b.content_hash());
    let c = generate_dataset(&f, &ScenarioConfig::new(24, 4)).unwrap();
    assert_ne!(a.inputs, c.inputs);
}

#[test]
fn degenerate_generator_repeats_one_row() {
    let f: Feeder64 = generate_synthetic_feeder(&SyntheticSpec::new(15, PhaseMix::Mixed, 0, 2)).unwrap();
    let cfg = ScenarioConfig {
        variability: 0.0,
        loadshapes: LoadshapeAssignment::All(LoadshapeClass::Industrial),
        ..ScenarioConfig::new(30, 1)
    };
    let ds = generate_dataset(&f, &cfg).unwrap();
    for r in 1..ds.len() {
        assert_eq!(ds.inputs.row(r), ds.inputs.row(0));
        assert_eq!(ds.targets.row(r), ds.targets.row(0));
    }
}

#[test]
fn ninety_day_dataset_on_123_bus_feeder_has_paper_shapes() {
    let f: Feeder64 = ieee123_style();
    let ds = generate_dataset(&f, &ScenarioConfig::new(2160, 11)).unwrap();
    assert_eq!(ds.inputs.dim(), (2160, 556));
    assert_eq!(ds.targets.dim(), (2160, 278));
    assert_eq!(ds.hours, (0..2160).collect::<Vec<_>>());
    assert!(ds.targets.iter().all(|v| v.is_finite() && *v > 0.8 && *v < 1.1));
}

#[test]
fn every_row_satisfies_the_power_flow_equations() {
    let f = feeder_with_ders();
    let ds = generate_dataset(&f, &ScenarioConfig::new(48, 9)).unwrap();
    for r in 0..ds.len() {
        let load = NetLoadVector::new(ds.inputs.row(r).to_vec(), f.dim()).unwrap();
        let sol = PfSolution {
            v_mag: ds.targets.row(r).to_vec(),
            v_ang: ds.angles.row(r).to_vec(),
            iterations: 0,
        };
        let worst = mismatch(&f, &load, &sol).unwrap().into_iter().fold(0.0, f64::max);
        assert!(worst < 1e-8, "row {r}: {worst}");
    }
}

#[test]
fn inputs_follow_loadshapes_multipliers_and_sun() {
    let f = feeder_with_ders();
    let cfg = ScenarioConfig {
        loadshapes: LoadshapeAssignment::All(LoadshapeClass::Commercial),
        ..ScenarioConfig::new(24, 5)
    };
    let ds = generate_dataset(&f, &cfg).unwrap();
    let sun = synthetic_irradiance(0..24, 5, cfg.cloud_noise);
    let shape = gppf::scenario::Loadshape::archetype(LoadshapeClass::Commercial);
    let s_base = f.s_base_phase();
    let d = f.dim();
    for (r, &h) in ds.hours.iter().enumerate() {
        let mut expected = vec![0.0; 2 * d];
        for l in f.loads() {
            let i = f.flat().position(f.bus_index(&l.bus).unwrap(), l.phase).unwrap();
            let factor = shape.at(h) * ds.multipliers[r];
            expected[i] += l.base_kw * factor / s_base;
            expected[d + i] += l.base_kvar * factor / s_base;
        }
        for der in f.ders() {
            let b = f.bus_index(&der.bus).unwrap();
            for ph in der.phases.iter() {
                let i = f.flat().position(b, ph).unwrap();
                expected[i] -= der.rated_kw / der.phases.len() as f64 * sun.irradiance[r] / s_base;
            }
        }
        for (k, e) in expected.iter().enumerate() {
            assert!((ds.inputs[[r, k]] - e).abs() < 1e-12, "hour {h} column {k}");
        }
    }
}

#[test]
fn der_output_lowers_net_load_at_noon_only() {
    let f = feeder_with_ders();
    let model = ScenarioModel::new(&f, &LoadshapeAssignment::FromFeeder, 0);
    let der_total: f64 = f.ders().iter().map(|d| d.rated_kw).sum::<f64>() / f.s_base_phase();
    let sum_p = |v: &NetLoadVector<f64>| v.p().iter().sum::<f64>();
    let sum_q = |v: &NetLoadVector<f64>| v.q().iter().sum::<f64>();
    let dark = model.net_load(12, &[1.0], 1.0, 0.0);
    let lit = model.net_load(12, &[1.0], 1.0, 1.0);
    assert!((sum_p(&dark) - sum_p(&lit) - der_total).abs() < 1e-12);
    assert!((sum_q(&dark) - sum_q(&lit)).abs() < 1e-15);

    let sun = synthetic_irradiance(0..24, 0, 0.3);
    assert_eq!(sun.irradiance[0], 0.0);
    assert!(sun.irradiance[12] > 0.5);
}

#[test]
fn per_load_multipliers_vary_across_loads() {
    let f = feeder_with_ders();
    let global = generate_dataset(&f, &ScenarioConfig::new(6, 2)).unwrap();
    let per_load = generate_dataset(
        &f,
        &ScenarioConfig {
            multiplier_mode: MultiplierMode::PerLoad,
            ..ScenarioConfig::new(6, 2)
        },
    )
    .unwrap();
    assert_eq!(per_load.inputs.dim(), global.inputs.dim());
    assert_ne!(per_load.inputs, global.inputs);
}

#[test]
fn chronological_split() {
    let f = feeder_with_ders();
    let ds = generate_dataset(&f, &ScenarioConfig::new(168, 1)).unwrap();
    let (train, test) = split_cases(&ds, 24, 144).unwrap();
    assert_eq!(train.hours, (0..24).collect::<Vec<_>>());
    assert_eq!(test.hours, (24..168).collect::<Vec<_>>());
    assert_eq!(train.inputs.row(23), ds.inputs.row(23));
    assert_eq!(test.targets.row(0), ds.targets.row(24));
    assert!(matches!(
        split_cases(&ds, 168, 1),
        Err(ScenarioError::InsufficientData { .. })
    ));
    assert!(split_cases(&ds, 0, 10).is_err());
}

#[test]
fn datasets_round_trip_through_disk() {
    let f = feeder_with_ders();
    let ds = generate_dataset(&f, &ScenarioConfig::new(12, 8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset::<f64>(dir.path()).unwrap();
    assert_eq!(back, ds);

    let path = dir.path().join("targets.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = lines[3].replacen(',', ",x", 2);
    std::fs::write(&path, lines.join("\n")).unwrap();
    assert!(matches!(load_dataset::<f64>(dir.path()), Err(ScenarioError::Format { .. })));
}
