use std::io::Cursor;

use falsify_core::audit::{calibrate_stage1, run_audit, DataSource, NullCalibration, NullSource};
use falsify_core::environments::{generate, EnvironmentSpec, Family, ReturnPath};
use falsify_core::io::{ingest_reader, Strictness};
use falsify_core::workflows::{run_selection, WorkflowFamily, WorkflowSpec};
use falsify_core::Error;

fn sources(t: usize) -> Vec<NullSource> {
    Family::CANONICAL
        .iter()
        .enumerate()
        .map(|(i, f)| NullSource::Fixed(EnvironmentSpec::default_for(*f, t, i as u64)))
        .collect()
}

#[test]
fn generated_paths_are_reproducible_and_centred() {
    for f in &Family::CANONICAL {
        let spec = EnvironmentSpec::default_for(*f, 20_000, 7);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.returns, b.returns, "{}", f.name());
        let n = a.returns.len() as f64;
        let mean = a.returns.iter().sum::<f64>() / n;
        let sd = (a.returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 4.0 * sd / n.sqrt(), "{} mean {mean}", f.name());
        let nominal = spec.params.nominal_sigma_daily();
        assert!((sd / nominal - 1.0).abs() < 0.15, "{} sd {sd} vs {nominal}", f.name());
    }
}

#[test]
fn audit_end_to_end_flags_lookahead_and_passes_baseline() {
    let t = 200;
    let reference = WorkflowSpec::default_for(WorkflowFamily::RandomBaseline);
    let cal = calibrate_stage1(&reference, &sources(t), 500, 0.05, 3).unwrap();

    let dir = tempfile::tempdir().unwrap();
    cal.save(dir.path()).unwrap();
    let cal = NullCalibration::load(dir.path()).unwrap();

    let target = DataSource::Synthetic(EnvironmentSpec::default_for(Family::WhiteNoise, t, 99));
    let honest = run_audit(&reference, &reference, &cal, Some(&target), 5).unwrap();
    assert!(!honest.falsified);
    assert_eq!(honest.exit_code(), 0);
    assert!(honest.stage2.is_some());

    let cheat = WorkflowSpec::default_for(WorkflowFamily::Lookahead);
    let report = run_audit(&cheat, &reference, &cal, Some(&target), 5).unwrap();
    assert!(report.falsified);
    assert_eq!(report.exit_code(), 2);
    assert!(report.stage2.is_none());
    let json = report.to_json().unwrap();
    assert!(json.contains(&reference.content_hash()));
}

#[test]
fn calibration_refuses_a_different_reference() {
    let reference = WorkflowSpec::default_for(WorkflowFamily::RandomBaseline);
    let cal = calibrate_stage1(&reference, &sources(150)[..1], 500, 0.05, 1).unwrap();
    let other = WorkflowSpec::default_for(WorkflowFamily::DataMiner);
    let err = run_audit(&other, &other, &cal, None, 1).unwrap_err();
    assert!(matches!(err, Error::CalibrationMismatch(_)), "{err}");
}

#[test]
fn lenient_ingest_sorts_to_the_presorted_result() {
    let sorted = "date,ret\n2020-01-02,0.01\n2020-01-03,-0.02\n2020-01-06,0.005\n2020-01-07,0.0\n";
    let shuffled = "date,ret\n2020-01-06,0.005\n2020-01-02,0.01\n2020-01-07,0.0\n2020-01-03,-0.02\n";
    let (a, _) = ingest_reader(Cursor::new(sorted), "x", Strictness::Strict).unwrap();
    let (b, rep) = ingest_reader(Cursor::new(shuffled), "x", Strictness::Lenient).unwrap();
    assert_eq!(a.returns, b.returns);
    assert_eq!(a.dates, b.dates);
    assert!(!rep.warnings.is_empty());
    assert!(ingest_reader(Cursor::new(shuffled), "x", Strictness::Strict).is_err());
}

#[test]
fn ingest_rejects_missing_values() {
    for body in [
        "date,ret\n2020-01-02,NaN\n",
        "date,ret\n2020-01-02,-99.99\n",
        "date,ret\n2020-01-02,abc\n",
        "date,ret\n",
    ] {
        assert!(ingest_reader(Cursor::new(body), "x", Strictness::Lenient).is_err(), "{body:?}");
    }
}

#[test]
fn selection_is_stable_under_path_roundtrip() {
    let spec = EnvironmentSpec::default_for(Family::Garch11, 400, 4);
    let path = generate(&spec).unwrap();
    let mut buf = Vec::new();
    path.write_binary(&mut buf).unwrap();
    let back = ReturnPath::read_binary("g", Cursor::new(buf)).unwrap();
    assert_eq!(back.returns, path.returns);
    let path = ReturnPath::from_returns("g", path.returns);
    let wf = WorkflowSpec::default_for(WorkflowFamily::DataMiner);
    let a = run_selection(&wf, &path).unwrap();
    let b = run_selection(&wf, &back).unwrap();
    assert_eq!(a.winner_index, b.winner_index);
    assert_eq!(a.z_wf_star, b.z_wf_star);
}
