use maxlod::analysis::{run_study, MSchedule, MeshLevel, StudyConfig, StudyKind};
use maxlod::fem::CoefficientKind;

fn config(kind: StudyKind) -> StudyConfig {
    let mut cfg = StudyConfig::new(
        kind,
        vec![MeshLevel { n_coarse: 2, factor: 2 }],
        vec![1.0],
        CoefficientKind::Checkerboard { contrast: 10.0 },
    );
    cfg.run_id = "test".into();
    cfg.schedule = MSchedule::Fixed { m: 1 };
    cfg.m_max = 2;
    cfg
}

#[test]
fn study_writes_csv_and_manifest() {
    let result = run_study(&config(StudyKind::Convergence)).unwrap();
    assert_eq!(result.rows.len(), 1);
    assert!(result.rows[0].is_ok(), "{}", result.rows[0].status);
    let dir = tempfile::tempdir().unwrap();
    result.write(dir.path(), serde_json::json!({ "note": "x" })).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,H,h,m,omega,coeff_kind,seed,err_curl_omega,err_coarse,decay_m0,decay_m1,decay_m2,\
         nonconf_norm,infsup_W,infsup_LOD,omegaH_flag,wall_ms,status"
    );
    assert!(lines.next().unwrap().starts_with("test,5e-1,2.5e-1,1,1e0,checkerboard,0,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(manifest["environment"]["note"], "x");
    assert_eq!(manifest["failed_rows"], 0);
}

#[test]
fn reruns_are_bit_identical() {
    let a = run_study(&config(StudyKind::Decay)).unwrap().to_csv().unwrap();
    let b = run_study(&config(StudyKind::Decay)).unwrap().to_csv().unwrap();
    assert_eq!(a, b);
}

#[test]
fn over_cap_rows_fail_without_stopping_the_study() {
    let mut cfg = config(StudyKind::Decay);
    cfg.ideal_cap = 10;
    cfg.levels.push(MeshLevel { n_coarse: 2, factor: 2 });
    let result = run_study(&cfg).unwrap();
    assert_eq!(result.rows.len(), 2);
    assert!(result.rows.iter().all(|r| r.status.contains("cap")), "{:?}", result.rows[0].status);
}
