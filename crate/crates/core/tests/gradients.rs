use mtsn::gradcheck::{run_gradcheck, GradcheckConfig};

#[test]
fn every_case_passes_finite_differences() {
    let report = run_gradcheck(&GradcheckConfig::default()).unwrap();
    for case in &report.cases {
        assert!(case.passed, "{} max rel error {:e}", case.name, case.max_rel_error);
        assert!(case.coordinates > 0, "{} checked nothing", case.name);
    }
    assert_eq!(report.summary(), format!("{} ops checked, 0 failures", report.cases.len()));
}

#[test]
fn injected_fault_is_named() {
    let cfg = GradcheckConfig {
        inject_fault: Some(0.05),
        points: 2,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&cfg).unwrap();
    let failed: Vec<_> = report.failures().iter().map(|c| c.name.as_str()).collect();
    assert_eq!(failed, ["injected_fault"]);
}
