use std::path::PathBuf;

use rtcouple::component::Registry;
use rtcouple::run::{prepare, run_scenario, RunError, RunStatus};
use rtcouple::scenario::{
    apply_override, load_document, parse_document, validate_document, validate_file, Diagnostic, ScenarioError,
};
use serde_json::{json, Value};

fn reference_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/reference.json")
}

fn reference() -> Value {
    parse_document(&std::fs::read(reference_path()).unwrap()).unwrap()
}

fn diagnostics(doc: &Value) -> Vec<Diagnostic> {
    let registry = Registry::with_reference_components();
    match validate_document(doc, &registry) {
        Ok(s) => prepare(&s, &registry).err().unwrap_or_default(),
        Err(d) => d,
    }
}

fn small() -> Value {
    json!({
        "mesh": {"nx": 4, "ny": 1, "dx": 1.0, "dy": 1.0},
        "transport": {"species": ["A"], "porosity": 0.5},
        "chemistry": {
            "primaries": ["A"],
            "complexes": [{"name": "A2", "stoichiometry": {"A": 2}, "logK": 2}]
        },
        "coupling": {"mode": "SNIA", "dt": 1.0, "tEnd": 2.0}
    })
}

#[test]
fn reference_scenario_is_clean() {
    let registry = Registry::with_reference_components();
    assert_eq!(validate_file(&reference_path(), &[], &registry).unwrap(), vec![]);
}

#[test]
fn negative_porosity_single_diagnostic() {
    let mut doc = reference();
    doc["transport"]["porosity"] = json!(-0.1);
    let d = diagnostics(&doc);
    assert_eq!(d.len(), 1, "{d:?}");
    assert_eq!(d[0].path, "transport.porosity");
}

#[test]
fn unknown_primary_is_named() {
    let mut doc = small();
    doc["chemistry"]["complexes"][0]["stoichiometry"] = json!({"A": 1, "X": 1});
    let d = diagnostics(&doc);
    assert_eq!(d.len(), 1, "{d:?}");
    assert_eq!(d[0].path, "chemistry.complexes[0].stoichiometry");
    assert!(d[0].message.contains("X") && d[0].message.contains("known primaries: A"), "{}", d[0].message);
}

#[test]
fn type_errors_carry_their_path() {
    let mut doc = reference();
    doc["chemistry"]["minerals"][0]["logKsp"] = json!("high");
    let d = diagnostics(&doc);
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].path, "chemistry.minerals[0].logKsp");
}

#[test]
fn unknown_keys_rejected() {
    let mut doc = small();
    doc["coupling"]["siaTolerance"] = json!(1e-6);
    let d = diagnostics(&doc);
    assert_eq!(d.len(), 1);
    assert!(d[0].message.contains("siaTolerance"), "{}", d[0].message);
}

#[test]
fn parse_error_reports_position() {
    let err = parse_document(b"{\n  \"mesh\": {\n    \"nx\": 3,,\n}").unwrap_err();
    match err {
        ScenarioError::Parse { line, column, .. } => assert_eq!((line, column), (3, 13)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn reactive_species_must_not_be_retarded() {
    let mut doc = small();
    doc["transport"]["retardation"] = json!({"A": 2.0});
    let d = diagnostics(&doc);
    assert_eq!(d.len(), 1, "{d:?}");
    assert_eq!(d[0].path, "transport.retardation.A");
}

#[test]
fn primaries_must_be_transported() {
    let mut doc = small();
    doc["chemistry"]["primaries"] = json!(["A", "B"]);
    let d = diagnostics(&doc);
    assert!(d.iter().any(|d| d.path == "chemistry.primaries[1]"), "{d:?}");
}

#[test]
fn initial_regions_must_cover_mesh() {
    let mut doc = small();
    doc["transport"]["initial"] = json!([{"region": {"xMax": 1.0}, "concentrations": {"A": 1.0}}]);
    let d = diagnostics(&doc);
    assert_eq!(d.len(), 1, "{d:?}");
    assert_eq!(d[0].path, "transport.initial");
    doc["transport"]["initial"].as_array_mut().unwrap().push(json!({"concentrations": {"A": 0.0}}));
    assert_eq!(diagnostics(&doc), vec![]);
}

#[test]
fn empty_region_rejected() {
    let mut doc = small();
    doc["transport"]["initial"] = json!([{"region": {"xMin": 10.0}, "concentrations": {"A": 1.0}}, {"concentrations": {}}]);
    let d = diagnostics(&doc);
    assert_eq!(d[0].path, "transport.initial[0].region");
}

#[test]
fn unregistered_implementation() {
    let mut doc = small();
    doc["transport"]["implementation"] = json!("spectral");
    let d = diagnostics(&doc);
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].path, "transport.implementation");
    assert!(d[0].message.contains("fv-reference"));
}

#[test]
fn chemistry_porosity_and_totals_rejected() {
    let mut doc = small();
    doc["chemistry"]["porosity"] = json!(0.5);
    doc["chemistry"]["initial"] = json!([{"totals": {"A": 1.0}}]);
    let paths: Vec<String> = diagnostics(&doc).into_iter().map(|d| d.path).collect();
    assert_eq!(paths, ["chemistry.porosity", "chemistry.initial[0].totals"]);
}

#[test]
fn coupling_and_package_checks() {
    let mut doc = small();
    doc["coupling"]["dt"] = json!(0.0);
    doc["wastePackages"] = json!([{"inventory": {"B": 1.0}, "rate": 1.0, "hostCell": 9}]);
    let paths: Vec<String> = diagnostics(&doc).into_iter().map(|d| d.path).collect();
    assert!(paths.contains(&"coupling.dt".to_string()), "{paths:?}");
    assert!(paths.contains(&"wastePackages[0].hostCell".to_string()), "{paths:?}");
    assert!(paths.contains(&"wastePackages[0].inventory.B".to_string()), "{paths:?}");
}

#[test]
fn overrides_equal_edits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, serde_json::to_vec(&small()).unwrap()).unwrap();
    let (_, overridden) =
        load_document(&path, &["coupling.mode=SIA".into(), "chemistry.complexes[0].logK=3".into()]).unwrap();
    let mut edited = small();
    apply_override(&mut edited, "coupling.mode", json!("SIA")).unwrap();
    edited["chemistry"]["complexes"][0]["logK"] = json!(3);
    assert_eq!(overridden, edited);
    assert!(matches!(
        load_document(&path, &["chemistry.complexes[4].logK=1".into()]),
        Err(ScenarioError::Override { .. })
    ));
}

#[test]
fn invalid_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let registry = Registry::with_reference_components();
    let err = run_scenario(&reference_path(), Some(&out), &["transport.porosity=-1".into()], &registry).unwrap_err();
    assert!(matches!(err, RunError::Invalid(_)));
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());
}

#[test]
fn small_run_produces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, serde_json::to_vec(&small()).unwrap()).unwrap();
    let out = dir.path().join("out");
    let registry = Registry::with_reference_components();
    let manifest = run_scenario(&path, Some(&out), &[], &registry).unwrap();
    assert_eq!(manifest.status, RunStatus::Completed);
    assert_eq!(manifest.steps.len(), 2);
    let csv = std::fs::read_to_string(out.join("timeseries.csv")).unwrap();
    assert!(csv.starts_with("time,cell,component,value\n"));
    // 3 output times × 4 cells × (1 species + porosity)
    assert_eq!(csv.lines().count(), 1 + 3 * 4 * 2);
    for f in ["snapshots/step_000000.mff", "snapshots/step_000002.mff", "run.log", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!out.join("manifest.json.tmp").exists());
    let written: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    use sha2::Digest;
    let hash = hex::encode(sha2::Sha256::digest(std::fs::read(&path).unwrap()));
    assert_eq!(written["scenarioSha256"], json!(hash));
}
