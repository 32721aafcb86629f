use std::fs;
use std::path::Path;
use std::process::Command;

use dualmesh::solver::{solve_instance, RateAssignment, RateInstance};
use dualmesh_cli::{cmd_oracle_check_with, OracleLimits, Options, EXIT_FAILURE};

fn dualmesh(out: &Path, args: &[&str]) -> (i32, String, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_dualmesh"))
        .arg("--out")
        .arg(out)
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stdout).into_owned(), String::from_utf8_lossy(&o.stderr).into_owned())
}

const NO_FLOWS: &str = "name = \"quiet\"\n[hardware_ap]\nid = 0\nband = \"5.8\"\nchannel = 36\n[[nodes]]\nid = 1\n[attenuation]\ndefault_db = 60\n[sim]\nduration_s = 5\n";

#[test]
fn missing_scenario_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = dualmesh(dir.path(), &["run", "no/such/file.toml"]);
    assert_eq!(code, 2);
    assert!(err.contains("no scenario"), "{err}");
}

#[test]
fn invalid_scenario_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[hardware_ap]\nid = 0\nband = \"5.8\"\nchannel = 36\nbogus = 1\n").unwrap();
    let (code, _, err) = dualmesh(dir.path(), &["validate", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn zero_flow_run_writes_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quiet.toml");
    fs::write(&path, NO_FLOWS).unwrap();
    let out = dir.path().join("out");
    let (code, _, err) = dualmesh(&out, &["run", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_to_string(out.join("flows.csv")).unwrap(), "time_s,flow_id,rate_bps\n");
    let summary = fs::read_to_string(out.join("summary.toml")).unwrap();
    assert!(summary.contains("average_bps = 0.0"), "{summary}");
}

#[test]
fn compare_needs_a_dual_band_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("single.toml");
    fs::write(&path, NO_FLOWS.replace("name = \"quiet\"", "name = \"quiet\"\nmode = \"single\"").replace("\"5.8\"\nchannel = 36", "\"2.4\"\nchannel = 1")).unwrap();
    let (code, _, err) = dualmesh(dir.path(), &["compare", path.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn compare_writes_one_row_per_case_and_a_plot_script() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, err) = dualmesh(dir.path(), &["compare", "case_i", "case_ii", "case_iii"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(stdout.lines().count(), 3);
    let csv = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "case,dual_avg_bps,single_avg_bps,ratio");
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        let cols: Vec<f64> = line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[2], cols[0] / cols[1]);
    }
    assert!(dir.path().join("plot_comparison.py").is_file());
    assert!(dir.path().join("case_ii/single/flows.csv").is_file());
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = dualmesh(dir.path(), &["--quiet", "sweep", "interference_demo", "interferers[0].utilization", "0,0.5"]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("interferers[0].utilization,0,"));
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = dualmesh(dir.path(), &["sweep", "fig1_dual", "protocol.nope", "1"]);
    assert_eq!(code, 2);
}

#[test]
fn list_names_bundled_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = dualmesh(dir.path(), &["list"]);
    assert_eq!(code, 0);
    assert!(stdout.lines().any(|l| l == "case_iii"));
}

fn skewed(inst: &RateInstance) -> RateAssignment {
    let mut a = solve_instance(inst);
    if let Some(r) = a.rates.values_mut().next() {
        *r *= 1.01;
    }
    a
}

#[test]
fn oracle_check_catches_a_corrupted_solver() {
    let dir = tempfile::tempdir().unwrap();
    let opts = Options { out: dir.path().to_path_buf(), seed: Some(0), quiet: true, ..Options::default() };
    let code = cmd_oracle_check_with(OracleLimits::default(), 5, &opts, skewed);
    assert_eq!(code, EXIT_FAILURE);
    let repros: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(repros.iter().any(|n| n.starts_with("oracle_failure_seed")), "{repros:?}");
    let text = fs::read_to_string(dir.path().join(&repros[0])).unwrap();
    dualmesh::scenario::parse_scenario(&text).unwrap();
}

#[test]
fn oracle_check_passes_on_a_few_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, err) = dualmesh(dir.path(), &["oracle-check", "--seeds", "10"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("10 seeds"));
}
