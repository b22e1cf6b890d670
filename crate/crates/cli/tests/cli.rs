use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
K = 2
M = 4
N = 6
T = 6
q_init = [200.0, 250.0]
q_final = [260.0, 250.0]
users = [[230.0, 300.0], [260.0, 180.0]]
"#;

fn irs_uav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irs-uav")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

/// Rows after the comment lines, header first.
fn csv_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn run(dir: &Path, cfg: &str, variant: &str, seed: &str) -> Output {
    irs_uav(&["run", "--config", cfg, "--seed", seed, "--variant", variant, "--out", dir.to_str().unwrap()])
}

#[test]
fn run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let o = run(&out, &cfg, "proposed", "3");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let traj = csv_rows(&out.join("trajectory.csv"));
    assert_eq!(traj[0], "n,x,y");
    assert_eq!(traj.len(), 1 + 6);

    let hist = csv_rows(&out.join("history.csv"));
    assert!(hist[0].starts_with("iter,objective"), "{}", hist[0]);
    assert!(hist.len() >= 2);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["variant"], "proposed");
    assert!(summary["config"].is_object());
}

#[test]
fn variant_tag_is_recorded_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("noirs");
    assert!(run(&out, &cfg, "no-irs", "1").status.success());
    let text = std::fs::read_to_string(out.join("run_summary.json")).unwrap();
    assert!(text.contains("\"variant\": \"no-irs\""), "{text}");
}

#[test]
fn same_seed_gives_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&a, &cfg, "proposed", "7").status.success());
    assert!(run(&b, &cfg, "proposed", "7").status.success());
    for f in ["history.csv", "trajectory.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unreachable_energy_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    // above the harvester saturation of 24 mW over a 1 s slot
    let cfg = write_config(tmp.path(), "chi_th = 0.05\n");
    let out = tmp.path().join("bad");
    let o = run(&out, &cfg, "proposed", "1");
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("run_summary.json")).unwrap();
    assert!(text.contains("\"status\": \"infeasible\""));
}

#[test]
fn bad_input_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    assert!(!run(tmp.path(), &cfg, "best-effort", "1").status.success());
    let cfg = write_config(tmp.path(), "warp_factor = 9\n");
    let o = run(tmp.path(), &cfg, "proposed", "1");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warp_factor"));
}

#[test]
fn sweep_writes_one_row_per_value_and_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("sweep.toml");
    std::fs::write(
        &spec,
        format!("param = \"M\"\nvalues = [2, 4]\nvariants = [\"proposed\", \"ran-opt\"]\nseeds = 2\n\n[base]\n{SMALL}"),
    )
    .unwrap();
    let out = tmp.path().join("sweep");
    let o = irs_uav(&["sweep", "--sweep-spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("sweep_M.csv"));
    assert_eq!(rows[0], "value,variant,mean_sum_rate,std_sum_rate,seeds,failures");
    assert_eq!(rows.len(), 1 + 4);
    assert_eq!(csv_rows(&out.join("sweep_M_runs.csv")).len(), 1 + 8);
}

#[test]
fn variants_are_listed() {
    let o = irs_uav(&["variants"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(text.lines().any(|l| l == "static-opt"));
}
