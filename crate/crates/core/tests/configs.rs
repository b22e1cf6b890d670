//! The shipped configuration files must stay loadable.

use std::path::PathBuf;

use irs_uav::experiment::SweepSpec;
use irs_uav::scenario::load_config;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn scenario_files_load() {
    let sc = load_config(&configs().join("default.toml")).unwrap();
    assert_eq!((sc.k, sc.m, sc.n), (4, 20, 30));
    assert_eq!(&sc.q_init[..2], &[0.0, 250.0]);
    assert_eq!(&sc.q_final[..2], &[500.0, 250.0]);
    assert!((sc.p_max - 19.952623).abs() < 1e-5);
    let small = load_config(&configs().join("small.toml")).unwrap();
    assert_eq!((small.k, small.n), (2, 6));
}

#[test]
fn sweep_specs_parse() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs().join("sweeps")).unwrap() {
        let path = entry.unwrap().path();
        let spec = SweepSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        for v in &spec.values {
            spec.params_at(*v, spec.first_seed).unwrap();
        }
        seen += 1;
    }
    assert_eq!(seen, 5);
}
