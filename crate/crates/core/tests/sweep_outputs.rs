use std::fs;
use std::path::{Path, PathBuf};

use softq_core::experiment::{
    emit_csv, emit_plot, parse_config, run_sweep, sweep_csv, sweep_svg, write_outputs, Algorithm,
    ConfigError, ExperimentConfig, Preset,
};
use softq_core::mdp::{build_mdp, MdpSpec, TabularMdp};
use softq_core::solvers::{optimal_q, DEFAULT_MAX_ITER, DEFAULT_TOL};

fn fig1() -> TabularMdp {
    build_mdp(&MdpSpec::two_state_example(), true).unwrap()
}

fn small(preset: Preset, n_seeds: usize, n_steps: usize) -> ExperimentConfig {
    let mut cfg = preset.config();
    cfg.n_seeds = n_seeds;
    cfg.n_steps = n_steps;
    cfg
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("SOFTQ_UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from its golden copy");
}

#[test]
fn golden_csv_and_svg() {
    let results = run_sweep(&small(Preset::Fig2Lse, 3, 2000), &fig1()).unwrap();
    check_golden("fig2_lse_small.csv", &sweep_csv(&results[0]));
    check_golden("fig2_lse_small.svg", &sweep_svg(&results[0]));
}

#[test]
fn beta_preset_has_four_rows() {
    let results = run_sweep(&small(Preset::Fig2Boltz, 2, 300), &fig1()).unwrap();
    let csv = sweep_csv(&results[0]);
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(
        csv.lines().next().unwrap(),
        "sweep_value,mean_error,stderr,bound,n_seeds,n_steps"
    );
    for row in csv.lines().skip(1) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 6);
        assert_eq!(fields[4], "2");
        assert_eq!(fields[5], "300");
    }
}

#[test]
fn plot_has_bound_above_empirical() {
    let results = run_sweep(&small(Preset::Fig2Lse, 3, 5000), &fig1()).unwrap();
    let svg = sweep_svg(&results[0]);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let markers = |class: &str| -> Vec<(f64, f64, f64)> {
        doc.descendants()
            .filter(|n| n.attribute("class") == Some(class))
            .map(|n| {
                let pixel_y = n
                    .attribute("cy")
                    .or(n.attribute("y"))
                    .unwrap()
                    .parse::<f64>()
                    .unwrap();
                (
                    n.attribute("data-x").unwrap().parse().unwrap(),
                    n.attribute("data-y").unwrap().parse().unwrap(),
                    pixel_y,
                )
            })
            .collect()
    };
    let empirical = markers("marker empirical");
    let bound = markers("marker bound");
    assert_eq!(empirical.len(), 4);
    assert_eq!(bound.len(), 4);
    for (e, b) in empirical.iter().zip(&bound) {
        assert_eq!(e.0, b.0);
        assert!(b.1 > e.1);
        // Larger values sit higher on the page.
        assert!(b.2 < e.2);
    }
    assert!(doc
        .descendants()
        .any(|n| n.attribute("class") == Some("stderr-band")));
    assert!(doc
        .descendants()
        .any(|n| n.attribute("class") == Some("x-label")));
    assert!(doc
        .descendants()
        .any(|n| n.attribute("class") == Some("y-label")));
}

#[test]
fn zero_steps_measures_initial_gap() {
    let mdp = fig1();
    let q_star = optimal_q(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let results = run_sweep(&small(Preset::Fig3Boltz, 1, 0), &mdp).unwrap();
    assert!(results[0]
        .points
        .iter()
        .all(|p| p.mean_error == q_star.linf_norm()));
}

#[test]
fn files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let results = run_sweep(&small(Preset::Fig3Lse, 2, 1000), &fig1()).unwrap();
    let path = dir.path().join("r.csv");
    emit_csv(&results[0], &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    for (row, p) in text.lines().skip(1).zip(&results[0].points) {
        let v: Vec<f64> = row.split(',').take(4).map(|f| f.parse().unwrap()).collect();
        assert_eq!(v[0].to_bits(), p.value.to_bits());
        assert_eq!(v[1].to_bits(), p.mean_error.to_bits());
        assert_eq!(v[2].to_bits(), p.stderr.to_bits());
        assert_eq!(v[3].to_bits(), p.bound.to_bits());
    }
    let svg = dir.path().join("r.svg");
    emit_plot(&results[0], &svg).unwrap();
    roxmltree::Document::parse(&fs::read_to_string(svg).unwrap()).unwrap();
}

#[test]
fn both_operators_write_separate_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Preset::Fig2Lse, 2, 500);
    cfg.algorithm = Algorithm::Both;
    let results = run_sweep(&cfg, &fig1()).unwrap();
    let files = write_outputs(&results, &cfg, dir.path()).unwrap();
    let names: Vec<String> = files
        .csv
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["lse_beta.csv", "boltzmann_beta.csv"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(files.manifest).unwrap()).unwrap();
    assert_eq!(manifest["results"].as_array().unwrap().len(), 2);
}

#[test]
fn mdp_path_resolved_against_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = MdpSpec::two_state_example();
    spec.discount = 0.5;
    fs::write(dir.path().join("model.toml"), spec.to_toml()).unwrap();
    let cfg = parse_config(
        "mdp = \"model.toml\"\nn_seeds = 1\nn_steps = 10\n",
        Some(Preset::Fig2Lse),
    )
    .unwrap();
    let mdp = cfg.load_mdp(dir.path()).unwrap();
    assert_eq!(mdp.discount(), 0.5);
    let missing = parse_config("mdp = \"absent.toml\"", None)
        .unwrap()
        .load_mdp(dir.path());
    assert!(matches!(missing, Err(ConfigError::Mdp { .. })));
}
