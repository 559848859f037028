use std::process::Command;

use edgepump::harness::{
    disorder_ensemble, run_figure_recipe, sweep_pump_time, t_star_vs_l, PerSiteGrid, Recipe,
    RecipeOptions, RunConfig,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_edgepump"))
}

#[test]
fn recipes_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for recipe in [Recipe::Fig1b, Recipe::Fig1d] {
        for dir in [&a, &b] {
            let opts = RecipeOptions {
                out_dir: dir.path().to_path_buf(),
                ..RecipeOptions::default()
            };
            run_figure_recipe(recipe, &opts).unwrap();
        }
        let files = std::fs::read_dir(a.path().join(recipe.name())).unwrap();
        let mut n = 0;
        for f in files {
            let name = f.unwrap().file_name();
            let x = std::fs::read(a.path().join(recipe.name()).join(&name)).unwrap();
            let y = std::fs::read(b.path().join(recipe.name()).join(&name)).unwrap();
            assert_eq!(x, y, "{name:?} differs");
            n += 1;
        }
        assert!(n >= 2, "bundle for {} has a manifest and data", recipe.name());
    }
    let manifest: serde_json::Value = serde_json::from_slice(
        &std::fs::read(a.path().join("fig1d").join("manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn repeated_lengths_give_identical_t_star() {
    let cfg = RunConfig {
        dt: Some(0.02),
        ..RunConfig::new(21)
    };
    let grid = PerSiteGrid {
        min: 15.0,
        max: 25.0,
        points: 11,
    };
    let rec = t_star_vs_l(&cfg, &[21, 21, 21], &grid).unwrap();
    let t: Vec<f64> = rec.points.iter().map(|p| p.t_star.unwrap()).collect();
    assert!(t[0] == t[1] && t[1] == t[2]);
}

#[test]
fn zero_disorder_ensemble_matches_clean_run() {
    let cfg = RunConfig {
        dt: Some(0.02),
        disorder: 0.0,
        ..RunConfig::new(21)
    };
    assert!(disorder_ensemble(&cfg, &[1, 2], 300.0).is_err());
    let clean = sweep_pump_time(&cfg, &[300.0]).unwrap();
    let seeded = sweep_pump_time(&cfg.with_seed(99), &[300.0]).unwrap();
    assert_eq!(clean.final_occupations, seeded.final_occupations);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let ok = bin()
        .args(["--out-dir", out, "lzs", "--period", "20"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("lzs.csv")).unwrap();
    assert!(csv.starts_with("t,rho,energy_gap\n"));

    let usage = bin().args(["recipe", "fig9"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
    let usage = bin().args(["no-such-command"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(1));

    // a dimer has no bulk gap, so no edge state to pump
    let numerical = bin()
        .args(["--out-dir", out, "--dt", "0.1", "evolve", "--sites", "2", "--duration", "5"])
        .output()
        .unwrap();
    assert_eq!(numerical.status.code(), Some(2));
}

#[test]
fn config_file_drives_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        duration: 200.0,
        dt: Some(0.02),
        samples: 11,
        ..RunConfig::new(21)
    };
    let path = dir.path().join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let out = bin()
        .args(["--out-dir", dir.path().to_str().unwrap(), "evolve", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,theta,norm,X_mean,rho_13,rho_14,rho_15,rho_16\n"));
    assert_eq!(traj.lines().count(), 12);
}
