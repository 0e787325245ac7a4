//! Runs the `rockgan` binary end to end and checks outputs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use rockgan::workbench::template;
use rockgan::VoxelVolume;

fn rockgan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rockgan"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_volume(dir: &Path, name: &str, v: &VoxelVolume) -> String {
    let path = dir.join(name);
    v.write_raw(&path).unwrap();
    path.display().to_string()
}

fn tubes() -> VoxelVolume {
    VoxelVolume::from_pore_fn([16; 3], 1.0, |x, y, z| (x / 4 + y / 4 + z / 4) % 2 == 0 || (y % 8 < 3 && z % 8 < 3)).unwrap()
}

#[test]
fn lists_templates() {
    let dir = tempfile::tempdir().unwrap();
    let o = rockgan(&["run-experiment", "--list-templates"], dir.path());
    assert_eq!(code(&o), 0);
    for name in ["type-conditioning", "desk-porosity", "anisotropic-lambda"] {
        assert!(stdout(&o).contains(name));
    }
}

#[test]
fn configuration_problems_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rockgan(&["run-experiment"], dir.path())), 2);
    assert_eq!(code(&rockgan(&["run-experiment", "--template", "nope"], dir.path())), 2);
    assert_eq!(code(&rockgan(&["fit"], dir.path())), 2);
    std::fs::write(dir.path().join("bad.toml"), "name = \"x\"\nunknown = 3\n").unwrap();
    assert_eq!(code(&rockgan(&["--config", "bad.toml", "train"], dir.path())), 2);
    let v = write_volume(dir.path(), "v.raw", &tubes());
    assert_eq!(code(&rockgan(&["permeability", "--volume", &v, "--tau", "0.4"], dir.path())), 2);
}

#[test]
fn data_problems_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rockgan(&["fit", "--volume", "missing.raw"], dir.path())), 3);
    std::fs::write(dir.path().join("junk.raw"), [7u8; 8]).unwrap();
    std::fs::write(dir.path().join("junk.raw.meta"), "not a sidecar").unwrap();
    assert_eq!(code(&rockgan(&["fit", "--volume", "junk.raw"], dir.path())), 3);
}

#[test]
fn fit_reports_porosity_and_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let v = tubes();
    let path = write_volume(dir.path(), "v.raw", &v);
    let o = rockgan(&["fit", "--volume", &path], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let phi = v.pore_count() as f64 / v.len() as f64;
    assert!((json["porosity"].as_f64().unwrap() - phi).abs() < 1e-12);
    assert!(json["specific_surface_area"].as_f64().unwrap() > 0.0);
}

#[test]
fn permeability_along_one_axis() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_volume(dir.path(), "v.raw", &tubes());
    let o = rockgan(&["permeability", "--volume", &path, "--axis", "x", "--no-mirror", "--out", "perm"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["results"].as_array().unwrap().len(), 1);
    assert!(json["results"][0]["permeability_lattice"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("perm/permeability.json").exists());
    let solid = write_volume(dir.path(), "s.raw", &VoxelVolume::filled([6; 3], 0.0, 1.0).unwrap());
    assert_eq!(code(&rockgan(&["permeability", "--volume", &solid, "--axis", "x"], dir.path())), 5);
}

#[test]
fn prepare_data_and_rev() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_volume(dir.path(), "rock.raw", &tubes());
    let o = rockgan(
        &["prepare-data", "--source", &format!("rock={path}"), "--edge", "8", "--stride", "4", "--resample", "0", "--out", "ds"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ds = rockgan::data::read_dataset(&dir.path().join("ds")).unwrap();
    assert_eq!(ds.len(), 27 * 3);
    let o = rockgan(&["rev", "--source", &path, "--edges", "4,8,16", "--crops", "5", "--out", "rev"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("rev/rev.json").exists());
    assert!(dir.path().join("rev/rev.svg").exists());
    assert_eq!(code(&rockgan(&["prepare-data", "--source", &path, "--rotations", "1"], dir.path())), 2);
}

#[test]
fn experiment_then_generate_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = template("desk-porosity").unwrap();
    let synth = cfg.data.synthetic.as_mut().unwrap();
    synth.count = 12;
    synth.edge = 16;
    cfg.train.widths = Some(vec![4, 4, 4]);
    cfg.train.batch_size = Some(3);
    cfg.train.iterations = Some(vec![3, 3, 4]);
    cfg.train.checkpoint_every = Some(0);
    cfg.train.swd_every = Some(0);
    cfg.generate.targets.truncate(1);
    cfg.generate.count = 3;
    std::fs::write(dir.path().join("tiny.toml"), cfg.to_toml().unwrap()).unwrap();

    let o = rockgan(&["--config", "tiny.toml", "--out", "run", "run-experiment"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("run/report.json").exists());

    let model = "run/train/model";
    let o = rockgan(&["--seed", "4", "--out", "gen", "generate", "--checkpoint", model, "--edge", "16", "--porosity", "0.25", "--count", "2"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("gen/sample_00001.raw").exists());
    assert!(dir.path().join("gen/manifest.json").exists());

    let again = rockgan(&["--seed", "4", "--out", "gen2", "generate", "--checkpoint", model, "--edge", "16", "--porosity", "0.25", "--count", "2"], dir.path());
    assert_eq!(code(&again), 0);
    assert_eq!(std::fs::read(dir.path().join("gen/sample_00000.raw")).unwrap(), std::fs::read(dir.path().join("gen2/sample_00000.raw")).unwrap());

    let o = rockgan(&["generate", "--checkpoint", model, "--edge", "20", "--porosity", "0.25"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("16"));
    assert_eq!(code(&rockgan(&["generate", "--checkpoint", "nowhere", "--edge", "16"], dir.path())), 3);

    let o = rockgan(&["--out", "eval", "evaluate", "--cohort", "a=gen", "--cohort", "b=gen2", "--metrics", "phi,sa"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("porosity"));
    assert!(dir.path().join("eval/report.json").exists());
    assert_eq!(code(&rockgan(&["evaluate", "--cohort", "a=gen", "--metrics", "bogus"], dir.path())), 2);
}
