use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scatterkit"))
}

#[test]
fn eval_phase_isotropic() {
    let out = bin()
        .args(["eval-phase", "--family", "hg", "--g", "0", "--mu", "0.3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.0795775");
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin().args(["fit", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_is_exit_one() {
    let out = bin()
        .args(["repro", "nope", "--out", "/tmp/never-written.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("experiment"));
}

#[test]
fn render_writes_identical_output_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.toml");
    std::fs::write(
        &scene,
        r#"
thickness = 1.0
sigma_t = 2.0
sigma_s = 1.8
light_dir = [0.0, 0.0, -1.0]
beam_radius = 0.2
spp = 64
seed = 5
max_bounces = 200

[phase.Hg]
g = 0.5

[pixel_line]
count = 17
pitch = 0.05
offset = 0.0
"#,
    )
    .unwrap();
    let p1 = dir.path().join("a.csv");
    let p2 = dir.path().join("b.csv");
    for out in [&p1, &p2] {
        let status = bin()
            .args(["render", "--scene"])
            .arg(&scene)
            .args(["--seed", "1", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let manifest = std::fs::read_to_string(dir.path().join("a.csv.manifest.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(parsed["seed"], 1);
    assert!(parsed["outputs"][0].as_str().unwrap().ends_with("a.csv"));
}
