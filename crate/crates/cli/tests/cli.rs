//! End-to-end CLI checks: exit codes, determinism, file formats.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lightbake"))
}

fn scenes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn tmp() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn compare_of_identical_images_is_zero() {
    let dir = tmp();
    let out = dir.join("env.pfm");
    let status = bin()
        .args(["render", "--spp", "4", "--seed", "1", "-o"])
        .arg(&out)
        .arg(scenes().join("furnace.toml"))
        .status()
        .unwrap();
    assert!(status.success());
    let result = bin().arg("compare").arg(&out).arg(&out).output().unwrap();
    assert!(result.status.success());
    let text = String::from_utf8(result.stdout).unwrap();
    assert!(text.contains("mse=0.0"), "{text}");
}

#[test]
fn render_is_bitwise_reproducible() {
    let dir = tmp();
    let a = dir.join("r1.pfm");
    let b = dir.join("r2.pfm");
    for out in [&a, &b] {
        let status = bin()
            .args(["render", "--spp", "8", "--seed", "42", "-o"])
            .arg(out)
            .arg(scenes().join("diffuse_ball.toml"))
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn bake_is_bitwise_reproducible_and_reports_summary() {
    let dir = tmp();
    let a = dir.join("b1.ckpt");
    let b = dir.join("b2.ckpt");
    let sets = [
        "steps=60",
        "batch_size=64",
        "buffer_capacity=1024",
        "heldout_size=128",
        "k_knots=4",
        "cond_hidden=8",
        "cond_layers=1",
        "albedo_hidden=8",
        "albedo_layers=1",
        "x_bands=1",
        "d_bands=1",
        "seed=5",
    ];
    for out in [&a, &b] {
        let mut cmd = bin();
        cmd.args(["bake", "--asset", "gray", "-o"]).arg(out).arg(scenes().join("gray_sphere.toml"));
        for s in sets {
            cmd.args(["--set", s]);
        }
        let output = cmd.output().unwrap();
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        let text = String::from_utf8(output.stdout).unwrap();
        assert!(text.starts_with("bake_ok "), "{text}");
        assert!(text.contains("tuples=3840"), "{text}");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(a.with_extension("curves.csv").exists());
}

#[test]
fn corrupted_checkpoint_fails_with_checksum_message() {
    let dir = tmp();
    let ckpt = dir.join("tiny.ckpt");
    let mut cmd = bin();
    cmd.args(["bake", "--asset", "gray", "-o"]).arg(&ckpt).arg(scenes().join("gray_sphere.toml"));
    for s in [
        "steps=20",
        "batch_size=32",
        "buffer_capacity=256",
        "heldout_size=64",
        "k_knots=4",
        "cond_hidden=8",
        "cond_layers=1",
        "albedo_hidden=8",
        "albedo_layers=1",
        "x_bands=1",
        "d_bands=1",
    ] {
        cmd.args(["--set", s]);
    }
    assert!(cmd.status().unwrap().success());
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x20;
    std::fs::write(&ckpt, &bytes).unwrap();
    let out_img = dir.join("corrupt.pfm");
    let output = bin()
        .args(["render", "--mode", "neural", "--spp", "1", "--checkpoint"])
        .arg(&ckpt)
        .args(["-o"])
        .arg(&out_img)
        .arg(scenes().join("gray_sphere.toml"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("checksum"), "{err}");
}

#[test]
fn scene_parse_failure_exits_2() {
    let dir = tmp();
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "[camera\nposition = [0,0,0]").unwrap();
    let out_img = dir.join("never.pfm");
    let output = bin()
        .args(["render", "-o"])
        .arg(&out_img)
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());
}

#[test]
fn training_abort_exits_3() {
    let dir = tmp();
    let ckpt = dir.join("abort.ckpt");
    let mut cmd = bin();
    cmd.args(["bake", "--asset", "gray", "-o"]).arg(&ckpt).arg(scenes().join("gray_sphere.toml"));
    for s in [
        "steps=300",
        "batch_size=32",
        "buffer_capacity=256",
        "heldout_size=64",
        "k_knots=4",
        "cond_hidden=8",
        "cond_layers=1",
        "albedo_hidden=8",
        "albedo_layers=1",
        "x_bands=1",
        "d_bands=1",
        "lr=nan",
    ] {
        cmd.args(["--set", s]);
    }
    let output = cmd.output().unwrap();
    assert_eq!(output.status.code(), Some(3), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn sweep_variance_decreases_with_spp() {
    let dir = tmp();
    let csv = dir.join("sweep.csv");
    let output = bin()
        .args(["sweep", "--spp", "8,32,128,512", "--reference-spp", "4096", "--seed", "3", "-o"])
        .arg(&csv)
        .arg(scenes().join("diffuse_ball.toml"))
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let vars: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(vars.len(), 4);
    for pair in vars.windows(2) {
        assert!(pair[1] < pair[0], "variance must strictly decrease: {vars:?}");
    }
}

#[test]
fn render_of_env_only_scene_is_constant() {
    let dir = tmp();
    let scene = dir.join("env.toml");
    std::fs::write(
        &scene,
        r#"
[camera]
position = [0.0, 0.0, 5.0]
look_at = [0.0, 0.0, 0.0]
vfov = 40.0
resolution = [16, 16]

[[emitters]]
type = "const_env"
radiance = [0.5, 0.25, 0.125]
"#,
    )
    .unwrap();
    let out = dir.join("envonly.pfm");
    assert!(bin()
        .args(["render", "--spp", "2", "-o"])
        .arg(&out)
        .arg(&scene)
        .status()
        .unwrap()
        .success());
    let bytes = std::fs::read(&out).unwrap();
    let header = b"PF\n16 16\n-1.0\n";
    assert!(bytes.starts_with(header));
    for px in bytes[header.len()..].chunks_exact(12) {
        let r = f32::from_le_bytes(px[0..4].try_into().unwrap());
        let g = f32::from_le_bytes(px[4..8].try_into().unwrap());
        let b = f32::from_le_bytes(px[8..12].try_into().unwrap());
        assert_eq!((r, g, b), (0.5, 0.25, 0.125));
    }
}
