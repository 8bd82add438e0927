//! Drives the `stscale` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stscale::ScalarField;
use stscale_cli::fieldio::{read_field, write_field, Dtype};

fn stscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stscale")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stscale(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    stscale(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_declared_shapes_and_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("disk");
    ok(&["synth", "--kind", "disk2d", "--width", "20", "--shape", "128,128", "--outdir", s(&d)]);
    for name in ["field.f32", "feature_mask.u8", "skeleton_mask.u8"] {
        assert_eq!(read_field(&d.join(name)).unwrap().shape(), &[128, 128]);
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("phantom.json")).unwrap()).unwrap();
    assert_eq!(json["kind"], "disk2d");

    let noisy = |dir: &Path, seed: &str| {
        ok(&[
            "synth", "--kind", "lines2d-increasing", "--width", "4", "--shape", "64,256", "--noise", "anisotropic",
            "--noise-amplitude", "0.25", "--seed", seed, "--outdir", s(dir),
        ]);
        fs::read(dir.join("field.f32")).unwrap()
    };
    let a = noisy(&tmp.path().join("a"), "7");
    let b = noisy(&tmp.path().join("b"), "7");
    let c = noisy(&tmp.path().join("c"), "8");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("a/phantom.json")).unwrap()).unwrap();
    let widths: Vec<f64> = json["components"].as_array().unwrap().iter().map(|c| c["width"].as_f64().unwrap()).collect();
    assert_eq!(widths, [4.0, 6.0, 8.0, 12.0, 17.0, 24.0]);
}

#[test]
fn analyze_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("trio");
    ok(&["synth", "--kind", "trio2d", "--width", "20", "--shape", "256,256", "--outdir", s(&ph)]);
    let out = tmp.path().join("out");
    let mask = ph.join("skeleton_mask.u8");
    let stdout = ok(&[
        "analyze", "--input", s(&ph.join("field.f32")), "--outdir", s(&out), "--sigma-min", "2", "--sigma-max", "16",
        "--sigma-step", "0.5", "--mask", s(&mask), "--bins", "20", "--preview",
    ]);
    assert_eq!(stdout.trim(), fs::read_to_string(out.join("advice.txt")).unwrap().trim());
    for name in ["scale", "scale_corrected", "width", "anisotropy", "orientation"] {
        let f = read_field(&out.join(format!("{name}.f32"))).unwrap();
        assert_eq!(f.shape(), &[256, 256], "{name}");
    }
    assert!(out.join("orientation_preview.ppm").exists());

    let csv = fs::read_to_string(out.join("histogram.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bin_center,count"));
    assert_eq!(lines.count(), 20);
    let advice = fs::read_to_string(out.join("advice.txt")).unwrap();
    assert!(["OK", "EXPAND_LOW", "EXPAND_HIGH", "NOISE_WARNING"].contains(&advice.trim()));

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["gamma"], 1.2);
    assert_eq!(run["config"]["bins"], 20);
    assert_eq!(run["config"]["correction"], true);
    let width = run["stats"].as_array().unwrap().iter().find(|e| e[0] == "width").unwrap();
    let masked = width[1]["mask"]["mean"].as_f64().unwrap();
    assert!((18.0..=22.0).contains(&masked), "mean width over skeletons {masked}");
    assert_eq!(width[1]["full"]["count"], 256 * 256);
    let skeleton = read_field(&mask).unwrap().data().iter().filter(|&&v| v != 0.0).count();
    assert_eq!(width[1]["mask"]["count"], skeleton);
}

#[test]
fn analyze_reads_pgm_and_volumes() {
    let tmp = tempfile::tempdir().unwrap();
    let pgm = tmp.path().join("bar.pgm");
    let mut text = String::from("P2\n32 24\n255\n");
    for _ in 0..24 {
        for x in 0..32 {
            text.push_str(if (12..20).contains(&x) { "255 " } else { "0 " });
        }
        text.push('\n');
    }
    fs::write(&pgm, text).unwrap();
    let out = tmp.path().join("pgm_out");
    ok(&["analyze", "--input", s(&pgm), "--outdir", s(&out), "--sigma-max", "5"]);
    let angle = read_field(&out.join("orientation.f32")).unwrap();
    assert!((angle.get(&[12, 16]) - std::f64::consts::FRAC_PI_2).abs() < 1e-6);

    let vol = tmp.path().join("vol");
    ok(&["synth", "--kind", "cylinder3d", "--width", "6", "--shape", "20,20,20", "--outdir", s(&vol)]);
    let out = tmp.path().join("vol_out");
    ok(&[
        "analyze", "--input", s(&vol.join("field.f32")), "--outdir", s(&out), "--sigma-max", "4", "--spacing",
        "geometric", "--threads", "1",
    ]);
    for name in ["fa", "linearity", "planarity", "sphericity", "orientation_z", "orientation_y", "orientation_x"] {
        assert_eq!(read_field(&out.join(format!("{name}.f32"))).unwrap().shape(), &[20, 20, 20]);
    }
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["spacing"], "geometric");
}

fn orientation_dir(dir: &Path, angle: f64) {
    fs::create_dir_all(dir).unwrap();
    write_field(dir, "orientation", &ScalarField::filled(&[8, 8], angle).unwrap(), Dtype::F32).unwrap();
}

#[test]
fn compare_reports_axial_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    orientation_dir(&a, 0.3);
    orientation_dir(&b, 0.3 + std::f64::consts::FRAC_PI_2);
    let same: serde_json::Value = serde_json::from_str(&ok(&["compare", "--a", s(&a), "--b", s(&a)])).unwrap();
    assert_eq!(same["difference_deg"]["full"]["mean"], 0.0);
    assert_eq!(same["difference_deg"]["full"]["std"], 0.0);

    let mask = tmp.path().join("m");
    fs::create_dir_all(&mask).unwrap();
    let m = ScalarField::from_fn(&[8, 8], |i| (i[0] < 2) as u8 as f64).unwrap();
    let mp = write_field(&mask, "mask", &m, Dtype::U8).unwrap();
    let out = tmp.path().join("report");
    let ortho: serde_json::Value = serde_json::from_str(&ok(&[
        "compare", "--a", s(&a), "--b", s(&b), "--mask", s(&mp), "--outdir", s(&out),
    ]))
    .unwrap();
    let mean = ortho["difference_deg"]["full"]["mean"].as_f64().unwrap();
    assert!((mean - 90.0).abs() < 1e-3, "{mean}");
    assert_eq!(ortho["difference_deg"]["mask"]["count"], 16);
    assert!(out.join("compare.json").exists());

    fs::create_dir_all(&c).unwrap();
    write_field(&c, "orientation", &ScalarField::filled(&[4, 8], 0.3).unwrap(), Dtype::F32).unwrap();
    assert_eq!(code(&["compare", "--a", s(&a), "--b", s(&c)]), 4);
}

#[test]
fn resample_halves_and_restores() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    fs::create_dir_all(&src).unwrap();
    let f = ScalarField::filled(&[10, 6, 8], 0.75).unwrap();
    let p = write_field(&src, "field", &f, Dtype::F32).unwrap();
    let down = tmp.path().join("down");
    ok(&["resample", "--input", s(&p), "--outdir", s(&down)]);
    let d = read_field(&down.join("field.f32")).unwrap();
    assert_eq!(d.shape(), &[5, 3, 4]);
    assert!(d.data().iter().all(|&v| v == 0.75));

    let up = tmp.path().join("up");
    ok(&["resample", "--input", s(&down), "--outdir", s(&up), "--factor", "up2", "--shape", "10,6,8"]);
    assert_eq!(read_field(&up.join("field.f32")).unwrap(), f);
}

#[test]
fn calibration_needs_three_widths() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cal");
    assert_eq!(code(&["calibrate", "--mode", "anis-ratio", "--widths", "10,20", "--outdir", s(&out)]), 3);
    ok(&["calibrate", "--mode", "anis-ratio", "--widths", "10,20,30", "--outdir", s(&out)]);
    let csv = fs::read_to_string(out.join("anis_ratio.csv")).unwrap();
    let ratios: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(ratios.len(), 3);
    let mean = ratios.iter().sum::<f64>() / 3.0;
    assert!((mean - 1.0675).abs() <= 0.01, "{mean}");
    let first = csv.clone();
    ok(&["calibrate", "--mode", "anis-ratio", "--widths", "10,20,30", "--outdir", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("anis_ratio.csv")).unwrap(), first);
}

#[test]
fn corr3d_never_worsens_the_objective() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("corr");
    ok(&[
        "calibrate", "--mode", "corr3d", "--width", "6", "--extent", "32", "--sigma-min", "1", "--sigma-max", "4",
        "--sigma-step", "0.25", "--outdir", s(&out),
    ]);
    let csv = fs::read_to_string(out.join("corr3d.csv")).unwrap();
    let get = |key: &str| -> f64 {
        csv.lines().find(|l| l.starts_with(&format!("{key},"))).unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    assert_eq!(csv.lines().next(), Some("coefficient,value"));
    for key in ["c0", "c_s", "c_p", "c_l"] {
        assert!(get(key).is_finite());
    }
    assert!(get("objective_end") <= get("objective_start"));
}

#[test]
fn exit_codes_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.f32");
    let out = tmp.path().join("o");
    assert_eq!(code(&["analyze", "--input", s(&missing), "--outdir", s(&out)]), 2);
    assert_eq!(code(&["analyze"]), 3);

    let ph = tmp.path().join("ph");
    ok(&["synth", "--kind", "disk2d", "--width", "6", "--shape", "24,24", "--outdir", s(&ph)]);
    let input = ph.join("field.f32");
    assert_eq!(code(&["analyze", "--input", s(&input), "--outdir", s(&out), "--gamma", "3.5"]), 3);
    assert_eq!(code(&["analyze", "--input", s(&input), "--outdir", s(&out), "--sigma-min", "4", "--sigma-max", "2"]), 3);

    let other = tmp.path().join("other");
    ok(&["synth", "--kind", "disk2d", "--width", "6", "--shape", "24,32", "--outdir", s(&other)]);
    let bad_mask = other.join("feature_mask.u8");
    assert_eq!(code(&["analyze", "--input", s(&input), "--outdir", s(&out), "--mask", s(&bad_mask)]), 4);

    // a non-finite sample is a numerical failure
    let nan = tmp.path().join("nan");
    fs::create_dir_all(&nan).unwrap();
    let p = write_field(&nan, "f", &ScalarField::filled(&[8, 8], f64::NAN).unwrap(), Dtype::F32).unwrap();
    assert_eq!(code(&["analyze", "--input", s(&p), "--outdir", s(&out)]), 5);

    assert_eq!(code(&["synth", "--kind", "disk2d", "--width", "40", "--shape", "16,16", "--outdir", s(&out)]), 3);
}
