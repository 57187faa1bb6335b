//! End-to-end runs of the `spx` binary.

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::Rgb;
use spx_core::segmentation::{PartLabel, BACKGROUND};
use spx_core::{fixtures, BBox, Image, Instance, SegmentationMap};

fn spx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spx")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_code(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr {stderr:?}"));
    v["code"].as_str().unwrap().to_string()
}

fn generate(dir: &Path, count: usize) -> PathBuf {
    let out = dir.join("fixtures");
    let o = spx(&["fixtures", "generate", "--out", p(&out), "--count", &count.to_string(), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

/// A face above a torso, nothing else.
fn two_part_instance(dir: &Path, name: &str) -> PathBuf {
    let (w, h) = (16, 24);
    let labels: Vec<u8> = (0..w * h)
        .map(|i| match (i % w, i / w) {
            (5..=10, 2..=7) => 0,
            (3..=12, 8..=20) => 12,
            _ => BACKGROUND,
        })
        .collect();
    let table = vec![PartLabel::new(0, "left_face"), PartLabel::new(12, "torso_front")];
    let map = SegmentationMap::new(w as u32, h as u32, labels, table).unwrap();
    let image = Image::from_fn(w as u32, h as u32, |x, y| Rgb([(x * 13) as u8, (y * 9) as u8, 90]));
    let inst = Instance::new(name, image, map, BBox::new(3.0, 2.0, 13.0, 21.0).unwrap()).unwrap();
    let path = dir.join(name);
    inst.save_dir(&path).unwrap();
    path
}

fn explain(instance: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["explain", "--instance", p(instance), "--out", p(out)];
    args.extend_from_slice(extra);
    spx(&args)
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn explain_is_byte_identical_across_runs_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = generate(tmp.path(), 1).join("ped_000");
    let flags = ["--detector", "synthetic:pixel-mean", "--masking", "noise", "--abstraction", "2", "--samples", "24", "--seed", "7"];
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(explain(&inst, &a, &flags).status.success());
    let mut more = flags.to_vec();
    more.extend(["--workers", "3"]);
    assert!(explain(&inst, &b, &more).status.success());
    for file in ["report.json", "relevance.png", "error.png"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn explicit_paths_match_instance_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = generate(tmp.path(), 1).join("ped_000");
    let flags = ["--detector", "synthetic:pixel-mean", "--abstraction", "3", "--samples", "16"];
    let a = tmp.path().join("a");
    assert!(explain(&inst, &a, &flags).status.success());
    let b = tmp.path().join("b");
    let (image, seg, gt) = (inst.join("image.png"), inst.join("segmentation.png"), inst.join("gt.json"));
    let mut args = vec![
        "explain",
        "--image",
        p(&image),
        "--segmentation",
        p(&seg),
        "--gt",
        p(&gt),
        "--out",
        p(&b),
    ];
    args.extend_from_slice(&flags);
    let o = spx(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (ra, rb) = (report(&a), report(&b));
    assert_eq!(ra["parts"], rb["parts"]);
    assert_eq!(fs::read(a.join("relevance.png")).unwrap(), fs::read(b.join("relevance.png")).unwrap());
}

#[test]
fn coarsest_level_has_six_parts() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = generate(tmp.path(), 1).join("ped_000");
    let out = tmp.path().join("o");
    let o = explain(&inst, &out, &["--detector", "synthetic:linear:0.1,0.1,0.1,0.4,0.1,0.1", "--abstraction", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let names: Vec<&str> = r["parts"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["face", "left_arm", "right_arm", "torso", "left_leg", "right_leg"]);
    assert_eq!(r["abstraction"], 3);
    assert!((r["parts"][3]["score"].as_f64().unwrap() - 0.4).abs() < 1e-9);
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn too_few_beta_samples_is_a_solver_error() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = generate(tmp.path(), 1).join("ped_000");
    let out = tmp.path().join("o");
    let o = explain(&inst, &out, &["--detector", "synthetic:pixel-mean", "--method", "beta", "--samples", "4", "--abstraction", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "underdetermined");
    assert!(!out.join("report.json").exists());
}

#[test]
fn exit_codes_by_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = generate(tmp.path(), 1).join("ped_000");
    let out = tmp.path().join("o");

    let o = spx(&["explain", "--nonsense"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "usage");

    let o = explain(&inst, &out, &["--detector", "synthetic:pixel-mean", "--abstraction", "4"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "unsupported_level");

    let o = explain(&inst, &out, &["--detector", "synthetic:nonsense:1"]);
    assert_eq!(o.status.code(), Some(1));

    let o = explain(&tmp.path().join("missing"), &out, &["--detector", "synthetic:pixel-mean"]);
    assert_eq!(o.status.code(), Some(4));

    let o = explain(&inst, &out, &["--detector", "/nonexistent/detector"]);
    assert_eq!(o.status.code(), Some(3));
}

const ECHO: &str = r#"#!/bin/sh
echo '{"protocol":"spx/1"}'
while IFS= read -r line; do
  id=$(printf '%s' "$line" | sed -n 's/^{"id":\([0-9]*\),.*/\1/p')
  echo "{\"id\":$id,\"detections\":[{\"bbox\":[3,2,13,21],\"score\":0.9,\"label\":\"person\"}]}"
done
"#;

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

#[test]
fn external_detector_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = two_part_instance(tmp.path(), "two");
    let det = script(tmp.path(), "echo.sh", ECHO);
    let out = tmp.path().join("o");
    let o = explain(&inst, &out, &["--detector", p(&det), "--method", "kernelshap", "--samples", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    // the box never changes, so nothing is relevant
    assert!((r["q_full"].as_f64().unwrap() - 0.9).abs() < 1e-12);
    for part in r["parts"].as_array().unwrap() {
        assert!(part["score"].as_f64().unwrap().abs() < 1e-12);
    }
    assert_eq!(r["q_original"], r["q_full"]);
}

#[test]
fn external_detector_failures_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = two_part_instance(tmp.path(), "two");
    let out = tmp.path().join("o");
    let cases = [
        ("v2.sh", ECHO.replace("spx/1", "spx/2"), "version_mismatch"),
        (
            "garbage.sh",
            "#!/bin/sh\necho '{\"protocol\":\"spx/1\"}'\nwhile read -r l; do echo nope; done\n".to_string(),
            "protocol_error",
        ),
        ("slow.sh", "#!/bin/sh\necho '{\"protocol\":\"spx/1\"}'\nsleep 30\n".to_string(), "timeout"),
    ];
    for (name, body, code) in cases {
        let det = script(tmp.path(), name, &body);
        let o = explain(&inst, &out, &["--detector", p(&det), "--samples", "8", "--timeout", "0.5"]);
        assert_eq!(o.status.code(), Some(3), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(error_code(&o), code, "{name}");
    }
}

fn fake_report(dir: &Path, name: &str, level: u8, parts: &[(u8, &str, f64)]) -> PathBuf {
    let parts: Vec<serde_json::Value> = parts
        .iter()
        .map(|(id, n, s)| serde_json::json!({"id": id, "name": n, "score": s, "error": null}))
        .collect();
    let r = serde_json::json!({
        "method": "beta", "abstraction": level, "masking": "inpaint", "n_samples": 64, "seed": 0,
        "parts": parts, "intercept": 0.0, "q_full": 0.9, "q_empty": 0.1, "config_hash": "x"
    });
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec(&r).unwrap()).unwrap();
    path
}

#[test]
fn aggregate_single_report() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = generate(tmp.path(), 1).join("ped_000");
    let run = tmp.path().join("run");
    let o = explain(&inst, &run, &["--detector", "synthetic:linear:0.1,0.05,0.05,0.5,0.1,0.1", "--abstraction", "3"]);
    assert!(o.status.success());
    let out = tmp.path().join("agg");
    let o = spx(&["aggregate", "--reports", p(&run.join("report.json")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg: serde_json::Value = serde_json::from_slice(&fs::read(out.join("aggregate.json")).unwrap()).unwrap();
    let r = report(&run);
    for (a, b) in agg["parts"].as_array().unwrap().iter().zip(r["parts"].as_array().unwrap()) {
        assert_eq!(a["mean"], b["score"]);
        assert_eq!(a["count"], 1);
    }
    let svg = fs::read_to_string(out.join("pictogram.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("id=\"torso\" fill=\"#"));
}

#[test]
fn aggregate_disjoint_reports_and_globs() {
    let tmp = tempfile::tempdir().unwrap();
    fake_report(tmp.path(), "r1.json", 3, &[(0, "face", 0.2), (3, "torso", 0.5)]);
    fake_report(tmp.path(), "r2.json", 3, &[(1, "left_arm", 0.1), (4, "left_leg", -0.1)]);
    let out = tmp.path().join("agg");
    let pattern = format!("{}/r*.json", p(tmp.path()));
    let o = spx(&["aggregate", "--reports", &pattern, "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg: serde_json::Value = serde_json::from_slice(&fs::read(out.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg["instances"], 2);
    for part in agg["parts"].as_array().unwrap() {
        let expected = if ["right_arm", "right_leg"].contains(&part["name"].as_str().unwrap()) { 0 } else { 1 };
        assert_eq!(part["count"], expected, "{part}");
    }
    let svg = fs::read_to_string(out.join("pictogram.svg")).unwrap();
    assert!(svg.contains("id=\"right_arm\" fill=\"url(#hatch)\""));
}

#[test]
fn aggregate_rejections() {
    let tmp = tempfile::tempdir().unwrap();
    let a = fake_report(tmp.path(), "a.json", 3, &[(0, "face", 0.2)]);
    let b = fake_report(tmp.path(), "b.json", 2, &[(0, "face", 0.2)]);
    let out = tmp.path().join("agg");
    let o = spx(&["aggregate", "--reports", p(&a), p(&b), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "mixed_abstraction");
    let pattern = format!("{}/none*.json", p(tmp.path()));
    let o = spx(&["aggregate", "--reports", &pattern, "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "empty_input");
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn convergence_ladder_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("instances");
    fs::create_dir_all(&root).unwrap();
    two_part_instance(&root, "a");
    two_part_instance(&root, "b");
    let out = tmp.path().join("conv");
    let o = spx(&[
        "convergence", "--instances", p(&root), "--detector", "synthetic:product:0.5@0;0.3@0-1;b=0.1",
        "--levels", "0", "--ladder", "8,16,32", "--seeds", "2", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let header = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(header.starts_with("method,masking,level,n_samples,part_id,part_name,mean_score,std\n"));
    let rows = csv_rows(&out.join("convergence.csv"));
    // 2 methods x 3 budgets x 2 parts
    assert_eq!(rows.len(), 12);
    for method in ["kernelshap", "beta"] {
        for part in ["0", "12"] {
            let budgets: Vec<&str> = rows.iter().filter(|r| r[0] == method && r[4] == part).map(|r| r[3].as_str()).collect();
            assert_eq!(budgets, ["8", "16", "32"]);
        }
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["bands"].as_array().unwrap().len(), 6);
    assert!(summary["beta_monotone"].is_boolean());
    assert_eq!(summary["band"], "instances");
}

#[test]
fn convergence_default_ladder_and_detector_files() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("instances");
    fs::create_dir_all(&root).unwrap();
    let dir = two_part_instance(&root, "a");
    fs::write(dir.join("detector.txt"), "synthetic:linear:0.25,0.5\n").unwrap();
    let out = tmp.path().join("conv");
    let o = spx(&["convergence", "--instances", p(&root), "--methods", "beta", "--levels", "0", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("convergence.csv"));
    let budgets: Vec<u32> = rows.iter().filter(|r| r[4] == "0").map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(budgets, (3..=12).map(|k| 1 << k).collect::<Vec<u32>>());
    // linear detector: identical means at every budget
    for r in &rows {
        let expected = if r[4] == "0" { 0.25 } else { 0.5 };
        assert!((r[6].parse::<f64>().unwrap() - expected).abs() < 1e-9);
    }
}

#[test]
fn convergence_needs_a_detector() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("instances");
    fs::create_dir_all(&root).unwrap();
    two_part_instance(&root, "a");
    let o = spx(&["convergence", "--instances", p(&root), "--ladder", "8", "--out", p(&tmp.path().join("c"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn convergence_on_generated_interaction_fixtures() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("fx");
    let o = spx(&["fixtures", "generate", "--kind", "interaction", "--count", "3", "--out", p(&root)]);
    assert!(o.status.success());
    assert!(root.join("ped_002").join("detector.txt").is_file());
    let out = tmp.path().join("conv");
    let o = spx(&[
        "convergence", "--instances", p(&root), "--ladder", "16,32,64", "--top", "2", "--workers", "2", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    // Beta at level 1 needs 20 samples for its bootstrap; 16 is skipped
    let skipped = summary["skipped"].as_array().unwrap();
    assert!(skipped.iter().any(|s| s["method"] == "beta" && s["n_samples"] == 16));
}

#[test]
fn oracle_examples() {
    let o = spx(&["oracle", "--detector", "synthetic:linear:0.3,0.7"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let s: Vec<f64> = v["scores"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((s[0] - 0.3).abs() < 1e-12 && (s[1] - 0.7).abs() < 1e-12);

    let o = spx(&["oracle", "--detector", "synthetic:product:1@0-1-2"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for x in v["scores"].as_array().unwrap() {
        assert!((x.as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    let o = spx(&["oracle", "--detector", "synthetic:product:0.1@0", "--parts", "21"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "too_many_parts");

    let o = spx(&["oracle", "--detector", "synthetic:pixel-mean"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fixtures_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = generate(&tmp.path().join("a"), 2);
    let b = generate(&tmp.path().join("b"), 2);
    for inst in ["ped_000", "ped_001"] {
        for file in ["image.png", "segmentation.png", "segmentation.json", "gt.json"] {
            assert_eq!(fs::read(a.join(inst).join(file)).unwrap(), fs::read(b.join(inst).join(file)).unwrap());
        }
    }
    let loaded = Instance::load_dir(&a.join("ped_001")).unwrap();
    assert_eq!(loaded, fixtures::pedestrian_set(2, 4).remove(1));
}
