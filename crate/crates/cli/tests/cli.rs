use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn annoqa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annoqa"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn sim_config(annotators: usize) -> Value {
    let pool: Vec<Value> = (1..=annotators)
        .map(|i| {
            let noisy = i == 1;
            json!({
                "id": format!("a{i}"),
                "profile": {
                    "jitter_sigma": if noisy { 6.0 } else { 2.0 },
                    "p_miss": if noisy { 0.3 } else { 0.1 },
                }
            })
        })
        .collect();
    json!({
        "scene": {"images": 4, "width": 96, "height": 64, "objects_per_image": [2, 5],
                  "class_mix": {"person": 2.0, "vehicle": 1.0, "bicycle": 1.0},
                  "box_size": [6, 30], "seed": 21},
        "annotators": pool,
        "detector": {"jitter_sigma": 2.0, "p_miss": 0.2, "p_spurious": 0.5}
    })
}

fn corpus(annotators: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("sim.json"), sim_config(annotators).to_string()).unwrap();
    let o = annoqa(&["simulate", "--config", "sim.json", "--out", "data"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

fn write_run(dir: &Path, name: &str, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "input": "data/annotations.json",
        "predictions": "data/predictions.json",
        "seed": 11,
        "output_dir": "out",
        "top": {"top_k": 3},
        "per_class": true
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join(name);
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn full_pipeline_writes_six_reports() {
    let dir = corpus(4);
    write_run(dir.path(), "run.json", json!({}));
    let o = annoqa(&["run", "run.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = read_dir_sorted(&dir.path().join("out")).into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        ["agreement.json", "difficulty.json", "eval.json", "ground_truth.json", "validation.json", "vitality.json"]
    );
    let gt: Value = serde_json::from_slice(&fs::read(dir.path().join("out/ground_truth.json")).unwrap()).unwrap();
    assert_eq!(gt["recipe"], "mixed_top");
    assert_eq!(gt["provenance"].as_object().unwrap().len(), 4);
}

#[test]
fn pipeline_is_byte_deterministic() {
    let dir = corpus(4);
    write_run(dir.path(), "run1.json", json!({"output_dir": "out1"}));
    write_run(dir.path(), "run2.json", json!({"output_dir": "out2"}));
    assert_eq!(code(&annoqa(&["run", "run1.json"], dir.path())), 0);
    assert_eq!(code(&annoqa(&["run", "run2.json"], dir.path())), 0);
    assert_eq!(read_dir_sorted(&dir.path().join("out1")), read_dir_sorted(&dir.path().join("out2")));
}

#[test]
fn csv_pipeline() {
    let dir = corpus(4);
    write_run(dir.path(), "run.json", json!({"format": "csv"}));
    assert_eq!(code(&annoqa(&["run", "run.json"], dir.path())), 0);
    let vit = fs::read_to_string(dir.path().join("out/vitality.csv")).unwrap();
    assert_eq!(vit.lines().next().unwrap(), "annotator_id,mean_V,median_V,k_full_mean,k_loo_mean,images");
    assert_eq!(vit.lines().count(), 5);
    let diff = fs::read_to_string(dir.path().join("out/difficulty.csv")).unwrap();
    assert_eq!(
        diff.lines().next().unwrap(),
        "class,mean_class_alpha,median_class_alpha,degenerate,V_a1,V_a2,V_a3,V_a4"
    );
    let eval = fs::read_to_string(dir.path().join("out/eval.csv")).unwrap();
    assert!(eval.starts_with("scope,tp,fp,fn,precision,recall,f1,misclassified\noverall,"));
}

/// Remove every assignment of `who` on `image` and its boxes there.
fn punch_hole(path: &Path, who: &[&str], image: &str) {
    let mut v: Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    let keep = |e: &Value| !(e["image_id"] == image && who.iter().any(|w| e["annotator_id"] == *w));
    for key in ["boxes", "assignments"] {
        let arr: Vec<Value> = v[key].as_array().unwrap().iter().filter(|e| keep(e)).cloned().collect();
        v[key] = Value::Array(arr);
    }
    fs::write(path, v.to_string()).unwrap();
}

#[test]
fn coverage_hole_fails_curation_and_keeps_earlier_reports() {
    let dir = corpus(4);
    punch_hole(&dir.path().join("data/annotations.json"), &["a1", "a2", "a3", "a4"], "img0002");
    write_run(dir.path(), "run.json", json!({"gt_recipe": "single_top"}));
    let o = annoqa(&["run", "run.json"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for f in ["validation.json", "agreement.json", "vitality.json", "difficulty.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(!out.join("ground_truth.json").exists());
    assert!(!out.join("eval.json").exists());
    let marker: Value = serde_json::from_slice(&fs::read(out.join("failed_stage.json")).unwrap()).unwrap();
    assert_eq!(marker["failed_stage"], "curate");
    assert_eq!(marker["exit_code"], 3);
    assert!(marker["message"].as_str().unwrap().contains("img0002"));

    // a later successful run clears the marker
    let dir2 = corpus(4);
    fs::create_dir_all(dir2.path().join("out")).unwrap();
    fs::write(dir2.path().join("out/failed_stage.json"), "{}").unwrap();
    write_run(dir2.path(), "run.json", json!({}));
    assert_eq!(code(&annoqa(&["run", "run.json"], dir2.path())), 0);
    assert!(!dir2.path().join("out/failed_stage.json").exists());
}

#[test]
fn exit_codes() {
    let dir = corpus(2);
    let p = dir.path();
    fs::write(p.join("broken.json"), "{\"images\": [").unwrap();
    assert_eq!(code(&annoqa(&["validate", "broken.json"], p)), 1);
    assert_eq!(code(&annoqa(&["validate", "missing.json"], p)), 1);
    // two annotators cannot support leave-one-out
    assert_eq!(code(&annoqa(&["vitality", "data/annotations.json", "--seed", "1"], p)), 2);
    assert_eq!(
        code(&annoqa(&["curate", "data/annotations.json", "--recipe", "drop-annotator", "--annotator", "zz", "--seed", "1"], p)),
        3
    );
    let mut preds: Value = serde_json::from_slice(&fs::read(p.join("data/predictions.json")).unwrap()).unwrap();
    preds["labels"].as_array_mut().unwrap().push(json!("cart"));
    fs::write(p.join("bad_preds.json"), preds.to_string()).unwrap();
    assert_eq!(code(&annoqa(&["eval", "--predictions", "bad_preds.json", "--gt", "data/truth.json"], p)), 4);
    assert_eq!(code(&annoqa(&["agreement", "data/annotations.json", "--seed", "1", "--drop-fraction", "1.5"], p)), 5);
    assert_eq!(code(&annoqa(&["agreement", "data/annotations.json"], p)), 5, "seed is mandatory");
    assert_eq!(code(&annoqa(&["run", "nope.json"], p)), 5);
}

#[test]
fn subcommands_produce_reports() {
    let dir = corpus(4);
    let p = dir.path();
    let ok = |args: &[&str]| {
        let o = annoqa(args, p);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o.stdout
    };
    let v: Value = serde_json::from_slice(&ok(&["validate", "data/annotations.json"])).unwrap();
    assert_eq!(v["image_count"], 4);
    let a: Value = serde_json::from_slice(&ok(&["agreement", "data/annotations.json", "--seed", "3"])).unwrap();
    assert_eq!(a["per_image"].as_array().unwrap().len(), 4);
    let one: Value =
        serde_json::from_slice(&ok(&["vitality", "data/annotations.json", "--seed", "3", "--annotator", "a2"])).unwrap();
    assert_eq!(one["annotator_id"], "a2");
    let d: Value =
        serde_json::from_slice(&ok(&["difficulty", "data/annotations.json", "--seed", "3", "--class", "person"])).unwrap();
    assert_eq!(d[0]["class"], "person");
    ok(&["curate", "data/annotations.json", "--recipe", "mixed-top", "--top-k", "3", "--seed", "3", "--out", "gt1.json"]);
    ok(&["curate", "data/annotations.json", "--recipe", "single-top", "--top", "a2,a3", "--seed", "3", "--out", "gt2.json"]);
    let gt2: Value = serde_json::from_slice(&fs::read(p.join("gt2.json")).unwrap()).unwrap();
    let sources: std::collections::BTreeSet<&str> =
        gt2["provenance"].as_object().unwrap().values().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(sources.len(), 1);
    let e: Value = serde_json::from_slice(&ok(&[
        "eval", "--predictions", "data/predictions.json", "--gt", "gt1.json", "--cap", "10", "--per-class",
    ]))
    .unwrap();
    assert!(e["overall"]["tp"].as_u64().unwrap() + e["overall"]["fp"].as_u64().unwrap() <= 10);
    let text = String::from_utf8(ok(&["report", "data/annotations.json", "--seed", "3"])).unwrap();
    assert!(text.contains("annotator vitality"));
    assert!(text.contains("class difficulty"));
    ok(&["curate", "data/annotations.json", "--recipe", "drop-annotator", "--annotator", "a1", "--seed", "0", "--out", "drop.json"]);
    let dropped: Value = serde_json::from_slice(&fs::read(p.join("drop.json")).unwrap()).unwrap();
    assert!(dropped["boxes"].as_array().unwrap().iter().all(|b| b["annotator_id"] != "a1"));
}

#[test]
fn original_labels_with_rename() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let original = json!({
        "images": [{"id": "f1", "width": 40, "height": 40}],
        "annotators": [{"id": "release", "tier": "professional"}],
        "labels": ["biker", "bicycle", "person"],
        "boxes": [{"image_id": "f1", "annotator_id": "release", "label": "biker", "bbox": [1, 1, 10, 10]}]
    });
    fs::write(p.join("orig.json"), original.to_string()).unwrap();
    fs::write(p.join("map.json"), r#"{"rename": {"biker": "bicycle"}}"#).unwrap();
    let o = annoqa(
        &["curate", "orig.json", "--recipe", "original", "--label-map", "map.json", "--seed", "0"],
        p,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let gt: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(gt["recipe"], "original");
    assert_eq!(gt["boxes"][0]["label"], "bicycle");
    assert_eq!(gt["boxes"][0]["annotator_id"], "original");
    assert_eq!(gt["labels"], json!(["bicycle", "person"]));
}

#[test]
fn csv_input_with_skeleton() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let skeleton = json!({
        "images": [{"id": "f1", "width": 20, "height": 20}],
        "annotators": [{"id": "x", "tier": "novice"}, {"id": "y", "tier": "novice"}],
        "labels": ["person"],
        "boxes": []
    });
    fs::write(p.join("skel.json"), skeleton.to_string()).unwrap();
    fs::write(
        p.join("boxes.csv"),
        "image_id,annotator_id,label,x,y,w,h\nf1,x,person,0,0,5,5\nf1,y,person,0,0,5,6\n",
    )
    .unwrap();
    let o = annoqa(&["agreement", "boxes.csv", "--skeleton", "skel.json", "--seed", "1", "--format", "csv"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("image_id,alpha,units,raters,degenerate\nf1,"));
}

#[test]
fn raster_dump() {
    let dir = corpus(2);
    let o = annoqa(
        &["agreement", "data/annotations.json", "--seed", "1", "--dump-raster", "rasters", "--out", "a.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read(dir.path().join("rasters/img0000__a1__person.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n96 64\n255\n"));
    assert_eq!(pgm.len(), "P5\n96 64\n255\n".len() + 96 * 64);
}

#[test]
fn schema_and_version() {
    let dir = TempDir::new().unwrap();
    let o = annoqa(&["--schema"], dir.path());
    assert_eq!(code(&o), 0);
    let schema: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(schema["required"], json!(["images", "annotators", "labels", "boxes"]));
    let o = annoqa(&["--version"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("annoqa "));
}

#[test]
fn simulate_is_deterministic() {
    let a = corpus(3);
    let b = corpus(3);
    assert_eq!(read_dir_sorted(&a.path().join("data")), read_dir_sorted(&b.path().join("data")));
}
