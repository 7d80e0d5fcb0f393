use std::path::Path;
use std::process::{Command, Output};

use deepclust::cluster::DecHead;
use deepclust::ingest::{write_pgm, DatasetManifest};
use deepclust::{Checkpoint, Tensor};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deepclust"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Last stderr line parsed as the JSON error object.
fn error_of(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

fn write_pgms(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let data = (0..12 * 20).map(|v| ((v * (i + 3)) % 251) as f64).collect();
        let img = Tensor::new(vec![1, 12, 20], data).unwrap();
        std::fs::write(dir.join(format!("p{i:02}.pgm")), write_pgm(&img, 255).unwrap()).unwrap();
    }
}

const TINY: &str = r#"{"size":32,"split":"80/20","k":3,"runs":1,"seed":4,
 "cae":{"filters":[4,4],"bottleneck":4,"batch_size":8,"max_epochs":2},
 "dec":{"max_epochs":2,"batch_size":8},
 "kmeans_restarts":3,
 "descriptors":{"pca_components":4,"hog":{"cell":8},"lbp":{"cell":8}},
 "tsne":{"perplexity":3,"iterations":100}}"#;

fn tiny_workspace(root: &Path) {
    ok(&["fixture", "--out", "fx", "--count", "60", "--size", "32", "--seed", "2"], root);
    std::fs::write(root.join("tiny.json"), TINY).unwrap();
    ok(
        &["ingest", "--input-dir", "fx", "--labels", "fx/labels.csv", "--out", "ws", "--config", "tiny.json"],
        root,
    );
    ok(&["train-cae", "--out", "ws"], root);
    ok(&["embed", "--out", "ws"], root);
    ok(&["features", "--out", "ws"], root);
}

#[test]
fn ingest_counts_sizes_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_pgms(&root.join("in"), 10);
    let args = ["ingest", "--input-dir", "in", "--out", "ws", "--size", "64", "--split", "80/20", "--seed", "7"];
    ok(&args, root);
    let train = DatasetManifest::load(&root.join("ws/manifests/train.json")).unwrap();
    let test = DatasetManifest::load(&root.join("ws/manifests/test.json")).unwrap();
    assert_eq!((train.len(), test.len()), (8, 2));
    for id in train.ids().iter().chain(&test.ids()) {
        let t = Tensor::load(&root.join(format!("ws/cache/{id}.tnsr"))).unwrap();
        assert_eq!(t.shape(), &[1, 64, 64]);
    }
    let first = std::fs::read(root.join("ws/manifests/train.json")).unwrap();
    ok(&args, root);
    assert_eq!(std::fs::read(root.join("ws/manifests/train.json")).unwrap(), first);
    assert!(!train.config_hash.is_empty());
}

#[test]
fn first_run_writes_full_default_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train-cae", "--out", "ws"], tmp.path());
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("ws/config.json")).unwrap()).unwrap();
    for key in ["size", "k", "runs", "seed", "cae", "dec", "descriptors", "tsne", "paths"] {
        assert!(cfg.get(key).is_some(), "config lacks {key}");
    }
    assert_eq!(cfg["k"], 25);
    assert_eq!(cfg["cae"]["filters"], serde_json::json!([32, 32, 64, 64, 64, 64]));
    assert_eq!(out.status.code(), Some(3));
    let err = error_of(&out);
    assert_eq!(err["error"], "missing_artifact");
    assert!(err["message"].as_str().unwrap().contains("train.json"));
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    let out = run(&["cluster", "--out", "ws", "--method", "cdec", "--features", "hog"], root);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "config");

    let out = run(&["cluster", "--out", "ws", "--method", "spectral"], root);
    assert_eq!(out.status.code(), Some(2));

    std::fs::create_dir_all(root.join("bad")).unwrap();
    std::fs::write(root.join("bad/x.dcm"), b"definitely not an image").unwrap();
    let stdout = ok(&["ingest", "--input-dir", "bad", "--out", "ws2"], root);
    assert!(stdout.contains("train,0") && stdout.contains("excluded,1"), "{stdout}");
    let excluded = DatasetManifest::load(&root.join("ws2/manifests/train.json")).unwrap().excluded;
    assert_eq!(excluded.len(), 1);
    let out = run(&["train-cae", "--out", "ws2"], root);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_of(&out)["message"].as_str().unwrap().contains("empty"));

    let out = run(&["ingest", "--input-dir", "absent", "--out", "ws3"], root);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_of(&out)["message"].as_str().unwrap().contains("absent"));

    std::fs::create_dir_all(root.join("ws4")).unwrap();
    std::fs::write(root.join("ws4/config.json"), "{\"k\": \"many\"}").unwrap();
    let out = run(&["embed", "--out", "ws4"], root);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["project", "--out", "ws", "--method", "kmeans", "--features", "lbp"], root);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_of(&out)["message"].as_str().unwrap().contains("assignments.csv"));
}

#[test]
fn diverging_training_is_a_numeric_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(&["fixture", "--out", "fx", "--count", "12", "--size", "16"], root);
    let cfg = r#"{"size":16,"split":"80/20","cae":{"filters":[2],"bottleneck":2,"batch_size":4,"max_epochs":5,"lr":1e306}}"#;
    std::fs::write(root.join("c.json"), cfg).unwrap();
    ok(&["ingest", "--input-dir", "fx", "--out", "ws", "--config", "c.json"], root);
    let out = run(&["train-cae", "--out", "ws"], root);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_of(&out)["error"], "non_finite");
}

#[test]
fn stage_chain_writes_documented_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    tiny_workspace(root);
    let ws = root.join("ws");

    for (method, beta) in [("cdec", 0.0), ("cidec", 1.0)] {
        let stdout = ok(&["cluster", "--out", "ws", "--method", method], root);
        assert!(stdout.starts_with("Algorithm,SS,NMI-AR,HS-AR,NMI-MOD,HS-MOD\n"));
        let ck = Checkpoint::load(&ws.join(format!("outputs/cluster/{method}_cae/model.ckpt"))).unwrap();
        assert_eq!(DecHead::from_checkpoint(&ck).unwrap().beta, beta);
    }
    ok(&["cluster", "--out", "ws", "--method", "kmeans", "--features", "pca"], root);

    let assignments = std::fs::read_to_string(ws.join("outputs/cluster/cdec_cae/assignments.csv")).unwrap();
    let mut lines = assignments.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next(), Some("id,cluster,q_max"));
    assert_eq!(lines.count(), 12);

    ok(&["project", "--out", "ws", "--method", "kmeans", "--features", "pca"], root);
    let proj = std::fs::read_to_string(ws.join("outputs/projection/kmeans_pca.csv")).unwrap();
    assert_eq!(proj.lines().nth(1), Some("id,x,y,cluster,modality,anatomical_region"));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.join("outputs/features/pca_report.json")).unwrap()).unwrap();
    assert_eq!(report["explained_variance_ratio"].as_array().unwrap().len(), 4);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.join("outputs/features/hog_train.json")).unwrap()).unwrap();
    for key in ["method", "config", "dimension", "ids", "config_hash"] {
        assert!(sidecar.get(key).is_some(), "sidecar lacks {key}");
    }
}

#[test]
fn single_run_evaluation_has_zero_variance() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    tiny_workspace(root);
    let stdout = ok(&["evaluate", "--out", "ws", "--runs", "1"], root);
    assert_eq!(stdout.lines().count(), 7);
    let var = std::fs::read_to_string(root.join("ws/outputs/evaluation/table_var.csv")).unwrap();
    let rows: Vec<&str> = var.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        for cell in row.split(',').skip(1) {
            assert_eq!(cell.parse::<f64>().unwrap(), 0.0, "{row}");
        }
    }
}

#[test]
fn changed_config_warns_about_stale_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_pgms(&root.join("in"), 10);
    std::fs::write(root.join("tiny.json"), TINY).unwrap();
    ok(&["ingest", "--input-dir", "in", "--out", "ws", "--config", "tiny.json"], root);
    let out = run(&["features", "--out", "ws"], root);
    assert!(out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).contains("config hash"));

    let path = root.join("ws/config.json");
    let text = std::fs::read_to_string(&path).unwrap().replacen("\"runs\": 1", "\"runs\": 2", 1);
    std::fs::write(&path, text).unwrap();
    let out = run(&["features", "--out", "ws"], root);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("was produced under config hash"), "{stderr}");
}
