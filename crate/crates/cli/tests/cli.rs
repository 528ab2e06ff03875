//! Drives the binary end to end with the offline backends.

use std::path::Path;
use std::process::{Command, Output};

use datasetagent::pipeline::synth::{write_class_dir_dataset, write_corpus, CorpusPlan};

const BIN: &str = env!("CARGO_BIN_EXE_datasetagent");
const DEMAND: &str = "Build an image classification dataset with 10 images per class: cat, dog, fox";

fn cli(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("DATASETAGENT_TEXT_ENDPOINT")
        .env_remove("DATASETAGENT_MM_ENDPOINT")
        .env_remove("DATASETAGENT_GROUND_ENDPOINT")
        .env_remove("DATASETAGENT_SEG_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn corpus(dir: &Path, per_class: usize) -> std::path::PathBuf {
    let src = dir.join("corpus");
    write_corpus(&src, &CorpusPlan::new(&["cat", "dog", "fox"], per_class, 5)).unwrap();
    src
}

/// The image count from the summary line.
fn summary_count(out: &str) -> u64 {
    let line = out.lines().find(|l| l.starts_with("DatasetAgent: successfully")).expect("summary line");
    let tail = line.split(" with ").nth(1).unwrap();
    tail.split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn build_from_demand_emits_dataset_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus(dir.path(), 20);
    let ws = dir.path().join("ws");
    let o = cli(&["--demand", DEMAND, "--corpus", s(&src), "--workspace", s(&ws), "--mock-backends", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("DatasetAgent: successfully built"), "{out}");
    assert_eq!(summary_count(&out), 30);
    for f in ["report.json", "report.txt", "classes.txt", "metadata.jsonl", "manifest.tsv"] {
        assert!(ws.join("out").join(f).is_file(), "{f}");
    }
}

#[test]
fn same_seed_gives_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus(dir.path(), 8);
    let demand = "Build an image classification dataset with 4 images per class: cat, dog, fox";
    let mut manifests = Vec::new();
    for ws in ["a", "b"] {
        let ws = dir.path().join(ws);
        let o = cli(&["--demand", demand, "--corpus", s(&src), "--workspace", s(&ws), "--mock-backends", "--seed", "9"]);
        assert!(o.status.success());
        manifests.push(std::fs::read(ws.join("out/manifest.tsv")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn missing_classes_asks_for_clarification() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus(dir.path(), 2);
    let ws = dir.path().join("ws");
    let demand = "Build an image classification dataset with 10 images per class";
    let o = cli(&["--demand", demand, "--corpus", s(&src), "--workspace", s(&ws), "--mock-backends"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("classes"));
    assert!(!ws.join("run.json").exists());

    let o = cli(&["--demand", demand, "--answer", "classes=cat, dog", "--corpus", s(&src), "--workspace", s(&ws), "--mock-backends"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unreachable_backend_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus(dir.path(), 2);
    let o = cli(&["--demand", DEMAND, "--corpus", s(&src), "--workspace", s(&dir.path().join("ws"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&["--task", "explode"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}

#[test]
fn expand_reports_added_images() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("toy");
    write_class_dir_dataset(&root, &["cat", "dog"], 3, (32, 32)).unwrap();
    let src = corpus(dir.path(), 5);
    let ws = dir.path().join("ws");
    let demand = "Expand this image dataset, add 4 images per class";
    let o = cli(&["--task", "expand", "--demand", demand, "--root", s(&root), "--corpus", s(&src), "--workspace", s(&ws), "--mock-backends"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("successfully expanded toy"), "{out}");
    let added = summary_count(&out);
    let new_files = ["cat", "dog"].iter().map(|c| std::fs::read_dir(ws.join("out").join(c)).map(|d| d.count()).unwrap_or(0)).sum::<usize>();
    assert_eq!(added, new_files as u64);
    assert_eq!(added, 8);
}

#[test]
fn expand_with_empty_corpus_adds_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("toy");
    write_class_dir_dataset(&root, &["cat", "dog"], 3, (32, 32)).unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let ws = dir.path().join("ws");
    let o = cli(&["--task", "expand", "--demand", "Expand this image dataset, add 4 images per class", "--root", s(&root), "--corpus", s(&empty), "--workspace", s(&ws), "--mock-backends"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary_count(&stdout(&o)), 0);
}

#[test]
fn expand_of_unrecognized_root_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("junk");
    let src = corpus(dir.path(), 2);
    // loose images with no class folders or label files
    std::fs::create_dir_all(&root).unwrap();
    std::fs::copy(src.join("cat/cat_0000.png"), root.join("a.png")).unwrap();
    let o = cli(&["--task", "expand", "--demand", "Expand this image dataset, add 4 images per class: cat", "--root", s(&root), "--corpus", s(&src), "--workspace", s(&dir.path().join("ws")), "--mock-backends"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("layout"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn metrics_prints_the_column_table() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("toy");
    write_class_dir_dataset(&root, &["cat", "dog"], 3, (24, 24)).unwrap();
    let o = cli(&["--task", "metrics", "--root", s(&root)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    for col in ["CBI", "SSIM", "ALR", "DSE", "SDI", "DDC"] {
        assert!(out.contains(col), "{col} missing from\n{out}");
    }
}

#[test]
fn resume_of_finished_run_is_a_no_op_and_unknown_run_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus(dir.path(), 6);
    let ws = dir.path().join("ws");
    let demand = "Build an image classification dataset with 3 images per class: cat, dog, fox";
    assert!(cli(&["--demand", demand, "--corpus", s(&src), "--workspace", s(&ws), "--mock-backends"]).status.success());
    let before = std::fs::read(ws.join("out/manifest.tsv")).unwrap();
    let o = cli(&["--task", "resume", "--workspace", s(&ws), "--mock-backends"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary_count(&stdout(&o)), 9);
    assert_eq!(std::fs::read(ws.join("out/manifest.tsv")).unwrap(), before);

    let o = cli(&["--task", "resume", "--workspace", s(&ws), "--run-id", "nope", "--mock-backends"]);
    assert_eq!(o.status.code(), Some(3));
}
