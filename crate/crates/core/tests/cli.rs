use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regex::Regex;
use tempfile::TempDir;

use evobc_core::catalog::{read_manifest, write_manifest, GlyphRecord, Manifest, RunMetadata};
use evobc_core::{Era, SourceKind};

fn evobc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evobc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// One 3x3 page, all columns with headers.
fn small_corpus(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(
        &spec,
        r#"{"columns": 3, "glyphs_per_column": [3, 3], "header_pattern": [true, true, true], "seed": 2}"#,
    )
    .unwrap();
    let corpus = dir.join("corpus");
    let o = evobc(&[
        "synth",
        "--out",
        &s(&corpus),
        "--spec",
        &s(&spec),
        "--pages",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    corpus
}

fn run_pipeline(corpus: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "pipeline".to_string(),
        "--input".into(),
        s(&corpus.join("pages")),
        "--templates".into(),
        s(&corpus.join("templates")),
        "--out".into(),
        s(out),
        "--era".into(),
        "OBC".into(),
    ];
    args.extend(extra.iter().map(|a| a.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    evobc(&refs)
}

#[test]
fn clean_page_gives_nine_records() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(dir.path());
    let out = dir.path().join("out");
    let o = run_pipeline(&corpus, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let printed = String::from_utf8_lossy(&o.stdout);
    assert_eq!(printed.trim(), s(&out.join("manifest.json")));

    let m = read_manifest(&out.join("manifest.json")).unwrap();
    assert_eq!(m.records.len(), 9);
    let line = Regex::new(
        r"(?m)^page=page_0000\.png status=ok slices=3 quarantined=0 patches=9 fallback=false$",
    )
    .unwrap();
    assert!(line.is_match(&stderr(&o)), "{}", stderr(&o));
    assert!(stderr(&o).contains("summary pages=1 failed=0 slices=3 quarantined=0 records=9"));

    let v = evobc(&["validate", &s(&out.join("manifest.json"))]);
    assert_eq!(v.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);

    let e = evobc(&[
        "eval",
        "--truth",
        &s(&corpus.join("truth")),
        "--manifest",
        &s(&out.join("manifest.json")),
    ]);
    assert!(e.status.success());
    let scores: serde_json::Value = serde_json::from_slice(&e.stdout).unwrap();
    for k in ["recall", "precision", "label_accuracy"] {
        assert_eq!(scores["total"][k], 1.0, "{k}");
    }
    assert_eq!(scores["total"]["slice_count_match"], true);

    // a missing image is a violation
    let first = &m.records[0].relative_path;
    std::fs::remove_file(out.join(first)).unwrap();
    let v = evobc(&["validate", &s(&out.join("manifest.json"))]);
    assert_eq!(v.status.code(), Some(1));
}

#[test]
fn second_run_appends_with_fresh_ids() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(dir.path());
    let out = dir.path().join("out");
    assert!(run_pipeline(&corpus, &out, &[]).status.success());
    assert!(run_pipeline(&corpus, &out, &[]).status.success());
    let m = read_manifest(&out.join("manifest.json")).unwrap();
    assert_eq!(m.records.len(), 18);
    let mut ids: Vec<u64> = m.records.iter().map(|r| r.id).collect();
    ids.sort();
    assert_eq!(ids, (0..18).collect::<Vec<_>>());
}

#[test]
fn empty_input_is_nothing_to_do() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty");
    std::fs::create_dir(&input).unwrap();
    let templates = small_corpus(dir.path()).join("templates");
    let out = dir.path().join("out");
    let o = evobc(&[
        "pipeline",
        "--input",
        &s(&input),
        "--templates",
        &s(&templates),
        "--out",
        &s(&out),
        "--era",
        "BI",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("nothing to do"));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn invalid_era_fails_before_processing() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(dir.path());
    let out = dir.path().join("out");
    let o = evobc(&[
        "pipeline",
        "--input",
        &s(&corpus.join("pages")),
        "--templates",
        &s(&corpus.join("templates")),
        "--out",
        &s(&out),
        "--era",
        "Jade",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("unknown era token \"Jade\""),
        "{}",
        stderr(&o)
    );
    assert!(!out.exists());

    let o = evobc(&[
        "pipeline",
        "--input",
        &s(&corpus.join("pages")),
        "--out",
        &s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(dir.path());
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.json");
    let json = serde_json::json!({
        "input": corpus.join("pages"),
        "templates": corpus.join("templates"),
        "out": out,
        "era": "BI",
        "book": "Test Book",
        "jobs": 2,
    });
    std::fs::write(&cfg, json.to_string()).unwrap();
    let o = evobc(&[
        "pipeline",
        "--config",
        &s(&cfg),
        "--era",
        "Seal",
        "--debug-traces",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read_manifest(&out.join("manifest.json")).unwrap();
    assert!(m
        .records
        .iter()
        .all(|r| r.relative_path.starts_with("Book_Seal/")));
    assert_eq!(m.run_metadata.imnnb.unwrap().tau, 150);
    assert_eq!(
        m.run_metadata.layout_sha256.as_ref().map(String::len),
        Some(64)
    );
    let traces = std::fs::read_dir(out.join("traces")).unwrap().count();
    assert_eq!(traces, 3);

    std::fs::write(&cfg, r#"{"era": "BI", "unknown_key": 1}"#).unwrap();
    let o = evobc(&["pipeline", "--config", &s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreadable_pages_are_skipped() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(dir.path());
    std::fs::write(corpus.join("pages/broken.png"), b"not a png").unwrap();
    let out = dir.path().join("out");
    let o = run_pipeline(&corpus, &out, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("page=broken.png status=error reason="));
    assert_eq!(
        read_manifest(&out.join("manifest.json"))
            .unwrap()
            .records
            .len(),
        9
    );

    let only_bad = dir.path().join("bad");
    std::fs::create_dir_all(only_bad.join("pages")).unwrap();
    std::fs::write(only_bad.join("pages/x.png"), b"junk").unwrap();
    let out2 = dir.path().join("out2");
    let o = evobc(&[
        "pipeline",
        "--input",
        &s(&only_bad.join("pages")),
        "--templates",
        &s(&corpus.join("templates")),
        "--out",
        &s(&out2),
        "--era",
        "OBC",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out2.join("manifest.json").exists());
}

#[cfg(unix)]
#[test]
fn external_recognizer() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(dir.path());
    let script = dir.path().join("ocr.sh");
    std::fs::write(
        &script,
        "#!/bin/sh\ntest -f \"$1\" || exit 3\nprintf '0042 馬\\n0.9\\n'\n",
    )
    .unwrap();
    let table = dir.path().join("table.tsv");
    std::fs::write(&table, "# traditional\tsimplified\n馬\t马\n").unwrap();
    let out = dir.path().join("out");
    let o = evobc(&[
        "pipeline",
        "--input",
        &s(&corpus.join("pages")),
        "--out",
        &s(&out),
        "--era",
        "CS",
        "--ocr",
        "external",
        "--ocr-command",
        &format!("sh {}", s(&script)),
        "--table",
        &s(&table),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read_manifest(&out.join("manifest.json")).unwrap();
    assert_eq!(m.records.len(), 9);
    assert!(m.records.iter().all(|r| r.category == "马"));
    assert!(m.records[0]
        .relative_path
        .starts_with("Book_Clerical/马/Book_Clerical_"));
}

#[test]
fn split_ten_records_nine_to_one() {
    let dir = TempDir::new().unwrap();
    let records = (0..10)
        .map(|i| GlyphRecord::new("甲", Era::Obc, SourceKind::Website, i, 8, 8, None).unwrap())
        .collect();
    let path = dir.path().join("manifest.json");
    write_manifest(&Manifest::new(records, RunMetadata::now()), &path).unwrap();
    let o = evobc(&["split", &s(&path), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let train = read_manifest(&dir.path().join("train.json")).unwrap();
    let val = read_manifest(&dir.path().join("val.json")).unwrap();
    assert_eq!((train.records.len(), val.records.len()), (9, 1));

    let again = dir.path().join("again");
    evobc(&["split", &s(&path), "--seed", "3", "--out", &s(&again)]);
    assert_eq!(
        std::fs::read(again.join("val.json")).unwrap().len(),
        std::fs::read(dir.path().join("val.json")).unwrap().len()
    );
    assert_eq!(
        read_manifest(&again.join("val.json")).unwrap().records,
        val.records
    );
}

#[test]
fn synth_rejects_infeasible_spec() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"glyphs_per_column": [2, 30]}"#).unwrap();
    let o = evobc(&[
        "synth",
        "--out",
        &s(&dir.path().join("c")),
        "--spec",
        &s(&spec),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("infeasible page spec"));
    assert!(!dir.path().join("c/pages").exists());
}
