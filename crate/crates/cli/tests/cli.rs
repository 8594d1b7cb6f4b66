mod common;

use common::{manifest_without_timing, run, stderr, stdout, Workspace};
use sha2::{Digest, Sha256};

fn sha(path: &std::path::Path) -> String {
    hex(&Sha256::digest(std::fs::read(path).unwrap()))
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

#[test]
fn index_is_reproducible_and_reports_fingerprint() {
    let ws = Workspace::new();
    let again = ws.path("again.ssix");
    let o = run([
        "index",
        "--corpus",
        ws.fx.corpus.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(
        stdout(&o).starts_with("indexed 12 pages, 768 patches"),
        "{}",
        stdout(&o)
    );
    assert!(stdout(&o).contains("fingerprint "));
    assert_eq!(sha(&ws.index), sha(&again));
}

#[test]
fn index_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = dir.path().join("x.ssix");
    let o = run([
        "index",
        "--corpus",
        empty.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no pages found"), "{}", stderr(&o));

    let o = run([
        "index",
        "--corpus",
        "/nonexistent/corpus",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(["index", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn match_writes_golden_pairs() {
    let ws = Workspace::new();
    let out = ws.path("m/matches.json");
    let o = run([
        "match",
        "--images",
        ws.fx.images.to_str().unwrap(),
        "--audio",
        ws.fx.audio.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("25 pairs, 0 unmatched images, 3 unmatched audio"));
    assert!(stdout(&o).contains("unmatched audio rec26 (below-location-threshold)"));

    let golden = common::golden_dir().parent().unwrap().join("matches.json");
    let got = std::fs::read(&out).unwrap();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &got).unwrap();
    }
    assert_eq!(
        got,
        std::fs::read(&golden).unwrap(),
        "matches.json differs from golden"
    );
}

#[test]
fn match_rejects_bad_input() {
    let ws = Workspace::new();
    let out = ws.path("matches.json");
    let images = ws.fx.images.to_str().unwrap();
    let o = run([
        "match",
        "--images",
        images,
        "--audio",
        "/nonexistent",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run([
        "match",
        "--images",
        images,
        "--audio",
        ws.fx.audio.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--location-threshold",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn inspect_partial_failure_exits_one() {
    let ws = Workspace::new();
    std::fs::write(ws.fx.images.join("site07.png"), b"not a png").unwrap();
    let out = ws.path("partial");
    let o = ws.inspect("image-audio", &out, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(
        stdout(&o).starts_with("partial: 24 reports from 25 images"),
        "{}",
        stdout(&o)
    );
    let m = manifest_without_timing(&out);
    assert_eq!(m["status"], "partial");
    let failed: Vec<_> = m["items"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|i| i["outcome"] == "failed")
        .collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["id"], "site07");
    assert!(!out.join("site07.report.json").exists());
    // Other items are unaffected by the failure.
    let golden = common::golden_dir();
    for id in ["site01", "site06", "site08", "site25"] {
        let name = format!("{id}.report.json");
        assert_eq!(
            std::fs::read(out.join(&name)).unwrap(),
            std::fs::read(golden.join(&name)).unwrap(),
            "{id}"
        );
    }
}

#[test]
fn inspect_config_errors_exit_two() {
    let ws = Workspace::new();
    let out = ws.path("out");
    // Retrieval modes need an index.
    let o = ws.inspect("image", &out, &["--index", "/nonexistent.ssix"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = ws.inspect("image", &out, &["--k", "0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run([
        "inspect",
        "--mode",
        "image-audio",
        "--images",
        ws.fx.images.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = ws.inspect("rag", &out, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_drives_inspect() {
    let ws = Workspace::new();
    let cfg = ws.path("run.toml");
    std::fs::write(
        &cfg,
        r#"parallelism = 2
[providers]
default = "stub"
[retrieval]
k = 3
mode = "image"
[paths]
index = "corpus.ssix"
images = "fx/images"
corpus = "fx/corpus"
output = "cfg-out"
"#,
    )
    .unwrap();
    let o = run(["--config", cfg.to_str().unwrap(), "inspect"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest_without_timing(&ws.path("cfg-out"));
    assert_eq!(m["mode"], "image");
    assert_eq!(m["config_snapshot"]["k"], 3);
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.path("cfg-out/site01.report.json")).unwrap())
            .unwrap();
    assert_eq!(r["evidence"].as_array().unwrap().len(), 3);

    // Flags win over the file.
    let o = run([
        "--config",
        cfg.to_str().unwrap(),
        "inspect",
        "--k",
        "2",
        "--output",
        ws.path("flag-out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        manifest_without_timing(&ws.path("flag-out"))["config_snapshot"]["k"],
        2
    );

    std::fs::write(&cfg, "[retrieval]\ntop_k = 3\n").unwrap();
    let o = run(["--config", cfg.to_str().unwrap(), "inspect"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("top_k"), "{}", stderr(&o));

    std::fs::write(
        &cfg,
        "[providers]\ngenerate = { endpoint_url = \"https://example.invalid\", api_key_ref = \"SITEINSPECT_CLI_TEST_UNSET\", model_id = \"g\" }\n",
    )
    .unwrap();
    let o = run([
        "--config",
        cfg.to_str().unwrap(),
        "inspect",
        "--images",
        ws.fx.images.to_str().unwrap(),
        "--mode",
        "no-rag",
        "--output",
        ws.path("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("SITEINSPECT_CLI_TEST_UNSET"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn eval_and_compare() {
    let ws = Workspace::new();
    let (img, both) = (ws.path("image"), ws.path("image-audio"));
    assert_eq!(ws.inspect("image", &img, &[]).status.code(), Some(0));
    assert_eq!(ws.inspect("image-audio", &both, &[]).status.code(), Some(0));
    let (ma, mb, mm) = (ws.path("a.json"), ws.path("b.json"), ws.path("micro.json"));
    let o = ws.eval(&img, &ma, "sample");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("averaging: sample  reports: 25  universe_size: 12"));
    assert_eq!(ws.eval(&both, &mb, "sample").status.code(), Some(0));
    assert_eq!(ws.eval(&both, &mm, "micro").status.code(), Some(0));

    let o = run(["compare", ma.to_str().unwrap(), mb.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("metric"), "{text}");
    assert_eq!(text.lines().count(), 6);

    let o = run(["compare", ma.to_str().unwrap(), mm.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("sample") && err.contains("micro"), "{err}");

    // A missing report is a key mismatch.
    std::fs::remove_file(img.join("site03.report.json")).unwrap();
    std::fs::remove_file(img.join("site03.report.txt")).unwrap();
    let o = ws.eval(&img, &ws.path("c.json"), "sample");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("site03"), "{}", stderr(&o));
}

#[test]
fn eval_reads_plain_text_reports() {
    let ws = Workspace::new();
    let dir = ws.path("txt");
    std::fs::create_dir(&dir).unwrap();
    let fx = siteinspect::fixtures::planted();
    for s in &fx.sites {
        let pages: Vec<String> = s.gt_pages.iter().map(|p| format!("page {p}")).collect();
        std::fs::write(
            dir.join(format!("{}.report.txt", s.image_id)),
            format!("See {}.", pages.join(" and ")),
        )
        .unwrap();
    }
    let out = ws.path("m.json");
    let o = ws.eval(&dir, &out, "sample");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(m["hamming_loss"], 0.0);
    assert_eq!(m["f1"], 1.0);
}
