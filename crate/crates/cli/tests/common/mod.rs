#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use siteinspect::fixtures::{planted, FixturePaths};
use tempfile::TempDir;

pub const ARMS: [&str; 3] = ["no-rag", "image", "image-audio"];

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/image-audio")
}

pub fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_siteinspect"))
        .args(args)
        .env_remove("SITEINSPECT_LOG")
        .output()
        .expect("spawning siteinspect")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub struct Workspace {
    pub dir: TempDir,
    pub fx: FixturePaths,
    pub index: PathBuf,
}

impl Workspace {
    /// Planted fixtures plus a built index.
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fx = planted().write_to(&dir.path().join("fx")).unwrap();
        let index = dir.path().join("corpus.ssix");
        let o = run([
            "index".as_ref(),
            "--corpus".as_ref(),
            fx.corpus.as_os_str(),
            "--out".as_ref(),
            index.as_os_str(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        Self { dir, fx, index }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Runs `inspect` for `mode` into `out`.
    pub fn inspect(&self, mode: &str, out: &Path, extra: &[&str]) -> Output {
        let mut args: Vec<std::ffi::OsString> = vec![
            "inspect".into(),
            "--mode".into(),
            mode.into(),
            "--images".into(),
            self.fx.images.clone().into(),
            "--audio".into(),
            self.fx.audio.clone().into(),
            "--index".into(),
            self.index.clone().into(),
            "--corpus".into(),
            self.fx.corpus.clone().into(),
            "--output".into(),
            out.into(),
        ];
        args.extend(extra.iter().map(Into::into));
        run(args)
    }

    pub fn eval(&self, reports: &Path, out: &Path, averaging: &str) -> Output {
        run([
            "eval".as_ref(),
            "--reports".as_ref(),
            reports.as_os_str(),
            "--gt".as_ref(),
            self.fx.ground_truth.as_os_str(),
            "--averaging".as_ref(),
            averaging.as_ref(),
            "--out".as_ref(),
            out.as_os_str(),
        ])
    }
}

/// Manifest JSON with the run-varying `timing` object removed.
pub fn manifest_without_timing(dir: &Path) -> serde_json::Value {
    let bytes = std::fs::read(dir.join("manifest.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

/// Every file in `dir` except the manifest, sorted by name.
pub fn report_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// Compares `<id>.report.json` files in `dir` against the goldens; with
/// `UPDATE_GOLDEN=1` rewrites the goldens instead.
pub fn check_goldens(dir: &Path) -> Result<usize, String> {
    let golden = golden_dir();
    let reports: Vec<_> = report_files(dir)
        .into_iter()
        .filter(|(n, _)| n.ends_with(".report.json"))
        .collect();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(&golden).unwrap();
        for (name, bytes) in &reports {
            std::fs::write(golden.join(name), bytes).unwrap();
        }
        return Ok(reports.len());
    }
    let mut expected = 0;
    for e in std::fs::read_dir(&golden).map_err(|e| format!("{}: {e}", golden.display()))? {
        let p = e.unwrap().path();
        if p.to_string_lossy().ends_with(".report.json") {
            expected += 1;
        }
    }
    if expected != reports.len() {
        return Err(format!("{} reports, {expected} goldens", reports.len()));
    }
    for (name, bytes) in &reports {
        let want = std::fs::read(golden.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if &want != bytes {
            return Err(format!("{name} differs from golden"));
        }
    }
    Ok(reports.len())
}
