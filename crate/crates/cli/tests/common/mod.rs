#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

pub fn waterfall(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waterfall"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A scratch directory holding a trained toy model with |V| = 1024.
pub struct Fixture {
    pub dir: TempDir,
    pub model: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().expect("temp dir");
        let model = dir.path().join("model.json");
        let out = waterfall(&["train", "--vocab-size", "1024", "-o", s(&model)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        Self { dir, model }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Writes `count` short text records and returns the path.
    pub fn sources(&self, name: &str, count: usize) -> PathBuf {
        let path = self.path(name);
        let lines: String = (0..count)
            .map(|i| format!("{{\"id\":\"r{i}\",\"text\":\"the garden was quiet in the morning .\"}}\n"))
            .collect();
        std::fs::write(&path, lines).expect("write sources");
        path
    }

    /// Watermarks `input` with long generations and returns (output, manifest).
    pub fn watermark(&self, input: &Path, tag: &str, mu: &str, kappa: &str, seed: &str) -> (PathBuf, PathBuf) {
        let output = self.path(&format!("{tag}.jsonl"));
        let manifest = self.path(&format!("{tag}.manifest.json"));
        let out = waterfall(&[
            "watermark",
            "-i",
            s(input),
            "-o",
            s(&output),
            "--manifest",
            s(&manifest),
            "--model",
            s(&self.model),
            "--mu",
            mu,
            "--kappa",
            kappa,
            "--max-tokens",
            "200",
            "--ignore-eos",
            "--seed",
            seed,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (output, manifest)
    }
}

pub fn json_lines(text: &str) -> Vec<serde_json::Value> {
    text.lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}
