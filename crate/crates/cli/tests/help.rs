mod common;

use std::fs;
use std::path::PathBuf;

use common::*;

const COMMANDS: [&str; 9] = ["", "train", "watermark", "verify", "extract", "scan", "attack", "eval", "calibrate"];

fn golden(name: &str) -> PathBuf {
    let file = if name.is_empty() { "waterfall" } else { name };
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{file}.txt"))
}

#[test]
fn help_matches_golden() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for cmd in COMMANDS {
        let args: Vec<&str> = if cmd.is_empty() { vec!["--help"] } else { vec![cmd, "--help"] };
        let out = waterfall(&args);
        assert_eq!(code(&out), 0, "{cmd}");
        let text = stdout(&out);
        if update {
            fs::write(golden(cmd), &text).unwrap();
        } else {
            let expected = fs::read_to_string(golden(cmd)).unwrap();
            assert_eq!(text, expected, "help for {cmd:?} changed; rerun with UPDATE_GOLDEN=1");
        }
    }
}

#[test]
fn help_lists_exit_codes() {
    let text = stdout(&waterfall(&["--help"]));
    for code in ["64", "65", "69", "70", "74"] {
        assert!(text.contains(code), "{code}");
    }
}
