#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn deid<P: AsRef<Path>>(cwd: P, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deid"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("spawn deid")
}

/// Runs `deid` and panics with its stderr on a nonzero exit.
pub fn deid_ok<P: AsRef<Path>>(cwd: P, args: &[&str]) -> Output {
    let out = deid(cwd, args);
    assert!(
        out.status.success(),
        "deid {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Model settings small enough for CLI tests to train in seconds.
pub const TINY_CONFIG: &str = "\
model.char_dim = 4
model.char_hidden = 4
model.token_dim = 8
model.label_hidden = 8
model.ff_hidden = 8
train.dropout = 0
train.learning_rate = 0.05
";

/// `(name, rows, cols)` of every array in a checkpoint header, plus the
/// number of payload bytes after the header.
pub fn checkpoint_arrays(bytes: &[u8]) -> (Vec<(String, usize, usize)>, usize) {
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .expect("header terminator")
        + 5;
    let header = std::str::from_utf8(&bytes[..end]).expect("utf-8 header");
    let arrays = header
        .lines()
        .filter_map(|l| l.strip_prefix("array\t"))
        .map(|rest| {
            let f: Vec<&str> = rest.split('\t').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    (arrays, bytes.len() - end)
}

/// Total number of serialized parameters, checked against the payload size.
pub fn serialized_parameter_count(bytes: &[u8]) -> usize {
    let (arrays, payload) = checkpoint_arrays(bytes);
    let n: usize = arrays.iter().map(|(_, r, c)| r * c).sum();
    assert_eq!(n * 8, payload, "payload size disagrees with header shapes");
    n
}

/// Label column of a token file, one vector per sequence.
pub fn token_file_labels(text: &str) -> Vec<Vec<String>> {
    let mut seqs = vec![Vec::new()];
    for line in text.lines() {
        if line.starts_with('#') {
            continue;
        }
        if line.trim().is_empty() {
            if !seqs.last().unwrap().is_empty() {
                seqs.push(Vec::new());
            }
            continue;
        }
        seqs.last_mut().unwrap().push(line.rsplit('\t').next().unwrap().to_string());
    }
    if seqs.last().unwrap().is_empty() {
        seqs.pop();
    }
    seqs
}
