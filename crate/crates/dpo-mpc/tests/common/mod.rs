#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A two-mode scalar plant, one unstable mode, that synthesizes in well under a second.
pub const SCALAR_TOML: &str = r#"
[model]
kind = "matrices"
a = [[[[0.9]]], [[[1.2]]]]
b = [[[[1.0]]], [[[0.5]]]]
transition = [[0.7, 0.3], [0.4, 0.6]]
plant_membership = { kind = "single" }

[weights]
state = [[1.0]]
input = [[0.1]]

[constraints]
u_bound = [2.0]
x_bound = [3.0]
phi = [[1.0]]

[simulation]
x0 = [1.5]
horizon = 20
runs = 8
seed = 3
"#;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpo-mpc"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
