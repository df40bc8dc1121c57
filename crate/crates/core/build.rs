//! Embeds `git describe` output, when available, as the build identifier.

use std::process::Command;

fn main() {
    println!("cargo:rerun-if-changed=../../.git/HEAD");
    println!("cargo:rerun-if-changed=../../.git/refs");
    let out = Command::new("git").args(["describe", "--always", "--tags"]).output();
    if let Ok(o) = out {
        if o.status.success() {
            let id = String::from_utf8_lossy(&o.stdout).trim().to_string();
            println!("cargo:rustc-env=ASFL_GIT_DESCRIBE={id}");
        }
    }
}
