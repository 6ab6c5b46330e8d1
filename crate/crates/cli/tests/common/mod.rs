#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pixmix::{save_png, ImageTensor, RngStream};
use sha2::{Digest, Sha256};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pixmix"))
}

/// Runs the CLI with `args`, ignoring any inherited seed variable.
pub fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env_remove("PIXMIX_SEED")
        .output()
        .expect("spawn pixmix")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "pixmix {args:?} exited {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Relative path -> SHA-256 for every file under `root`.
pub fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, hex::encode(Sha256::digest(fs::read(&path).unwrap())));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn noise_image(size: usize, stream: &mut RngStream) -> ImageTensor {
    ImageTensor::from_fn(size, size, |_, _, _| stream.next_uniform() as f32).unwrap()
}

/// `count` noise PNGs in two subdirectories.
pub fn write_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> Vec<PathBuf> {
    let root = RngStream::new(seed);
    (0..count)
        .map(|i| {
            let sub = if i % 2 == 0 { "a" } else { "b" };
            let path = dir.join(sub).join(format!("img_{i:04}.png"));
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            save_png(&noise_image(size, &mut root.split(i)), &path).unwrap();
            path
        })
        .collect()
}
