#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsmooth::data::{encode_cifar10, encode_idx};

pub const SIDE: usize = 6;

/// Ten-class IDX fixture: class `c` lights a 2×2 block at a class-specific
/// spot on a noisy 6×6 canvas.
fn idx_split(n: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
    let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 10) as u8;
        let (by, bx) = ((label as usize / 3) % 3 * 2, label as usize % 3 * 2);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let lit = (by..by + 2).contains(&y) && (bx..bx + 2).contains(&x);
                let extra = label == 9 && y == SIDE - 1;
                let base: u8 = if lit || extra { 200 } else { 20 };
                pixels.push(base.saturating_add(rng.gen_range(0..40)));
            }
        }
        labels.push(label);
    }
    encode_idx(&pixels, &labels, SIDE, SIDE)
}

/// Writes uncompressed train/test IDX files with the standard names.
pub fn write_idx_fixture(dir: &Path, n_train: usize, n_test: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (n, images, labels) in [
        (n_train, "train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        (n_test, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ] {
        let (img, lab) = idx_split(n, &mut rng);
        std::fs::write(dir.join(images), img).unwrap();
        std::fs::write(dir.join(labels), lab).unwrap();
    }
}

/// Writes a small CIFAR-10 style batch layout (`data_batch_1..5`, `test_batch`).
pub fn write_cifar_fixture(dir: &Path, per_file: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let names: Vec<String> = (1..=5)
        .map(|i| format!("data_batch_{i}.bin"))
        .chain(["test_batch.bin".to_string()])
        .collect();
    for name in names {
        let records: Vec<(u8, Vec<u8>)> = (0..per_file)
            .map(|i| {
                let label = (i % 10) as u8;
                let pixels = (0..3072)
                    .map(|p| {
                        if p / 1024 == label as usize % 3 {
                            180
                        } else {
                            rng.gen_range(0..60)
                        }
                    })
                    .collect();
                (label, pixels)
            })
            .collect();
        std::fs::write(dir.join(name), encode_cifar10(&records)).unwrap();
    }
}

pub fn toml_path(p: &Path) -> String {
    p.display().to_string().replace('\\', "/")
}

/// A small experiment config over an IDX fixture in `dir`.
pub fn idx_config(dir: &Path, epochs: usize, regularizer: &str) -> String {
    format!(
        r#"epochs = {epochs}
batch_size = 32
trials = 2
base_seed = 11

[dataset]
kind = "fashion_mnist"
dir = "{}"

[model]
hidden = [16]

[optimizer]
kind = "sgd"
weight_decay = 0.001

{regularizer}
"#,
        toml_path(dir)
    )
}

pub const LAPLACE: &str = r#"[regularizer]
kind = "smoothing"
[regularizer.schedule]
kind = "laplace"
b = 0.3
"#;

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}
