//! Writes a two-class synthetic digit set as IDX files.
//!
//! `cargo run --example synthetic_digits -- <dir> [train] [test] [seed]`

use std::path::PathBuf;

use rbmlearn::harness::{synthetic_digits, write_idx_images, write_idx_labels};

fn main() -> rbmlearn::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "digits".into()));
    let mut num = |default: usize| args.next().map_or(default, |a| a.parse().expect("count must be an integer"));
    let (train, test) = (num(2000), num(500));
    let seed = num(8) as u64;
    std::fs::create_dir_all(&dir)?;
    let (images, labels) = synthetic_digits(train + test, 28, seed);
    let (tr, te): (Vec<usize>, Vec<usize>) = ((0..train).collect(), (train..train + test).collect());
    write_idx_images(&dir.join("train-images-idx3-ubyte"), &images.select(&tr))?;
    write_idx_labels(&dir.join("train-labels-idx1-ubyte"), &labels[..train])?;
    write_idx_images(&dir.join("t10k-images-idx3-ubyte"), &images.select(&te))?;
    write_idx_labels(&dir.join("t10k-labels-idx1-ubyte"), &labels[train..])?;
    println!("wrote {train} training and {test} test images to {}", dir.display());
    Ok(())
}
