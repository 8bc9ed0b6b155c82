//! Writes the two-class stripe dataset used by the smoke config.
//!
//! Usage: `synthetic <out_dir> [seed]`

use std::path::PathBuf;

use ctscan::synthetic::{write_synthetic_dataset, SyntheticSpec};

fn main() {
    let mut args = std::env::args().skip(1);
    let Some(root) = args.next().map(PathBuf::from) else {
        eprintln!("usage: synthetic <out_dir> [seed]");
        std::process::exit(2);
    };
    let seed = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);
    let spec = SyntheticSpec {
        seed,
        ..Default::default()
    };
    if let Err(e) = write_synthetic_dataset(&root, &spec, &Default::default()) {
        eprintln!("synthetic: {e}");
        std::process::exit(e.family().exit_code());
    }
    println!("wrote {}", root.display());
}
