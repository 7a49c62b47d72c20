//! Writes a synthetic low-rank rating set as MatrixMarket train/test files.
//!
//! cargo run --example synthetic_dataset -- OUT_DIR [USERS MOVIES K_TRUE DENSITY NOISE_SD SEED]

use bpmf::data::{generate_synthetic, split_stream, split_train_test, synthetic_stream, write_matrix_market};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("synthetic"));
    let num = |i: usize, d: f64| args.get(i).map(|s| s.parse::<f64>()).transpose().map(|v| v.unwrap_or(d));
    let (m, n, k_true) = (num(1, 200.0)? as usize, num(2, 150.0)? as usize, num(3, 8.0)? as usize);
    let (density, noise_sd, seed) = (num(4, 0.2)?, num(5, 0.1)?, num(6, 0.0)? as u64);

    let data = generate_synthetic(m, n, k_true, density, noise_sd, &mut synthetic_stream(seed));
    let (train, test) = split_train_test(&data.triplets, 0.2, &mut split_stream(seed));
    fs::create_dir_all(&out)?;
    write_matrix_market(BufWriter::new(File::create(out.join("train.mm"))?), m, n, &train)?;
    write_matrix_market(BufWriter::new(File::create(out.join("test.mm"))?), m, n, &test.points)?;
    println!("{m}x{n}, {} train and {} test ratings in {}", train.len(), test.points.len(), out.display());
    Ok(())
}
