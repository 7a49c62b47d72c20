//! Loads MatrixMarket or CSV ratings (gzip accepted) and shows both
//! compressed orientations.
//!
//! cargo run --example ingest -- [FILE]

use bpmf::data::{build_ratings, load_csv, load_ratings_file};
use std::io::Cursor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let file = match std::env::args().nth(1) {
        Some(path) => load_ratings_file(path.as_ref())?,
        None => load_csv(Cursor::new(b"user,movie,rating\n1,1,1\n1,2,2\n2,2,3\n".to_vec()))?,
    };
    let r = build_ratings(&file.triplets, file.m, file.n)?;
    println!("{} users, {} movies, {} ratings", r.m(), r.n(), r.nnz());
    for u in 0..r.m().min(3) {
        println!("user {u}: {:?}", r.user(u));
    }
    for m in 0..r.n().min(3) {
        println!("movie {m}: {:?}", r.movie(m));
    }
    println!("bounded scale: {}, range {:?}", r.looks_bounded(), r.value_range());
    Ok(())
}
