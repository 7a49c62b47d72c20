//! Time to update one item with each method as the rating count grows.
//!
//! cargo run --release --example update_method_benchmark -- [K] [THREADS]

use bpmf::sched::benchmark_update_methods;

fn main() {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().expect("integer argument"));
    let k = args.next().unwrap_or(32);
    let threads = args.next().unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let grid = [1, 10, 100, 1000, 10_000, 100_000];
    println!("K = {k}, {threads} threads");
    println!("{:>8} {:>14} {:>14} {:>14}", "nnz", "RankOne s", "FullChol s", "ParallelChol s");
    let rows = benchmark_update_methods(k, &grid, 5, threads);
    for chunk in rows.chunks(3) {
        println!("{:>8} {:>14.3e} {:>14.3e} {:>14.3e}", chunk[0].nnz, chunk[0].seconds, chunk[1].seconds, chunk[2].seconds);
    }
}
