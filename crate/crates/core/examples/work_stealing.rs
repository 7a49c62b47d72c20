//! One heavy item among many light ones: the heavy item splits into chunks
//! that idle workers steal.

use bpmf::sched::{run_items, SchedulerPolicy};

fn spin(units: usize) -> u64 {
    (0..units as u64 * 200).fold(0u64, |a, x| a.wrapping_mul(31).wrapping_add(x))
}

fn main() {
    let mut loads = vec![100_000];
    loads.extend(std::iter::repeat(10).take(10_000));
    for threads in [1, 2, 4, 8] {
        let policy = SchedulerPolicy::with_threads(threads);
        let (_, stats) = run_items::<u64, (), _>(&loads, &policy, |i, ctx| {
            if loads[i] >= policy.threshold {
                let chunks = loads[i].div_ceil(policy.parallel_chunk);
                Ok(ctx.run_chunks(chunks, |_| spin(policy.parallel_chunk)).into_iter().fold(0, u64::wrapping_add))
            } else {
                Ok(spin(loads[i]))
            }
        })
        .expect("no task fails");
        println!(
            "{threads} workers: wall {:?}, steals {}, chunks {}, max idle {:.0}%",
            stats.wall,
            stats.steals,
            stats.chunks_executed,
            100.0 * stats.max_idle_fraction()
        );
    }
}
