use bpmf::sched::{benchmark_update_methods, run_items, ForcedAlgorithm, SchedulerPolicy};
use proptest::prelude::*;
use std::hint::black_box;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

fn spin(units: usize) -> u64 {
    let mut a = 0u64;
    for x in 0..units as u64 * 50 {
        a = black_box(a.wrapping_mul(6364136223846793005).wrapping_add(x));
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn every_item_and_chunk_runs_once(loads in prop::collection::vec(0usize..3000, 0..300), threads in 1usize..9) {
        let policy = SchedulerPolicy { threshold: 1000, parallel_chunk: 128, ..SchedulerPolicy::with_threads(threads) };
        let items: Vec<AtomicUsize> = loads.iter().map(|_| AtomicUsize::new(0)).collect();
        let chunks = AtomicUsize::new(0);
        let (out, _) = run_items::<usize, (), _>(&loads, &policy, |i, ctx| {
            items[i].fetch_add(1, Ordering::SeqCst);
            if loads[i] >= policy.threshold {
                let n = loads[i].div_ceil(policy.parallel_chunk);
                let parts = ctx.run_chunks(n, |c| { chunks.fetch_add(1, Ordering::SeqCst); c });
                assert_eq!(parts, (0..n).collect::<Vec<_>>());
            }
            Ok(i)
        }).unwrap();
        prop_assert_eq!(out, (0..loads.len()).collect::<Vec<_>>());
        prop_assert!(items.iter().all(|c| c.load(Ordering::SeqCst) == 1));
        let want: usize = loads.iter().filter(|&&l| l >= 1000).map(|l| l.div_ceil(128)).sum();
        prop_assert_eq!(chunks.load(Ordering::SeqCst), want);
    }
}

/// One item of 100000 ratings among 10000 of 10 ratings on 8 workers.
#[test]
fn skewed_workload_is_balanced_on_eight_workers() {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    if cores < 8 {
        eprintln!("skipped: needs 8 cores, found {cores}");
        return;
    }
    let mut loads = vec![100_000];
    loads.extend(std::iter::repeat(10).take(10_000));
    let policy = SchedulerPolicy::with_threads(8);
    let task = |i: usize, ctx: &bpmf::sched::WorkerCtx| -> Result<u64, ()> {
        if loads[i] >= policy.threshold {
            let n = loads[i].div_ceil(policy.parallel_chunk);
            Ok(ctx.run_chunks(n, |_| spin(policy.parallel_chunk)).into_iter().fold(0, u64::wrapping_add))
        } else {
            Ok(spin(loads[i]))
        }
    };
    let start = Instant::now();
    run_items(&loads, &SchedulerPolicy::with_threads(1), task).unwrap();
    let serial = start.elapsed().as_secs_f64();
    let (_, stats) = run_items(&loads, &policy, task).unwrap();
    let ideal = serial / 8.0;
    assert!(stats.wall.as_secs_f64() <= 2.0 * ideal, "wall {:?}, ideal {ideal}", stats.wall);
    assert!(stats.max_idle_fraction() <= 0.25, "idle {}", stats.max_idle_fraction());
}

#[test]
fn benchmark_times_grow_with_ratings() {
    let rows = benchmark_update_methods(8, &[1, 300, 30_000], 5, 1);
    for method in [ForcedAlgorithm::RankOne, ForcedAlgorithm::FullChol, ForcedAlgorithm::ParallelChol] {
        let t: Vec<f64> = rows.iter().filter(|r| r.method == method).map(|r| r.seconds).collect();
        assert_eq!(t.len(), 3);
        assert!(t.windows(2).all(|w| w[0] <= w[1]), "{method:?}: {t:?}");
    }
}
