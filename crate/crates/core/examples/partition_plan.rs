//! Reordering, workload-balanced partitioning and the exchange plan on a
//! matrix with two disconnected communities stored interleaved.

use bpmf::data::{build_ratings, RatingTriplet};
use bpmf::dist::partition::{partition, reorder, Permutation, WorkloadModel};
use bpmf::dist::plan::build_comm_plan;
use bpmf::dist::ItemKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Even users rate even movies, odd users rate odd movies.
    let mut t = Vec::new();
    for u in 0..40 {
        for m in 0..30 {
            if u % 2 == m % 2 && (u * 7 + m * 3) % 4 != 0 {
                t.push(RatingTriplet::new(u, m, 1.0));
            }
        }
    }
    let r = build_ratings(&t, 40, 30)?;
    let model = WorkloadModel::for_k(8);
    for (name, (users, movies)) in [
        ("identity", (Permutation::identity(40), Permutation::identity(30))),
        ("reordered", reorder(&r, 2, &model)),
    ] {
        let bp = partition(&r, users, movies, 2, &model)?;
        let plan = build_comm_plan(&bp, &r);
        println!(
            "{name:>9}: user ranges {:?}, movie ranges {:?}, items exchanged per iteration {}",
            bp.ranges(ItemKind::User),
            bp.ranges(ItemKind::Movie),
            plan.total_items()
        );
    }
    Ok(())
}
