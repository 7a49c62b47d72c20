//! Cholesky factorization, rank-one updates, triangular solves and the
//! chunked Gram accumulation behind every item update.

use bpmf::linalg::{chol_rank1_update, cholesky, gram_accumulate, tri_solve, LowerTriangular, SquareMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = SquareMatrix::from_row_major(2, vec![4.0, 2.0, 2.0, 3.0])?;
    let l = cholesky(&a)?;
    println!("chol([[4,2],[2,3]]) = [[{}, 0], [{}, {}]]", l.get(0, 0), l.get(1, 0), l.get(1, 1));

    let up = chol_rank1_update(&LowerTriangular::identity(2), &[1.0, 0.0]);
    println!("identity updated by (1,0): diag = {:?}", up.diag());

    let x = tri_solve(&l, &[4.0, 5.0], false);
    let back = l.mul_vec(&x);
    println!("L x = (4, 5) gives x = {x:?}, L x = {back:?}");

    let rows: Vec<Vec<f64>> = (0..1000).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), 1.0]).collect();
    let weights: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
    let (g1, v1) = gram_accumulate::<f64, _>(3, &rows, &weights, 64, 1)?;
    let (g8, v8) = gram_accumulate::<f64, _>(3, &rows, &weights, 64, 8)?;
    let same = g1.as_slice().iter().zip(g8.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits())
        && v1.iter().zip(&v8).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("Gram of 1000 rows, 1 vs 8 workers bit-identical: {same}");
    Ok(())
}
