//! Counter-based streams and the normal, multivariate normal and Wishart
//! samplers. Streams depend only on their key, never on call order.

use bpmf::linalg::{cholesky, LowerTriangular, SquareMatrix};
use bpmf::rng::{sample_mvn_prec, sample_wishart, std_normal, stream_for, Side, StreamKey};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let key = StreamKey::new(42, 3, Side::Movies, 17);
    let a = std_normal(&mut stream_for(key), 4);
    let b = std_normal(&mut stream_for(key), 4);
    println!("same key, same draws: {a:?} == {}", a == b);

    let n = 100_000;
    let lambda = cholesky(&SquareMatrix::from_diag(&[4.0, 1.0]))?;
    let mut s = stream_for(StreamKey::new(1, 0, Side::Noise, 0));
    let mut var = [0.0; 2];
    for _ in 0..n {
        let x = sample_mvn_prec(&mut s, &[0.0, 0.0], &lambda);
        var[0] += x[0] * x[0] / n as f64;
        var[1] += x[1] * x[1] / n as f64;
    }
    println!("N(0, diag(4,1)^-1) variances over {n} draws: {var:.4?} (expect 0.25, 1)");

    let mut mean = 0.0;
    for _ in 0..n {
        mean += sample_wishart(&mut s, &LowerTriangular::identity(1), 5.0)?.get(0, 0) / n as f64;
    }
    println!("Wishart(1, 5) mean over {n} draws: {mean:.4} (expect 5)");
    Ok(())
}
