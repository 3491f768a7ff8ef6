//! Ad-hoc timing probe (run with --ignored --nocapture) used while tuning
//! the sampler hot loop.

use nalgebra::DVector;
use onsl_core::oracle::{GaussianLaw, GaussianScore, ScoreField};
use onsl_core::rng::{fill_standard_normal, standard_normal_vector, stream, tags};
use std::time::Instant;

#[test]
#[ignore]
fn probe_step_costs() {
    let n = 2_000_000u64;
    let start = Instant::now();
    let mut acc = 0.0f64;
    let mut noise = DVector::zeros(2);
    for i in 0..n {
        let mut rng = stream(1, i, 3, tags::STEP);
        fill_standard_normal(&mut rng, &mut noise);
        acc += noise[0];
    }
    println!(
        "stream init + 2 normals: {:.1} ns/iter (acc {acc})",
        start.elapsed().as_nanos() as f64 / n as f64
    );

    let law = GaussianLaw::standard(2);
    let score = GaussianScore::new(&law);
    let x = standard_normal_vector(&mut stream(2, 0, 0, 1), 2);
    let start = Instant::now();
    let mut acc = 0.0;
    for i in 0..n {
        let s = score.score(0.5 + (i % 8) as f64 * 0.1, &x);
        acc += s[0];
    }
    println!(
        "cached gaussian score: {:.1} ns/iter (acc {acc})",
        start.elapsed().as_nanos() as f64 / n as f64
    );
}
