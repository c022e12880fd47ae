//! Entropic two-sample test under the null and under an alternative.

use otqq::analysis::eot_test;
use otqq::sampling::{generate, GeneratorSpec, SeededRng};
use otqq::RunConfig;

fn main() -> otqq::Result<()> {
    let cfg = RunConfig {
        resamples: 50,
        mc_points: 1024,
        ..RunConfig::default()
    };
    let n = 150;
    let x = generate(&GeneratorSpec::standard_gaussian(2), n, &SeededRng::new(cfg.seed, 10))?;
    let same = generate(&GeneratorSpec::standard_gaussian(2), n, &SeededRng::new(cfg.seed, 11))?;
    let shifted = GeneratorSpec::GaussianFull {
        mean: vec![0.6, 0.0],
        covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    };
    let other = generate(&shifted, n, &SeededRng::new(cfg.seed, 11))?;

    for (label, y) in [("same law", &same), ("shifted mean", &other)] {
        let r = eot_test(&x, y, &cfg)?;
        println!(
            "{label:<13} E_n={:>8.3} p_E={:.3}   F_n={:>8.3} p_F={:.3}   (B={})",
            r.e_n, r.p_e, r.f_n, r.p_f, r.resamples
        );
    }
    Ok(())
}
