//! Seeded sample generation: Gaussians, heavy tails, the unit ball and
//! outlier injection.

use otqq::sampling::{generate, inject_outliers, sample_unit_ball, GeneratorSpec, Marginal, SeededRng};

fn main() -> otqq::Result<()> {
    let rng = SeededRng::new(7, 10);
    let gauss = generate(
        &GeneratorSpec::centered_gaussian(vec![vec![1.0, 0.9], vec![0.9, 1.0]]),
        2000,
        &rng,
    )?;
    let cov = gauss.covariance();
    println!("correlated gaussian: sample covariance [{:.2} {:.2}; {:.2} {:.2}]", cov[0][0], cov[0][1], cov[1][0], cov[1][1]);

    // the same seed and stream always give the same sample
    let again = generate(&GeneratorSpec::centered_gaussian(vec![vec![1.0, 0.9], vec![0.9, 1.0]]), 2000, &rng)?;
    assert_eq!(gauss, again);

    let mixed = generate(
        &GeneratorSpec::IndependentProduct {
            marginals: vec![Marginal::StandardNormal, Marginal::Pareto { alpha: 3.2 }],
        },
        1000,
        &SeededRng::new(7, 11),
    )?;
    let tail = mixed.column(1).into_iter().fold(f64::NEG_INFINITY, f64::max);
    println!("gaussian x pareto(3.2): largest pareto draw {tail:.1}");

    let ball = sample_unit_ball(1000, 3, &SeededRng::new(7, 1))?;
    let widest = ball.points().map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    println!("unit ball: {} points, largest norm {widest:.4}", ball.len());

    let dirty = inject_outliers(&generate(&GeneratorSpec::standard_gaussian(3), 100, &rng)?, &[[8.0; 3], [9.0; 3]])?;
    println!("outliers now at rows 0 and 1: {:?} {:?}", dirty.point(0), dirty.point(1));
    Ok(())
}
