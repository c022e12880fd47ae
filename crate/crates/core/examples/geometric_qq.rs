//! Geometric ranks, quantiles and the geometric Q-Q baseline.

use otqq::analysis::band_fraction;
use otqq::geometric::{geometric_qq, geometric_quantile, geometric_rank, GeometricRank, DEFAULT_MAX_ITER, DEFAULT_TOL};
use otqq::sampling::{generate, GeneratorSpec, Marginal, SeededRng};

fn main() -> otqq::Result<()> {
    let cloud = generate(&GeneratorSpec::standard_gaussian(2), 500, &SeededRng::new(2, 10))?;
    let median = geometric_quantile(&cloud, &GeometricRank(vec![0.0, 0.0]), DEFAULT_TOL, DEFAULT_MAX_ITER)?
        .require_converged()?;
    println!("spatial median {:?} after {} iterations", median.point, median.iterations);

    for u in [[0.5, 0.0], [0.0, -0.8], [0.6, 0.6]] {
        let q = geometric_quantile(&cloud, &GeometricRank(u.to_vec()), DEFAULT_TOL, DEFAULT_MAX_ITER)?.point;
        let back = geometric_rank(&cloud, &q)?;
        println!("rank {u:?} -> quantile [{:.3}, {:.3}] -> rank [{:.3}, {:.3}]", q[0], q[1], back.0[0], back.0[1]);
    }

    let x = generate(&GeneratorSpec::standard_gaussian(2), 300, &SeededRng::new(2, 10))?;
    let y = generate(
        &GeneratorSpec::IndependentProduct {
            marginals: vec![Marginal::StandardNormal, Marginal::Pareto { alpha: 3.2 }],
        },
        300,
        &SeededRng::new(2, 11),
    )?;
    for set in geometric_qq(&x, &y)? {
        let band = band_fraction(&set, 0.1)?;
        println!("{}: max deviation {:.3}", set.name(), band.max_perpendicular_deviation);
    }
    Ok(())
}
