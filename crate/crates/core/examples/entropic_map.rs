//! Entropic transport: Sinkhorn duals, the out-of-sample map and the
//! anchored potential, for a few regularization strengths.

use otqq::exact::ot_quantile_map;
use otqq::sampling::{generate, sample_unit_ball, GeneratorSpec, SeededRng};
use otqq::sinkhorn::{sinkhorn, EotMap, EotPotential, SinkhornParams};

fn main() -> otqq::Result<()> {
    let u = sample_unit_ball(300, 2, &SeededRng::new(5, 1))?;
    let x = generate(&GeneratorSpec::standard_gaussian(2), 300, &SeededRng::new(5, 10))?;
    let (exact, _) = ot_quantile_map(&u, &x)?;

    for eps in [1e-1, 1e-2, 1e-3] {
        let state = sinkhorn(&u, &x, &SinkhornParams::new(eps))?.require_converged()?;
        let map = EotMap::new(&x, &state)?;
        let mse = u
            .points()
            .enumerate()
            .map(|(i, p)| map.eval(p).iter().zip(exact.image(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / u.len() as f64;
        let pot = EotPotential::anchored(map.clone(), &u)?;
        println!(
            "eps={eps:<6} iterations {:>5}  marginal error {:.1e}  mse to exact map {mse:.4}  potential at (0.5, 0) {:.4}",
            state.iterations,
            state.marginal_error,
            pot.value(&[0.5, 0.0])
        );
    }
    Ok(())
}
