//! Exact discrete optimal transport: the assignment, its duals and the
//! empirical quantile map, checked against brute force.

use otqq::exact::{cost_matrix, ot_dual_potentials, ot_quantile_map, solve_assignment};
use otqq::oracle::brute_force_assignment;
use otqq::sampling::{generate, sample_unit_ball, GeneratorSpec, SeededRng};

fn main() -> otqq::Result<()> {
    let u = sample_unit_ball(7, 2, &SeededRng::new(3, 1))?;
    let x = generate(&GeneratorSpec::standard_gaussian(2), 7, &SeededRng::new(3, 10))?;

    let cost = cost_matrix(&u, &x)?;
    let fast = solve_assignment(&cost)?;
    let (perm, brute) = brute_force_assignment(&cost);
    println!("solver cost {:.6}  brute force {:.6}", fast.total_cost, brute);
    println!("solver perm {:?}\nbrute  perm {:?}", fast.perm, perm);

    let u = sample_unit_ball(300, 2, &SeededRng::new(3, 1))?;
    let x = generate(&GeneratorSpec::standard_gaussian(2), 300, &SeededRng::new(3, 10))?;
    let (map, assignment) = ot_quantile_map(&u, &x)?;
    let pots = ot_dual_potentials(&u, &x, &assignment)?;
    let lowest = pots.phi_at_ref.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "n=300: transport cost {:.4}, reference point 0 -> {:?}, potential minimum {lowest}",
        map.total_cost,
        map.image(0)
    );
    Ok(())
}
