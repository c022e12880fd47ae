//! OT and entropic Q-Q plots for a scaled sample, with band diagnostics,
//! slope fits and SVG output.

use otqq::analysis::{band_fraction, build_potential_set, build_qq_sets, fit_slope, Potential, TransportMap};
use otqq::exact::{ot_dual_potentials, ot_quantile_map};
use otqq::io::{render_svg, SvgOptions};
use otqq::sampling::{generate, sample_unit_ball, GeneratorSpec, SeededRng};
use otqq::sinkhorn::{sinkhorn, EotMap, SinkhornParams};
use otqq::CompactRegion;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 400;
    let scaled = GeneratorSpec::centered_gaussian(vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 4.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ]);
    let x = generate(&GeneratorSpec::standard_gaussian(3), n, &SeededRng::new(1, 10))?;
    let y = generate(&scaled, n, &SeededRng::new(1, 11))?;
    let u = sample_unit_ball(n, 3, &SeededRng::new(1, 1))?;
    let region = CompactRegion::ball(1.0)?;

    let (mx, ax) = ot_quantile_map(&u, &x)?;
    let (my, ay) = ot_quantile_map(&u, &y)?;
    let mut sets = build_qq_sets(&TransportMap::Exact(mx), &TransportMap::Exact(my), &u, &region)?;
    sets.push(build_potential_set(
        &Potential::Exact(ot_dual_potentials(&u, &x, &ax)?),
        &Potential::Exact(ot_dual_potentials(&u, &y, &ay)?),
        &u,
        &region,
    )?);

    let params = SinkhornParams::new(1e-2);
    let ex = EotMap::new(&x, &sinkhorn(&u, &x, &params)?.require_converged()?)?;
    let ey = EotMap::new(&y, &sinkhorn(&u, &y, &params)?.require_converged()?)?;
    sets.extend(build_qq_sets(&TransportMap::Entropic(ex), &TransportMap::Entropic(ey), &u, &region)?);

    let out = std::env::temp_dir().join("otqq-qq-plots");
    std::fs::create_dir_all(&out)?;
    for set in &sets {
        let band = band_fraction(set, 0.1)?;
        let slope = fit_slope(set)?.slope;
        println!(
            "{:<16} in band {:.2}  max deviation {:.2}  slope {slope:.2}",
            set.name(),
            band.fraction_inside,
            band.max_perpendicular_deviation
        );
        let opts = SvgOptions {
            overlay_slope: set.name().ends_with("qq_2").then_some(2.0),
            ..SvgOptions::default()
        };
        std::fs::write(out.join(format!("{}.svg", set.name())), render_svg(set, &opts))?;
    }
    println!("svg files in {}", out.display());
    Ok(())
}
