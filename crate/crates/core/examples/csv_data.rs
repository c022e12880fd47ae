//! Loading samples from CSV, standardizing them and comparing one against
//! a moment-matched Gaussian.

use std::io::Cursor;

use otqq::analysis::Method;
use otqq::io::{parse_csv, run_experiment, DataSource, ExperimentConfig, Scenario};
use otqq::model::standardize;
use otqq::sampling::{generate, GeneratorSpec, Marginal, SeededRng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = "length;width\n5.1;3.5\n4.9;3.0\n4.7;3.2\n4.6;3.1\n5.0;3.6\n";
    let small = parse_csv(Cursor::new(table), true, b';')?;
    println!("parsed {} rows, columns {:?}", small.len(), small.names());
    let (z, transform) = standardize(&small)?;
    println!("standardized first row {:?}, transform {transform:?}", z.point(0));

    // a skewed sample written to disk, then read back through a preset-style config
    let data = generate(
        &GeneratorSpec::IndependentProduct {
            marginals: vec![Marginal::StandardNormal, Marginal::Pareto { alpha: 3.0 }],
        },
        250,
        &SeededRng::new(4, 10),
    )?;
    let dir = std::env::temp_dir().join("otqq-csv-data");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("sample.csv");
    let mut text = String::from("a,b\n");
    for p in data.points() {
        text += &format!("{},{}\n", p[0], p[1]);
    }
    std::fs::write(&path, text)?;

    let mut cfg = ExperimentConfig::preset("identical-gaussian", None)?;
    cfg.scenario = Scenario {
        name: "csv-vs-gaussian".into(),
        x: DataSource::GaussianLike { moment_matched: true },
        y: DataSource::csv(&path),
        // only used by generated sources
        n: 1,
    };
    cfg.methods = vec![Method::Ot, Method::Geometric];
    cfg.standardize = true;
    cfg.test = false;
    let bundle = run_experiment(&cfg)?;
    for d in &bundle.diagnostics {
        println!("{:<16} max deviation {:.3}", d.name, d.band.max_perpendicular_deviation);
    }
    Ok(())
}
