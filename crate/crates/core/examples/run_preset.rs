//! Runs a shipped preset end to end, writes the bundle and reads it back.
//!
//! `cargo run --example run_preset -- outliers` picks another preset.

use otqq::io::{format_report, read_summary, run_experiment, verify_manifest, write_bundle, ExperimentConfig, SUMMARY_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "scaled-gaussian".into());
    let mut cfg = ExperimentConfig::preset(&name, None)?;
    cfg.scenario.n = 200;
    cfg.run.resamples = 50;
    cfg.run.mc_points = 512;

    let bundle = run_experiment(&cfg)?;
    for t in &bundle.timings {
        println!("{:<32} {:.2} s", t.stage, t.seconds);
    }
    let dir = std::env::temp_dir().join(format!("otqq-{name}"));
    let manifest = write_bundle(&bundle, &dir)?;
    assert!(verify_manifest(&dir)?.is_empty());
    print!("{}", format_report(&read_summary(dir.join(SUMMARY_FILE))?));
    println!("{} files in {}", manifest.entries.len() + 1, dir.display());
    Ok(())
}
