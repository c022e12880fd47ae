//! Data loading, experiment presets, result bundles and SVG rendering.

mod bundle;
mod csv_io;
mod experiment;
mod pipeline;
mod svg;

pub use bundle::{
    format_report, read_summary, verify_manifest, write_bundle, Manifest, ManifestEntry, SetEntry, Summary,
    MANIFEST_FILE, SUMMARY_FILE,
};
pub use csv_io::{load_csv, parse_csv, plot_set_csv};
pub use experiment::{DataSource, ExperimentConfig, Scenario, SlopeOverlay, PRESETS};
pub use pipeline::{
    prepare_samples, run_experiment, PooledBand, Provenance, ResultBundle, SetDiagnostic, StageTiming,
};
pub use svg::{render_svg, Frame, SvgOptions};
