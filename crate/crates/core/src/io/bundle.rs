use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{Component, Method, SampleSizes, TestReport};
use crate::error::{Error, Result};
use crate::io::csv_io::{plot_set_csv, write_file};
use crate::io::experiment::ExperimentConfig;
use crate::io::pipeline::{PooledBand, Provenance, ResultBundle, SetDiagnostic};
use crate::io::svg::{render_svg, SvgOptions};

pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "MANIFEST.sha256";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEntry {
    pub name: String,
    pub csv: String,
    pub svg: String,
    pub method: Method,
    pub component: Component,
    pub region_tag: String,
    pub sample_sizes: SampleSizes,
    pub points: usize,
}

/// Everything in a bundle except the plotted pairs, which live in the CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub sizes: SampleSizes,
    pub sets: Vec<SetEntry>,
    pub diagnostics: Vec<SetDiagnostic>,
    pub pooled: Vec<PooledBand>,
    pub test: Option<TestReport>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn svg_options(bundle: &ResultBundle, comp: Component) -> SvgOptions {
    let overlay = match comp {
        Component::Coordinate(c) => bundle.config.overlays.iter().find(|o| o.component == c).map(|o| o.slope),
        Component::Potential => None,
    };
    SvgOptions {
        overlay_slope: overlay,
        ..SvgOptions::default()
    }
}

/// Writes one CSV and one SVG per plot set, the JSON summary and a checksum
/// manifest into `dir`.
pub fn write_bundle(bundle: &ResultBundle, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut entries = Vec::new();
    for set in &bundle.sets {
        let name = set.name();
        let csv = format!("{name}.csv");
        let svg = format!("{name}.svg");
        if files.iter().any(|(f, _)| *f == csv) {
            return Err(Error::invalid(format!("two plot sets share the name {name}")));
        }
        files.push((csv.clone(), plot_set_csv(set).into_bytes()));
        files.push((svg.clone(), render_svg(set, &svg_options(bundle, set.component)).into_bytes()));
        entries.push(SetEntry {
            name,
            csv,
            svg,
            method: set.method,
            component: set.component,
            region_tag: set.region_tag.clone(),
            sample_sizes: set.sample_sizes,
            points: set.len(),
        });
    }
    let summary = Summary {
        config: bundle.config.clone(),
        sizes: bundle.sizes,
        sets: entries,
        diagnostics: bundle.diagnostics.clone(),
        pooled: bundle.pooled.clone(),
        test: bundle.test.clone(),
        provenance: bundle.provenance.clone(),
    };
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))?;
    json.push('\n');
    files.push((SUMMARY_FILE.into(), json.into_bytes()));
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let mut manifest = String::new();
    let mut out = Vec::new();
    for (name, bytes) in &files {
        write_file(&dir.join(name), bytes)?;
        let sha = sha256_hex(bytes);
        manifest.push_str(&format!("{sha}  {name}\n"));
        out.push(ManifestEntry {
            file: name.clone(),
            sha256: sha,
        });
    }
    write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    Ok(Manifest {
        dir: dir.to_path_buf(),
        entries: out,
    })
}

/// Re-hashes every file listed in a manifest; returns the names that differ.
pub fn verify_manifest(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut bad = Vec::new();
    for line in text.lines() {
        let (sha, name) = line
            .split_once("  ")
            .ok_or_else(|| Error::invalid(format!("malformed manifest line {line:?}")))?;
        let file = dir.join(name);
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        if sha256_hex(&bytes) != sha {
            bad.push(name.to_string());
        }
    }
    Ok(bad)
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Summary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        reason: e.to_string(),
    })
}

/// Plain-text digest of a summary.
pub fn format_report(s: &Summary) -> String {
    let mut out = String::new();
    let methods: Vec<String> = s.config.methods.iter().map(Method::tag).collect();
    out.push_str(&format!(
        "scenario {}  n_X={} n_Y={} n_U={}  seed={}  methods: {}\n",
        s.config.scenario.name,
        s.sizes.x,
        s.sizes.y,
        s.sizes.reference,
        s.provenance.seed,
        methods.join(", ")
    ));
    out.push_str(&format!(
        "{:<28} {:>7} {:>10} {:>10} {:>9}\n",
        "set", "points", "in band", "max dev", "slope"
    ));
    for (entry, diag) in s.sets.iter().zip(&s.diagnostics) {
        let slope = diag.slope.map_or("-".to_string(), |f| format!("{:.3}", f.slope));
        out.push_str(&format!(
            "{:<28} {:>7} {:>10.3} {:>10.3} {:>9}\n",
            entry.name, entry.points, diag.band.fraction_inside, diag.band.max_perpendicular_deviation, slope
        ));
    }
    for p in &s.pooled {
        out.push_str(&format!(
            "pooled {} band(eta={}) {:.3}\n",
            p.method.tag(),
            p.band.eta,
            p.band.fraction_inside
        ));
    }
    if let Some(t) = &s.test {
        out.push_str(&format!(
            "test eps={} B={}: E_n={:.4} p_E={:.4}  F_n={:.4} p_F={:.4}\n",
            t.epsilon, t.resamples, t.e_n, t.p_e, t.f_n, t.p_f
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::csv_io::load_csv;
    use crate::io::pipeline::run_experiment;

    fn bundle() -> ResultBundle {
        let mut cfg = ExperimentConfig::preset("scaled-gaussian", None).unwrap();
        cfg.scenario.n = 40;
        cfg.run.resamples = 50;
        cfg.run.mc_points = 128;
        run_experiment(&cfg).unwrap()
    }

    #[test]
    fn writes_verifiable_bundle() {
        let b = bundle();
        let dir = tempfile::tempdir().unwrap();
        let m = write_bundle(&b, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 2 * b.sets.len() + 1);
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        let svg = fs::read_to_string(dir.path().join("ot_qq_2.svg")).unwrap();
        assert!(svg.contains("class=\"overlay\""));
        let s = read_summary(dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(s.sets.len(), b.sets.len());
        assert!(format_report(&s).contains("ot_qq_2"));

        fs::write(dir.path().join("ot_qq_1.csv"), "x,y\n0,0\n").unwrap();
        assert_eq!(verify_manifest(dir.path()).unwrap(), vec!["ot_qq_1.csv".to_string()]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let b = bundle();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&b, dir.path()).unwrap();
        for set in &b.sets {
            let back = load_csv(dir.path().join(format!("{}.csv", set.name())), true, b',').unwrap();
            assert_eq!(back.len(), set.len());
            for (p, q) in back.points().zip(&set.pairs) {
                assert!((p[0] - q.0).abs() <= 1e-12 && (p[1] - q.1).abs() <= 1e-12);
                assert_eq!((p[0], p[1]), *q);
            }
        }
    }

    #[test]
    fn reruns_write_identical_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = write_bundle(&bundle(), a.path()).unwrap();
        let mb = write_bundle(&bundle(), b.path()).unwrap();
        assert_eq!(ma.entries, mb.entries);
    }
}
