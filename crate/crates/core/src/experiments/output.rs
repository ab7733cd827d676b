use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind};
use super::plot::{Chart, Series, PALETTE};
use super::table::ResultTable;
use super::ExperimentOutput;
use crate::error::{Result, TomoError};

/// Contents of `meta.json`: the flat config plus run metadata.
#[derive(Clone, Debug, Serialize)]
pub struct RunMeta {
    #[serde(flatten)]
    pub config: ExperimentConfig,
    pub version: String,
    /// ISO-8601, UTC.
    pub timestamp: String,
    pub elapsed_seconds: f64,
    pub diagnostics: Vec<String>,
}

impl RunMeta {
    pub fn new(config: &ExperimentConfig, output: &ExperimentOutput) -> Self {
        RunMeta {
            config: config.clone(),
            version: version_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            elapsed_seconds: output.elapsed_seconds,
            diagnostics: output.diagnostics.clone(),
        }
    }
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TomoError + '_ {
    move |source| TomoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a sibling temp file and a rename, so readers never see a
/// partial file.
fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn distinct<T: Ord + Copy>(it: impl Iterator<Item = T>) -> Vec<T> {
    it.collect::<BTreeSet<_>>().into_iter().collect()
}

fn series(name: String, color: &str, points: Vec<(f64, f64)>, dashed: bool) -> Series {
    Series {
        name,
        color: color.to_owned(),
        points,
        dashed,
        markers: !dashed,
    }
}

/// One chart per `(kind, N-series group)`, with its file name.
pub fn charts(table: &ResultTable, kind: ExperimentKind) -> Vec<(String, Chart)> {
    let rows = &table.rows;
    let ns = distinct(rows.iter().map(|r| r.n_events));
    match kind {
        ExperimentKind::Fig1 | ExperimentKind::Custom => ns
            .iter()
            .map(|&n| {
                let sel: Vec<_> = rows.iter().filter(|r| r.n_events == n).collect();
                let pick = |f: fn(&super::ResultRow) -> f64| sel.iter().map(|r| (r.coord_value, f(r))).collect();
                let chart = Chart {
                    title: format!("MSE vs probe count, N = {n}"),
                    x_label: "probes M".into(),
                    y_label: "mean squared error".into(),
                    log_x: true,
                    log_y: true,
                    series: vec![
                        series("DQST".into(), PALETTE[1], pick(|r| r.mse_dqst), false),
                        series("DPT".into(), PALETTE[2], pick(|r| r.mse_dpt), false),
                        series("CRLB".into(), PALETTE[5], pick(|r| r.crlb), true),
                    ],
                };
                (format!("{}_N{n}.svg", kind.as_str()), chart)
            })
            .collect(),
        ExperimentKind::Fig2 => {
            let chart = Chart {
                title: "Bias of the DPT design matrix".into(),
                x_label: "probes M".into(),
                y_label: "bias".into(),
                log_x: true,
                log_y: true,
                series: ns
                    .iter()
                    .enumerate()
                    .map(|(k, &n)| {
                        let pts = rows
                            .iter()
                            .filter(|r| r.n_events == n)
                            .map(|r| (r.coord_value, r.bias))
                            .collect();
                        series(format!("N = {n}"), PALETTE[k % PALETTE.len()], pts, false)
                    })
                    .collect(),
            };
            vec![("fig2.svg".into(), chart)]
        }
        ExperimentKind::Fig3 => {
            let ms = distinct(rows.iter().map(|r| r.probes));
            let mut out = Vec::new();
            for &n in &ns {
                for &m in &ms {
                    let sel: Vec<_> = rows.iter().filter(|r| r.n_events == n && r.probes == m).collect();
                    let pick =
                        |f: fn(&super::ResultRow) -> f64| sel.iter().map(|r| (r.coord_value, f(r))).collect();
                    let chart = Chart {
                        title: format!("MSE vs 1/kappa, N = {n}, M = {m}"),
                        x_label: "inverse condition number".into(),
                        y_label: "mean squared error".into(),
                        log_x: false,
                        log_y: true,
                        series: vec![
                            series("DQST".into(), PALETTE[1], pick(|r| r.mse_dqst), false),
                            series("DPT".into(), PALETTE[2], pick(|r| r.mse_dpt), false),
                            series("mean CRLB".into(), PALETTE[5], pick(|r| r.crlb), true),
                        ],
                    };
                    out.push((format!("fig3_N{n}_M{m}.svg"), chart));
                }
            }
            out
        }
    }
}

/// Writes `results.csv`, `meta.json` and, with `plot`, the SVG charts into
/// `out_dir`. Returns the written paths; `results.csv` is written last.
pub fn write_results(
    output: &ExperimentOutput,
    config: &ExperimentConfig,
    out_dir: &Path,
    plot: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    if plot {
        for (name, chart) in charts(&output.table, config.kind) {
            let path = out_dir.join(name);
            atomic_write(&path, chart.to_svg().as_bytes())?;
            written.push(path);
        }
    }
    let meta_path = out_dir.join("meta.json");
    let meta = serde_json::to_string_pretty(&RunMeta::new(config, output))
        .map_err(|e| TomoError::invalid(format!("meta.json serialization failed: {e}")))?;
    atomic_write(&meta_path, format!("{meta}\n").as_bytes())?;
    written.push(meta_path);

    let csv_path = out_dir.join("results.csv");
    atomic_write(&csv_path, output.table.to_csv_string().as_bytes())?;
    written.push(csv_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{ResultRow, ResultTable};

    fn output() -> ExperimentOutput {
        let row = |n: u64, m: usize| ResultRow {
            sweep_kind: "fig1".into(),
            coord_name: "M".into(),
            coord_value: m as f64,
            n_events: n,
            probes: m,
            mse_dqst: 0.3,
            mse_dqst_se: 0.01,
            mse_dpt: 0.1,
            mse_dpt_se: 0.01,
            crlb: 0.2,
            fid_dqst: 0.9,
            fid_dpt: 0.92,
            bias: 0.05,
            trials_used: 10,
        };
        ExperimentOutput {
            table: ResultTable::new(vec![row(500, 50), row(500, 100), row(1000, 50), row(1000, 100)]),
            diagnostics: vec!["note".into()],
            elapsed_seconds: 1.25,
        }
    }

    #[test]
    fn writes_csv_meta_and_one_chart_per_n() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::fig1();
        config.master_seed = 987_654_321_012;
        let out = output();
        let paths = write_results(&out, &config, dir.path(), true).unwrap();
        assert_eq!(paths.len(), 4);
        assert!(dir.path().join("fig1_N500.svg").exists());

        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(ResultTable::read_csv(csv.as_bytes()).unwrap(), out.table);

        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["master_seed"], 987_654_321_012u64);
        assert_eq!(meta["elapsed_seconds"], 1.25);
        assert!(chrono::DateTime::parse_from_rfc3339(meta["timestamp"].as_str().unwrap()).is_ok());
        let back = ExperimentConfig::from_json_str(&meta.to_string()).unwrap();
        assert_eq!(back, config);
        assert!(fs::read_dir(dir.path())
            .unwrap()
            .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
    }

    #[test]
    fn no_plots_when_disabled_and_io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_results(&output(), &ExperimentConfig::fig1(), dir.path(), false).unwrap();
        assert_eq!(paths.len(), 2);

        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = write_results(&output(), &ExperimentConfig::fig1(), &blocker.join("sub"), false).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
