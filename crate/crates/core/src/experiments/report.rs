//! CSV tables, SVG charts, a text summary and a hashed manifest for a
//! campaign. Charts and summary are rendered from the tables alone, so a
//! report can be rebuilt from the CSV files of an earlier run.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::svg::{bar_chart, box_plot, line_chart};
use super::{metric_distribution, Campaign, PhaseArtifacts, QuartileRow};
use crate::error::{Error, Result};
use crate::io::{content_hash, read_file, write_atomic};

pub const PHASE_METRICS: &str = "phase_metrics.csv";
pub const METRIC_QUARTILES: &str = "metric_quartiles.csv";
pub const EARLY_EXIT: &str = "early_exit.csv";
pub const ASR_VS_RATIO: &str = "asr_vs_ratio.csv";
pub const TOP_PHASES: &str = "top_phases.csv";
pub const SUMMARY: &str = "summary.txt";
pub const MANIFEST: &str = "manifest.json";
pub const PLOTS: [&str; 3] = [
    "metric_distribution.svg",
    "early_exit.svg",
    "asr_vs_ratio.svg",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub complete: bool,
    pub n_phases: usize,
    pub failures: Vec<(u32, String)>,
    pub top_phases: Vec<u32>,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn hash_of(&self, path: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|f| f.path == path)
            .map(|f| f.sha256.as_str())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        serde_json::from_slice(&read_file(&path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serialises");
        write_atomic(&dir.join(MANIFEST), json.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub phase_id: u32,
    pub accuracy: f64,
    pub precision_legit: f64,
    pub recall_legit: f64,
    pub f1_legit: f64,
    pub precision_eve: f64,
    pub recall_eve: f64,
    pub f1_eve: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub dataset_sha256: String,
    pub checkpoint_sha256: String,
}

/// `cl` is empty for the full-inference row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitCsvRow {
    pub phase_id: u32,
    pub cl: Option<f64>,
    pub accuracy: f64,
    pub exit_rate: f64,
    pub mac_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrCsvRow {
    pub phase_id: u32,
    pub ratio: f64,
    pub n_legit: usize,
    pub n_eve: usize,
    pub asr_ml: f64,
    pub asr_true: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopRow {
    pub rank: usize,
    pub phase_id: u32,
    pub accuracy: f64,
}

/// Every table of a report, in phase order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTables {
    pub phases: Vec<PhaseRow>,
    pub quartiles: Vec<QuartileRow>,
    pub exit: Vec<ExitCsvRow>,
    pub asr: Vec<AsrCsvRow>,
    pub top: Vec<TopRow>,
}

impl ReportTables {
    pub fn from_campaign(campaign: &Campaign) -> Self {
        let mut phases: Vec<&PhaseArtifacts> = campaign.phases.iter().collect();
        phases.sort_by_key(|p| p.result.phase_id);
        let accuracy_of = |id: u32| {
            phases
                .iter()
                .find(|p| p.result.phase_id == id)
                .map_or(f64::NAN, |p| p.result.metrics.accuracy)
        };
        Self {
            phases: phases
                .iter()
                .map(|p| {
                    let m = &p.result.metrics;
                    PhaseRow {
                        phase_id: p.result.phase_id,
                        accuracy: m.accuracy,
                        precision_legit: m.legit.precision,
                        recall_legit: m.legit.recall,
                        f1_legit: m.legit.f1,
                        precision_eve: m.eve.precision,
                        recall_eve: m.eve.recall,
                        f1_eve: m.eve.f1,
                        precision_macro: m.macro_avg.precision,
                        recall_macro: m.macro_avg.recall,
                        f1_macro: m.macro_avg.f1,
                        dataset_sha256: p.result.dataset_hash.clone(),
                        checkpoint_sha256: p.result.checkpoint_hash.clone(),
                    }
                })
                .collect(),
            quartiles: metric_distribution(&campaign.results()),
            exit: phases
                .iter()
                .flat_map(|p| {
                    p.result.exit.iter().map(|r| ExitCsvRow {
                        phase_id: p.result.phase_id,
                        cl: r.cl,
                        accuracy: r.accuracy,
                        exit_rate: r.exit_rate,
                        mac_ratio: r.mac_ratio,
                    })
                })
                .collect(),
            asr: phases
                .iter()
                .flat_map(|p| {
                    p.result.asr_by_ratio.iter().map(|a| AsrCsvRow {
                        phase_id: p.result.phase_id,
                        ratio: a.ratio,
                        n_legit: a.n_legit,
                        n_eve: a.n_eve,
                        asr_ml: a.asr_ml,
                        asr_true: a.asr_true,
                        skipped: a.skipped,
                    })
                })
                .collect(),
            top: campaign
                .top_k(campaign.config.experiments.top_k)
                .into_iter()
                .enumerate()
                .map(|(i, id)| TopRow {
                    rank: i + 1,
                    phase_id: id,
                    accuracy: accuracy_of(id),
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn top_ids(&self) -> Vec<u32> {
        self.top.iter().map(|t| t.phase_id).collect()
    }

    /// Read the tables written by [`emit_report`].
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            phases: read_csv(&dir.join(PHASE_METRICS))?,
            quartiles: read_csv(&dir.join(METRIC_QUARTILES))?,
            exit: read_csv(&dir.join(EARLY_EXIT))?,
            asr: read_csv(&dir.join(ASR_VS_RATIO))?,
            top: read_csv(&dir.join(TOP_PHASES))?,
        })
    }

    fn csv_files(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        Ok(vec![
            (PHASE_METRICS, csv_bytes(&self.phases)?),
            (METRIC_QUARTILES, csv_bytes(&self.quartiles)?),
            (EARLY_EXIT, csv_bytes(&self.exit)?),
            (ASR_VS_RATIO, csv_bytes(&self.asr)?),
            (TOP_PHASES, csv_bytes(&self.top)?),
        ])
    }
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Integrity(format!("csv buffer: {e}")))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let bytes = read_file(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes files under one root and records their hashes.
struct Emitter<'a> {
    root: &'a Path,
    files: Vec<ManifestEntry>,
}

impl Emitter<'_> {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            sha256: content_hash(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }
}

pub fn phase_dir(phase_id: u32) -> String {
    format!("phases/phase_{phase_id:03}")
}

pub fn checkpoint_path(phase_id: u32) -> String {
    format!("{}/model.eeck", phase_dir(phase_id))
}

/// Checkpoint, round log and secrecy table of one phase under
/// `phases/phase_NNN/`.
pub fn write_phase_outputs(phase: &PhaseArtifacts, out: &Path) -> Result<Vec<ManifestEntry>> {
    let mut e = Emitter {
        root: out,
        files: Vec::new(),
    };
    let dir = phase_dir(phase.result.phase_id);
    e.put(&checkpoint_path(phase.result.phase_id), &phase.checkpoint)?;
    e.put(&format!("{dir}/rounds.jsonl"), phase.round_log().as_bytes())?;
    e.put(
        &format!("{dir}/secrecy.csv"),
        phase.secrecy.to_csv().as_bytes(),
    )?;
    Ok(e.files)
}

/// Write every per-phase file, table and chart, the summary and then
/// `manifest.json`. An empty campaign yields only the summary and the
/// manifest.
pub fn emit_report(campaign: &Campaign, out: &Path) -> Result<Manifest> {
    let mut e = Emitter {
        root: out,
        files: Vec::new(),
    };
    let mut phases: Vec<&PhaseArtifacts> = campaign.phases.iter().collect();
    phases.sort_by_key(|p| p.result.phase_id);
    for p in phases {
        e.files.extend(write_phase_outputs(p, out)?);
    }
    let tables = ReportTables::from_campaign(campaign);
    if !tables.is_empty() {
        for (name, bytes) in tables.csv_files()? {
            e.put(name, &bytes)?;
        }
    }
    render(&tables, &campaign.failures, &mut e)?;
    let manifest = Manifest {
        complete: campaign.complete(),
        n_phases: tables.phases.len(),
        failures: campaign.failures.clone(),
        top_phases: tables.top_ids(),
        files: e.files,
    };
    manifest.write(out)?;
    Ok(manifest)
}

/// Re-render charts and summary from the tables in `dir` and refresh the
/// manifest.
pub fn rebuild_report(dir: &Path) -> Result<Manifest> {
    let mut manifest = Manifest::load(dir)?;
    let tables = if manifest.n_phases == 0 {
        ReportTables::default()
    } else {
        ReportTables::load(dir)?
    };
    let mut e = Emitter {
        root: dir,
        files: std::mem::take(&mut manifest.files),
    };
    render(&tables, &manifest.failures, &mut e)?;
    manifest.files = e.files;
    manifest.write(dir)?;
    Ok(manifest)
}

fn cl_label(cl: Option<f64>) -> String {
    cl.map_or_else(|| "full".to_string(), |c| format!("CL {c}"))
}

fn render(tables: &ReportTables, failures: &[(u32, String)], e: &mut Emitter<'_>) -> Result<()> {
    if !tables.is_empty() {
        let boxes: Vec<(String, [f64; 5])> = tables
            .quartiles
            .iter()
            .map(|q| (q.metric.clone(), [q.min, q.q1, q.median, q.q3, q.max]))
            .collect();
        e.put(
            PLOTS[0],
            box_plot(
                "Detector metrics across RIS phase configurations",
                "value",
                &boxes,
            )
            .as_bytes(),
        )?;

        let best = tables
            .top
            .first()
            .map_or(tables.phases[0].phase_id, |t| t.phase_id);
        let rows: Vec<&ExitCsvRow> = tables.exit.iter().filter(|r| r.phase_id == best).collect();
        let cats: Vec<String> = rows.iter().map(|r| cl_label(r.cl)).collect();
        let pick = |g: fn(&ExitCsvRow) -> f64| rows.iter().map(|r| g(r)).collect::<Vec<_>>();
        let bars = [
            ("accuracy".to_string(), pick(|r| r.accuracy)),
            ("exit rate".to_string(), pick(|r| r.exit_rate)),
            ("MAC ratio".to_string(), pick(|r| r.mac_ratio)),
        ];
        e.put(
            PLOTS[1],
            bar_chart(
                &format!("Early exit on best phase {best}"),
                "value",
                &cats,
                &bars,
            )
            .as_bytes(),
        )?;

        let mut lines = Vec::new();
        for id in tables.top_ids() {
            let pts = |g: fn(&AsrCsvRow) -> f64| {
                tables
                    .asr
                    .iter()
                    .filter(|a| a.phase_id == id && !a.skipped)
                    .map(|a| (a.ratio, g(a)))
                    .collect::<Vec<_>>()
            };
            lines.push((format!("phase {id} ML"), false, pts(|a| a.asr_ml)));
            lines.push((format!("phase {id} true"), true, pts(|a| a.asr_true)));
        }
        e.put(
            PLOTS[2],
            line_chart(
                "Average secrecy rate versus legitimate-to-eavesdropper ratio",
                "legitimate-to-eavesdropper ratio",
                "ASR (bps/Hz)",
                &lines,
            )
            .as_bytes(),
        )?;
    }
    e.put(SUMMARY, summary(tables, failures).as_bytes())
}

fn summary(tables: &ReportTables, failures: &[(u32, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "phases completed: {}", tables.phases.len());
    for (id, err) in failures {
        let _ = writeln!(s, "phase {id} FAILED: {err}");
    }
    if tables.is_empty() {
        let _ = writeln!(s, "no results");
        return s;
    }
    let _ = writeln!(
        s,
        "\n[metric distribution] {METRIC_QUARTILES}, {}",
        PLOTS[0]
    );
    for q in &tables.quartiles {
        let _ = writeln!(
            s,
            "  {:<9} min {:.4}  q1 {:.4}  median {:.4}  q3 {:.4}  max {:.4}{}",
            q.metric,
            q.min,
            q.q1,
            q.median,
            q.q3,
            q.max,
            if q.partial {
                "  (fewer than 4 phases)"
            } else {
                ""
            }
        );
    }
    if let Some(best) = tables.top.first() {
        let _ = writeln!(
            s,
            "\n[early exit, best phase {}] {EARLY_EXIT}, {}",
            best.phase_id, PLOTS[1]
        );
        for r in tables.exit.iter().filter(|r| r.phase_id == best.phase_id) {
            let _ = writeln!(
                s,
                "  {:<8} accuracy {:.4}  exit rate {:.4}  MAC ratio {:.4}",
                cl_label(r.cl),
                r.accuracy,
                r.exit_rate,
                r.mac_ratio
            );
        }
    }
    let _ = writeln!(
        s,
        "\n[secrecy vs ratio, top phases {:?}] {ASR_VS_RATIO}, {}",
        tables.top_ids(),
        PLOTS[2]
    );
    for id in tables.top_ids() {
        for a in tables.asr.iter().filter(|a| a.phase_id == id) {
            if a.skipped {
                let _ = writeln!(
                    s,
                    "  phase {id} ratio {}: skipped (no eavesdroppers)",
                    a.ratio
                );
            } else {
                let _ = writeln!(
                    s,
                    "  phase {id} ratio {}: ML {:.4}  true labels {:.4}",
                    a.ratio, a.asr_ml, a.asr_true
                );
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    #[test]
    fn empty_campaign_writes_summary_and_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let campaign = Campaign {
            config: ScenarioConfig::desk(),
            phases: Vec::new(),
            failures: vec![(3, "boom".into())],
        };
        let m = emit_report(&campaign, dir.path()).unwrap();
        assert_eq!(
            m.files.iter().map(|f| f.path.as_str()).collect::<Vec<_>>(),
            vec![SUMMARY]
        );
        assert!(!m.complete);
        let mut names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, vec![MANIFEST.to_string(), SUMMARY.to_string()]);
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
        assert_eq!(rebuild_report(dir.path()).unwrap(), m);
    }

    #[test]
    fn csv_rows_round_trip() {
        let rows = vec![
            ExitCsvRow {
                phase_id: 2,
                cl: None,
                accuracy: 0.9,
                exit_rate: 0.0,
                mac_ratio: 1.0,
            },
            ExitCsvRow {
                phase_id: 2,
                cl: Some(0.55),
                accuracy: 0.1 + 0.2,
                exit_rate: 1.0 / 3.0,
                mac_ratio: 0.68,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, csv_bytes(&rows).unwrap()).unwrap();
        assert_eq!(read_csv::<ExitCsvRow>(&p).unwrap(), rows);
        let nan = vec![AsrCsvRow {
            phase_id: 0,
            ratio: 9.0,
            n_legit: 10,
            n_eve: 0,
            asr_ml: f64::NAN,
            asr_true: f64::NAN,
            skipped: true,
        }];
        std::fs::write(&p, csv_bytes(&nan).unwrap()).unwrap();
        let back = read_csv::<AsrCsvRow>(&p).unwrap();
        assert!(back[0].asr_ml.is_nan() && back[0].skipped);
    }
}
