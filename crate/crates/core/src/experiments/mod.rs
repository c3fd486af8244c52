//! Campaigns over RIS phase configurations: per-phase training and
//! evaluation, metric spread, the early-exit study and secrecy versus the
//! legitimate-to-eavesdropper ratio.

mod report;
mod svg;

pub use report::{
    checkpoint_path, csv_bytes, emit_report, phase_dir, read_csv, rebuild_report,
    write_phase_outputs, AsrCsvRow, ExitCsvRow, Manifest, ManifestEntry, PhaseRow, ReportTables,
    TopRow, PLOTS,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelField;
use crate::dataset::{
    generate_dataset, model_inputs, partition_clients, split, split_stream_id, Dataset, NormStats,
};
use crate::error::{Error, Result};
use crate::federated::{
    round_log, run_training, training_clients, Client, LocalClient, RoundRecord,
};
use crate::io::content_hash;
use crate::network::{PhaseRealization, SecrecyOutcome};
use crate::nn::checkpoint::{decode, encode, Checkpoint, Precision};
use crate::nn::{
    decide, evaluate, predict_all, Arch, EarlyExitPolicy, LabeledSet, Metrics, ModelParams,
};
use crate::scenario::{derive_stream, ScenarioConfig};
use crate::topology::{place_entities, Topology};

/// Metrics of the early-exit model at one confidence level; `cl = None`
/// is full inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitRow {
    pub cl: Option<f64>,
    pub accuracy: f64,
    pub exit_rate: f64,
    pub mac_ratio: f64,
}

/// Secrecy at one legitimate-to-eavesdropper ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsrPoint {
    pub ratio: f64,
    pub n_legit: usize,
    pub n_eve: usize,
    /// Adversary set from the classifier's predictions.
    pub asr_ml: f64,
    /// Adversary set from the true labels.
    pub asr_true: f64,
    /// No eavesdropper exists at this ratio; the point is not meaningful.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseResult {
    pub phase_id: u32,
    pub metrics: Metrics,
    pub exit: Vec<ExitRow>,
    pub asr_by_ratio: Vec<AsrPoint>,
    pub dataset_hash: String,
    pub checkpoint_hash: String,
}

/// Everything one phase produces, including the artifacts written to disk.
#[derive(Debug, Clone)]
pub struct PhaseArtifacts {
    pub result: PhaseResult,
    pub params: ModelParams,
    pub stats: NormStats,
    pub history: Vec<RoundRecord>,
    pub checkpoint: Vec<u8>,
    pub secrecy: SecrecyOutcome,
    pub test: LabeledSet,
}

impl PhaseArtifacts {
    pub fn round_log(&self) -> String {
        round_log(&self.history)
    }
}

pub fn build_topology(config: &ScenarioConfig) -> Result<Topology> {
    place_entities(config, &derive_stream(config, "topology"))
}

pub fn model_arch(config: &ScenarioConfig) -> Arch {
    Arch::with_input(
        config.radio.ap_antennas,
        config.radio.n_rb,
        crate::dataset::CHANNELS,
    )
}

/// Channels, association and the labelled dataset of one phase.
pub fn phase_dataset(
    config: &ScenarioConfig,
    topology: &Topology,
    phase_id: u32,
) -> Result<(PhaseRealization, Dataset)> {
    let field = ChannelField::generate(config, topology, phase_id);
    let real = PhaseRealization::realize_with(&field)?;
    let ds = generate_dataset(&field, &real.association, &real.ris)?;
    Ok((real, ds))
}

/// Model checkpoint bytes (32-bit file format) including input statistics.
pub fn checkpoint_file_bytes(params: &ModelParams, stats: &NormStats) -> Vec<u8> {
    encode(
        &Checkpoint {
            params: params.clone(),
            extras: stats.to_tensors().to_vec(),
        },
        Precision::F32,
    )
}

/// Weights and input statistics of a stored model.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<(ModelParams, NormStats)> {
    let [mean, std] = ["input_norm.mean", "input_norm.std"].map(|k| {
        ck.extra(k)
            .ok_or_else(|| Error::Integrity(format!("checkpoint lacks {k}")))
    });
    Ok((ck.params.clone(), NormStats::from_tensors(mean?, std?)?))
}

/// A model-derived adversary flag per UE of `topology`.
pub type Predictor<'a> = dyn Fn(&Topology, &Dataset) -> Result<Vec<bool>> + Sync + 'a;

/// Classify every UE with a trained model.
pub fn model_predictor<'a>(
    params: &'a ModelParams,
    stats: &'a NormStats,
) -> impl Fn(&Topology, &Dataset) -> Result<Vec<bool>> + Sync + 'a {
    move |_topo: &Topology, ds: &Dataset| {
        let inputs = model_inputs(ds, stats);
        let out = predict_all(params, &inputs.inputs, None)?;
        Ok(out.into_iter().map(|(p, _)| decide(p) == 1).collect())
    }
}

/// The true labels as the adversary set.
pub fn truth_predictor(topo: &Topology, _ds: &Dataset) -> Result<Vec<bool>> {
    Ok(topo.ue_is_eve.clone())
}

/// ASR for each ratio. The topology is rebuilt with
/// `legit_fraction = r / (r + 1)` from the same topology stream, and the
/// channels of `phase_id` are regenerated on it.
pub fn asr_curve(
    config: &ScenarioConfig,
    phase_id: u32,
    ratios: &[f64],
    predictor: &Predictor<'_>,
) -> Result<Vec<AsrPoint>> {
    let mut sorted = ratios.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .iter()
        .map(|&ratio| {
            if !(ratio.is_finite() && ratio > 0.0) {
                return Err(Error::invariant(
                    "ratio out of range",
                    format!("{ratio} must be positive"),
                ));
            }
            let mut cfg = config.clone();
            cfg.topology.legit_fraction = ratio / (ratio + 1.0);
            let topo = build_topology(&cfg)?;
            let n_eve = topo.n_eve();
            let n_legit = topo.n_ue() - n_eve;
            if n_eve == 0 {
                log::warn!("ratio {ratio}: no eavesdroppers, point skipped");
                return Ok(AsrPoint {
                    ratio,
                    n_legit,
                    n_eve,
                    asr_ml: f64::NAN,
                    asr_true: f64::NAN,
                    skipped: true,
                });
            }
            let (real, ds) = phase_dataset(&cfg, &topo, phase_id)?;
            let predicted = predictor(&topo, &ds)?;
            let asr_ml = real.secrecy(&cfg, &topo, &predicted).report.asr;
            let asr_true = real.secrecy(&cfg, &topo, &topo.ue_is_eve).report.asr;
            Ok(AsrPoint {
                ratio,
                n_legit,
                n_eve,
                asr_ml,
                asr_true,
                skipped: false,
            })
        })
        .collect()
}

/// Accuracy, exit rate and MAC ratio per confidence level, after the
/// full-inference baseline row.
pub fn early_exit_study(
    params: &ModelParams,
    test: &LabeledSet,
    cls: &[f64],
) -> Result<Vec<ExitRow>> {
    let full = evaluate(params, test, None)?;
    let mut rows = vec![ExitRow {
        cl: None,
        accuracy: full.accuracy,
        exit_rate: 0.0,
        mac_ratio: 1.0,
    }];
    for &cl in cls {
        let m = evaluate(params, test, Some(EarlyExitPolicy::new(cl)?))?;
        rows.push(ExitRow {
            cl: Some(cl),
            accuracy: m.accuracy,
            exit_rate: m.exit_rate.unwrap_or(0.0),
            mac_ratio: m.mac_ratio.unwrap_or(1.0),
        });
    }
    Ok(rows)
}

/// A federated model trained on one phase's dataset, as stored on disk.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub stats: NormStats,
    pub history: Vec<RoundRecord>,
    /// 32-bit checkpoint file bytes including the input statistics.
    pub checkpoint: Vec<u8>,
    pub test: Dataset,
}

/// The held-out part of a phase dataset, from the phase's split stream.
pub fn split_phase(
    config: &ScenarioConfig,
    ds: &Dataset,
    phase_id: u32,
) -> Result<(Dataset, Dataset)> {
    let mut rng = derive_stream(config, &split_stream_id(phase_id)).rng();
    split(ds, config.dataset.train_ratio, &mut rng)
}

/// Split, partition across the training APs and run federated training.
/// The returned weights and statistics are read back from the checkpoint
/// bytes, so evaluation matches a model loaded from file.
pub fn train_phase_model(
    config: &ScenarioConfig,
    topology: &Topology,
    ds: &Dataset,
    phase_id: u32,
) -> Result<TrainedModel> {
    if ds.len() != topology.n_ue() {
        return Err(Error::Integrity(format!(
            "dataset has {} samples but the topology has {} UEs",
            ds.len(),
            topology.n_ue()
        )));
    }
    let (train, test) = split_phase(config, ds, phase_id)?;
    let stats = NormStats::compute(&train)?;
    let shards = partition_clients(&train, &training_clients(config, topology), topology)?;
    let clients: Vec<Box<dyn Client>> = shards
        .iter()
        .map(|s| {
            Box::new(LocalClient::new(
                s.client_ap,
                model_inputs(&s.data, &stats),
                config.master_seed,
            )) as Box<dyn Client>
        })
        .collect();
    let (trained, history) = run_training(
        config,
        model_arch(config),
        &clients,
        Some(&model_inputs(&test, &stats)),
    )?;
    let checkpoint = checkpoint_file_bytes(&trained, &stats);
    let (params, stats) = model_from_checkpoint(&decode(&checkpoint)?)?;
    Ok(TrainedModel {
        params,
        stats,
        history,
        checkpoint,
        test,
    })
}

/// Dataset, split, federated training and evaluation for one phase.
pub fn run_phase(
    config: &ScenarioConfig,
    topology: &Topology,
    phase_id: u32,
) -> Result<PhaseArtifacts> {
    let (real, ds) = phase_dataset(config, topology, phase_id)?;
    let model = train_phase_model(config, topology, &ds, phase_id)?;
    let test_set = model_inputs(&model.test, &model.stats);
    let metrics = evaluate(&model.params, &test_set, None)?;
    let exit = early_exit_study(&model.params, &test_set, &config.training.early_exit_cl)?;
    let asr_by_ratio = asr_curve(
        config,
        phase_id,
        &config.experiments.ratios,
        &model_predictor(&model.params, &model.stats),
    )?;
    Ok(PhaseArtifacts {
        result: PhaseResult {
            phase_id,
            metrics,
            exit,
            asr_by_ratio,
            dataset_hash: ds.content_hash(),
            checkpoint_hash: content_hash(&model.checkpoint),
        },
        params: model.params,
        stats: model.stats,
        history: model.history,
        checkpoint: model.checkpoint,
        secrecy: real.secrecy(config, topology, &topology.ue_is_eve),
        test: test_set,
    })
}

/// Outcome of a sweep: completed phases plus the failures.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub config: ScenarioConfig,
    pub phases: Vec<PhaseArtifacts>,
    pub failures: Vec<(u32, String)>,
}

impl Campaign {
    pub fn results(&self) -> Vec<&PhaseResult> {
        self.phases.iter().map(|p| &p.result).collect()
    }

    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// Phase ids ranked by accuracy (descending, lower id on ties).
    pub fn ranked_phases(&self) -> Vec<u32> {
        let mut r: Vec<(f64, u32)> = self
            .phases
            .iter()
            .map(|p| (p.result.metrics.accuracy, p.result.phase_id))
            .collect();
        r.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        r.into_iter().map(|(_, id)| id).collect()
    }

    pub fn top_k(&self, k: usize) -> Vec<u32> {
        self.ranked_phases().into_iter().take(k).collect()
    }

    pub fn best(&self) -> Option<&PhaseArtifacts> {
        let id = *self.ranked_phases().first()?;
        self.phases.iter().find(|p| p.result.phase_id == id)
    }
}

/// Run phases `0..n_phase_configs` on a pool of `jobs` threads. Every
/// phase draws from its own streams, so results do not depend on `jobs`.
/// A failing phase is recorded and the others continue.
pub fn run_phase_sweep(config: &ScenarioConfig, jobs: usize) -> Result<Campaign> {
    config.validate()?;
    let topology = build_topology(config)?;
    let ids: Vec<u32> = (0..config.experiments.n_phase_configs as u32).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Integrity(format!("thread pool: {e}")))?;
    let outcomes: Vec<(u32, Result<PhaseArtifacts>)> = pool.install(|| {
        use rayon::prelude::*;
        ids.par_iter()
            .map(|id| (*id, run_phase(config, &topology, *id)))
            .collect()
    });
    let mut phases = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in outcomes {
        match r {
            Ok(p) => phases.push(p),
            Err(e) => {
                log::error!("phase {id} failed: {e}");
                failures.push((id, e.to_string()));
            }
        }
    }
    Ok(Campaign {
        config: config.clone(),
        phases,
        failures,
    })
}

/// Linear-interpolation quantile at position `(n - 1) p` of the sorted
/// values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileRow {
    pub metric: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Fewer than four values: the quartiles are not meaningful.
    pub partial: bool,
}

pub fn summarize(metric: &str, values: &[f64]) -> Option<QuartileRow> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(QuartileRow {
        metric: metric.to_string(),
        n: v.len(),
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
        partial: v.len() < 4,
    })
}

/// Quartiles of accuracy and macro precision, recall and F1 across phases.
pub fn metric_distribution(results: &[&PhaseResult]) -> Vec<QuartileRow> {
    let pick: [(&str, fn(&Metrics) -> f64); 4] = [
        ("accuracy", |m| m.accuracy),
        ("precision", |m| m.macro_avg.precision),
        ("recall", |m| m.macro_avg.recall),
        ("f1", |m| m.macro_avg.f1),
    ];
    pick.iter()
        .filter_map(|(name, f)| {
            summarize(
                name,
                &results.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>(),
            )
        })
        .collect()
}

/// ASR curves of the selected phases, keyed by phase id.
pub fn asr_vs_ratio_study(
    campaign: &Campaign,
    top_phase_ids: &[u32],
) -> BTreeMap<u32, Vec<AsrPoint>> {
    campaign
        .phases
        .iter()
        .filter(|p| top_phase_ids.contains(&p.result.phase_id))
        .map(|p| (p.result.phase_id, p.result.asr_by_ratio.clone()))
        .collect()
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_rule_anchor() {
        let q = summarize("m", &[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(q.median, 2.5);
        assert_eq!((q.min, q.max), (1.0, 4.0));
        assert_eq!((q.q1, q.q3), (1.75, 3.25));
        assert!(!q.partial);
        let c = summarize("m", &[0.8; 6]).unwrap();
        assert_eq!(
            (c.min, c.q1, c.median, c.q3, c.max),
            (0.8, 0.8, 0.8, 0.8, 0.8)
        );
        assert!(summarize("m", &[1.0, 2.0]).unwrap().partial);
    }

    #[test]
    fn quantiles_match_sorted_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let q = summarize("m", &v).unwrap();
        let mut s = v.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // (n-1)p = 4.75, 9.5, 14.25
        assert!((q.q1 - (s[4] + 0.75 * (s[5] - s[4]))).abs() < 1e-15);
        assert!((q.median - (s[9] + s[10]) / 2.0).abs() < 1e-15);
        assert!((q.q3 - (s[14] + 0.25 * (s[15] - s[14]))).abs() < 1e-15);
    }

    #[test]
    fn spearman_anchors() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 5.0, 6.0, 9.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    fn tiny() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::desk();
        cfg.topology.n_ue = 40;
        cfg
    }

    #[test]
    fn truth_labels_make_curves_coincide() {
        let cfg = tiny();
        let pts = asr_curve(&cfg, 0, &[5.5, 2.0], &truth_predictor).unwrap();
        assert_eq!(
            pts.iter().map(|p| p.ratio).collect::<Vec<_>>(),
            vec![2.0, 5.5]
        );
        for p in &pts {
            assert_eq!(p.asr_ml.to_bits(), p.asr_true.to_bits());
        }
    }

    #[test]
    fn missing_every_eavesdropper_cannot_lower_asr() {
        let cfg = tiny();
        let blind = |topo: &Topology, _: &Dataset| Ok(vec![false; topo.n_ue()]);
        for p in asr_curve(&cfg, 1, &[2.0], &blind).unwrap() {
            assert!(p.asr_ml >= p.asr_true);
        }
    }

    #[test]
    fn ratio_without_eavesdroppers_is_skipped() {
        let mut cfg = tiny();
        cfg.topology.n_ue = 10;
        let pts = asr_curve(&cfg, 0, &[100.0], &truth_predictor).unwrap();
        assert!(pts[0].skipped);
    }
}
