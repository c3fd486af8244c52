//! `simulate`: generate topologies and datasets, train the federated
//! detector, evaluate it and run the experiment campaigns.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sentinel_core::dataset::{
    inspect as inspect_dataset, load_dataset, model_inputs, save_dataset, NormStats,
};

use sentinel_core::experiments::{
    asr_curve, build_topology, checkpoint_path, csv_bytes, early_exit_study, emit_report,
    model_from_checkpoint, model_predictor, phase_dataset, phase_dir, rebuild_report,
    run_phase_sweep, split_phase, train_phase_model, AsrCsvRow, ExitCsvRow, Manifest,
};
use sentinel_core::federated::round_log;
use sentinel_core::io::{content_hash, read_file, write_atomic};
use sentinel_core::nn::checkpoint::decode as decode_checkpoint;
use sentinel_core::nn::{evaluate, EarlyExitPolicy, ModelParams};
use sentinel_core::scenario::load_config_over;
use sentinel_core::{Error, Result, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(
    name = "simulate",
    version,
    about = "RIS-assisted cell-free eavesdropper detection simulator"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config; absent keys take the desk (or --full) defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "SIMULATE_OUT", default_value = "results")]
    out: PathBuf,
    /// Start from the full reference scale instead of the desk defaults.
    #[arg(long, global = true)]
    full: bool,
    /// Worker threads. Affects speed only, never outputs.
    #[arg(long, global = true, default_value_t = default_jobs())]
    jobs: usize,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Place APs, RIS panels and UEs and write topology.csv.
    GenTopology,
    /// Generate the CSI dataset of one RIS phase configuration.
    GenDataset(PhaseArg),
    /// Train the federated detector on a generated dataset.
    TrainFl(TrainArgs),
    /// Evaluate a trained model on its phase's held-out split.
    Evaluate(EvalArgs),
    /// Train and evaluate every phase configuration and write the report.
    Sweep(SweepArgs),
    /// Early-exit accuracy and cost of a swept model per confidence level.
    ExitStudy(ExitArgs),
    /// Secrecy rate versus legitimate-to-eavesdropper ratio for the top phases.
    Asr(AsrArgs),
    /// Rebuild charts and summary from the CSV tables in --out.
    Report,
    /// Describe a dataset, checkpoint or manifest file.
    Inspect { path: PathBuf },
}

#[derive(Debug, Args)]
struct PhaseArg {
    /// RIS phase configuration id.
    #[arg(long, default_value_t = 0)]
    phase: u32,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    phase: PhaseArg,
    /// Dataset file; defaults to the one gen-dataset writes.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    phase: PhaseArg,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint file; defaults to the one train-fl writes.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Early-exit confidence level; full inference when absent.
    #[arg(long)]
    cl: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Number of phase configurations (overrides the config).
    #[arg(long)]
    phases: Option<usize>,
}

#[derive(Debug, Args)]
struct ExitArgs {
    /// Confidence levels; defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    cl: Option<Vec<f64>>,
    /// Phase to study; defaults to the sweep's best phase.
    #[arg(long)]
    phase: Option<u32>,
}

#[derive(Debug, Args)]
struct AsrArgs {
    /// How many of the sweep's best phases to evaluate.
    #[arg(long)]
    top: Option<usize>,
    /// Legitimate-to-eavesdropper ratios; defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
}

fn effective_config(c: &Common) -> Result<ScenarioConfig> {
    let base = if c.full {
        ScenarioConfig::default()
    } else {
        ScenarioConfig::desk()
    };
    let mut cfg = match &c.config {
        Some(path) => {
            let text = String::from_utf8(read_file(path)?)
                .map_err(|_| Error::ConfigParse(format!("{} is not UTF-8", path.display())))?;
            load_config_over(&text, &base)?
        }
        None => base,
    };
    if let Some(seed) = c.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_path(out: &Path, phase: u32) -> PathBuf {
    out.join(phase_dir(phase)).join("dataset.csi")
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "required input file is missing",
            ),
        })
    }
}

/// The sweep's phases from the manifest, best first.
fn ranked_phases(out: &Path) -> Result<Vec<u32>> {
    let m = Manifest::load(out)?;
    if m.top_phases.is_empty() {
        return Err(Error::Dataset(format!(
            "{} lists no completed phases",
            out.join("manifest.json").display()
        )));
    }
    Ok(m.top_phases)
}

fn load_model(path: &Path) -> Result<(ModelParams, NormStats)> {
    require(path)?;
    model_from_checkpoint(&decode_checkpoint(&read_file(path)?)?)
}

fn run(cmd: &Command, c: &Common, cfg: &ScenarioConfig) -> Result<(String, bool)> {
    let out = &c.out;
    let ok = |s: String| Ok((s, true));
    match cmd {
        Command::GenTopology => {
            let topo = build_topology(cfg)?;
            let path = out.join("topology.csv");
            let csv = topo.to_csv();
            write_atomic(&path, csv.as_bytes())?;
            ok(format!(
                "topology: {} APs, {} RIS, {} UEs ({} eavesdroppers) -> {} sha256 {}",
                topo.n_ap(),
                topo.n_ris(),
                topo.n_ue(),
                topo.n_eve(),
                path.display(),
                content_hash(csv.as_bytes())
            ))
        }
        Command::GenDataset(a) => {
            let topo = build_topology(cfg)?;
            let (_, ds) = phase_dataset(cfg, &topo, a.phase)?;
            let path = dataset_path(out, a.phase);
            save_dataset(&ds, &path)?;
            let (legit, eve) = ds.class_counts();
            ok(format!(
                "dataset phase {}: {} samples ({legit} legitimate, {eve} eavesdroppers) -> {} sha256 {}",
                a.phase,
                ds.len(),
                path.display(),
                ds.content_hash()
            ))
        }
        Command::TrainFl(a) => {
            let path = a
                .dataset
                .clone()
                .unwrap_or_else(|| dataset_path(out, a.phase.phase));
            require(&path)?;
            let ds = load_dataset(&path)?;
            let topo = build_topology(cfg)?;
            let model = train_phase_model(cfg, &topo, &ds, a.phase.phase)?;
            let dir = out.join(phase_dir(a.phase.phase));
            let ck = dir.join("model.eeck");
            write_atomic(&ck, &model.checkpoint)?;
            write_atomic(
                &dir.join("rounds.jsonl"),
                round_log(&model.history).as_bytes(),
            )?;
            let acc = model
                .history
                .last()
                .and_then(|r| r.test.as_ref())
                .map_or(f64::NAN, |m| m.accuracy);
            ok(format!(
                "trained phase {}: {} rounds, test accuracy {acc:.4} -> {} sha256 {}",
                a.phase.phase,
                model.history.len(),
                ck.display(),
                content_hash(&model.checkpoint)
            ))
        }
        Command::Evaluate(a) => {
            let phase = a.phase.phase;
            let ds_path = a
                .dataset
                .clone()
                .unwrap_or_else(|| dataset_path(out, phase));
            let ck_path = a
                .model
                .clone()
                .unwrap_or_else(|| out.join(checkpoint_path(phase)));
            require(&ds_path)?;
            let (params, stats) = load_model(&ck_path)?;
            let (_, test) = split_phase(cfg, &load_dataset(&ds_path)?, phase)?;
            let policy = a.cl.map(EarlyExitPolicy::new).transpose()?;
            let m = evaluate(&params, &model_inputs(&test, &stats), policy)?;
            let json = serde_json::to_string_pretty(&m).expect("metrics serialise");
            let path = out.join(phase_dir(phase)).join("evaluation.json");
            write_atomic(&path, json.as_bytes())?;
            ok(format!(
                "evaluated phase {phase}: accuracy {:.4}, eavesdropper recall {:.4}, macro F1 {:.4} -> {}",
                m.accuracy,
                m.eve.recall,
                m.macro_avg.f1,
                path.display()
            ))
        }
        Command::Sweep(a) => {
            let mut cfg = cfg.clone();
            if let Some(n) = a.phases {
                cfg.experiments.n_phase_configs = n;
            }
            cfg.validate()?;
            let campaign = run_phase_sweep(&cfg, c.jobs)?;
            let manifest = emit_report(&campaign, out)?;
            let best = campaign.best().map_or("none".to_string(), |b| {
                format!(
                    "{} (accuracy {:.4})",
                    b.result.phase_id, b.result.metrics.accuracy
                )
            });
            Ok((
                format!(
                    "sweep: {}/{} phases complete, best phase {best}, {} files -> {}",
                    campaign.phases.len(),
                    cfg.experiments.n_phase_configs,
                    manifest.files.len(),
                    out.join("manifest.json").display()
                ),
                campaign.complete(),
            ))
        }
        Command::ExitStudy(a) => {
            let phase = match a.phase {
                Some(p) => p,
                None => ranked_phases(out)?[0],
            };
            let cls =
                a.cl.clone()
                    .unwrap_or_else(|| cfg.training.early_exit_cl.clone());
            let (params, stats) = load_model(&out.join(checkpoint_path(phase)))?;
            let topo = build_topology(cfg)?;
            let (_, ds) = phase_dataset(cfg, &topo, phase)?;
            let (_, test) = split_phase(cfg, &ds, phase)?;
            let rows: Vec<ExitCsvRow> =
                early_exit_study(&params, &model_inputs(&test, &stats), &cls)?
                    .into_iter()
                    .map(|r| ExitCsvRow {
                        phase_id: phase,
                        cl: r.cl,
                        accuracy: r.accuracy,
                        exit_rate: r.exit_rate,
                        mac_ratio: r.mac_ratio,
                    })
                    .collect();
            let path = out.join("exit_study.csv");
            write_atomic(&path, &csv_bytes(&rows)?)?;
            let cells: Vec<String> = rows
                .iter()
                .filter_map(|r| {
                    r.cl.map(|cl| {
                        format!(
                            "CL {cl}: exit {:.3} MAC {:.3} acc {:.3}",
                            r.exit_rate, r.mac_ratio, r.accuracy
                        )
                    })
                })
                .collect();
            ok(format!(
                "exit study phase {phase}: {} -> {}",
                cells.join("; "),
                path.display()
            ))
        }
        Command::Asr(a) => {
            let top = a.top.unwrap_or(cfg.experiments.top_k);
            let ratios = a
                .ratios
                .clone()
                .unwrap_or_else(|| cfg.experiments.ratios.clone());
            let mut check = cfg.clone();
            check.experiments.ratios = ratios.clone();
            check.validate()?;
            let mut rows = Vec::new();
            for phase in ranked_phases(out)?.into_iter().take(top) {
                let (params, stats) = load_model(&out.join(checkpoint_path(phase)))?;
                for p in asr_curve(cfg, phase, &ratios, &model_predictor(&params, &stats))? {
                    rows.push(AsrCsvRow {
                        phase_id: phase,
                        ratio: p.ratio,
                        n_legit: p.n_legit,
                        n_eve: p.n_eve,
                        asr_ml: p.asr_ml,
                        asr_true: p.asr_true,
                        skipped: p.skipped,
                    });
                }
            }
            let path = out.join("asr_study.csv");
            write_atomic(&path, &csv_bytes(&rows)?)?;
            let phases: std::collections::BTreeSet<u32> = rows.iter().map(|r| r.phase_id).collect();
            ok(format!(
                "asr: {} phases x {} ratios -> {}",
                phases.len(),
                ratios.len(),
                path.display()
            ))
        }
        Command::Report => {
            let m = rebuild_report(out)?;
            ok(format!(
                "report: {} phases, {} files, complete {} -> {}",
                m.n_phases,
                m.files.len(),
                m.complete,
                out.join("manifest.json").display()
            ))
        }
        Command::Inspect { path } => inspect(path).map(|s| (s, true)),
    }
}

fn inspect(path: &Path) -> Result<String> {
    let bytes = read_file(path)?;
    let hash = content_hash(&bytes);
    match bytes.get(..4) {
        Some(b"CSI1") => {
            let s = inspect_dataset(path)?;
            Ok(format!(
                "dataset {}: {}x{}x{} {:?}, {} samples ({} legitimate, {} eavesdroppers), sha256 {}",
                path.display(),
                s.h,
                s.w,
                s.c,
                s.tag,
                s.n,
                s.n_legit,
                s.n_eve,
                s.hash
            ))
        }
        Some(b"EECK") => {
            let ck = decode_checkpoint(&bytes)?;
            let a = ck.params.arch;
            Ok(format!(
                "checkpoint {}: input {}x{}x{}, {} parameters, {} extra tensors, sha256 {hash}",
                path.display(),
                a.in_h,
                a.in_w,
                a.in_c,
                ck.params.param_count(),
                ck.extras.len()
            ))
        }
        _ => {
            let m: Manifest = serde_json::from_slice(&bytes).map_err(|_| {
                Error::Format(format!(
                    "{}: not a dataset, checkpoint or manifest",
                    path.display()
                ))
            })?;
            Ok(format!(
                "manifest {}: {} phases, complete {}, top {:?}, {} files",
                path.display(),
                m.n_phases,
                m.complete,
                m.top_phases,
                m.files.len()
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let cfg = match effective_config(&cli.common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if cli.common.print_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = &cli.command else {
        eprintln!("error: a subcommand is required\n\nRun `simulate --help` for usage.");
        return ExitCode::from(2);
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.jobs.max(1))
        .build_global();
    if let Err(e) = pool {
        log::warn!("thread pool already configured: {e}");
    }
    match run(cmd, &cli.common, &cfg) {
        Ok((line, complete)) => {
            println!("{line}");
            if complete {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: some phases failed; see the manifest");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
