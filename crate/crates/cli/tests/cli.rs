use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "[topology]\nn_ue = 60\n[training]\nrounds = 1\n[experiments]\nn_phase_configs = 2\ntop_k = 2\n";

fn simulate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simulate"))
        .current_dir(dir)
        .env_remove("SIMULATE_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn sha_field(line: &str) -> &str {
    line.rsplit("sha256 ").next().unwrap().trim()
}

#[test]
fn gen_dataset_is_deterministic_per_seed() {
    let dir = setup();
    let run = |out: &str, seed: &str| {
        let o = simulate(
            dir.path(),
            &[
                "--config",
                "tiny.toml",
                "--seed",
                seed,
                "--out",
                out,
                "gen-dataset",
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        sha_field(&stdout(&o)).to_string()
    };
    let a = run("a", "7");
    let b = run("b", "7");
    let c = run("c", "8");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(
        std::fs::read(dir.path().join("a/phases/phase_000/dataset.csi")).unwrap(),
        std::fs::read(dir.path().join("b/phases/phase_000/dataset.csi")).unwrap()
    );
}

#[test]
fn train_without_dataset_names_the_missing_file() {
    let dir = setup();
    let o = simulate(
        dir.path(),
        &[
            "--config",
            "tiny.toml",
            "--out",
            "o",
            "train-fl",
            "--phase",
            "4",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("phase_004/dataset.csi"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn usage_errors_exit_two() {
    let dir = setup();
    for args in [
        &["--bogus"][..],
        &["frobnicate"],
        &[],
        &["sweep", "--phases", "many"],
    ] {
        let o = simulate(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let help = simulate(dir.path(), &["sweep", "--help"]);
    assert!(help.status.success());
    assert!(stdout(&help).contains("--phases"));
}

#[test]
fn bad_config_is_a_runtime_error() {
    let dir = setup();
    std::fs::write(
        dir.path().join("bad.toml"),
        "[training]\nearly_exit_cl = [1.5]\n",
    )
    .unwrap();
    let o = simulate(dir.path(), &["--config", "bad.toml", "gen-topology"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("early_exit_cl"), "{}", stderr(&o));
}

#[test]
fn print_config_reflects_overrides() {
    let dir = setup();
    let o = simulate(
        dir.path(),
        &["--config", "tiny.toml", "--seed", "42", "--print-config"],
    );
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("master_seed = 42"));
    assert!(text.contains("n_ue = 60"));
    let full = simulate(dir.path(), &["--full", "--print-config"]);
    assert!(stdout(&full).contains("n_ue = 500"));
    let desk = simulate(dir.path(), &["--print-config"]);
    assert!(stdout(&desk).contains("n_ue = 150"));
}

#[test]
fn pipeline_and_sweep_are_independent_of_jobs() {
    let dir = setup();
    let base = ["--config", "tiny.toml"];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        let o = simulate(dir.path(), &args);
        assert!(o.status.success(), "{extra:?}: {}", stderr(&o));
        stdout(&o)
    };
    run(&["--out", "j1", "--jobs", "1", "sweep"]);
    run(&["--out", "j3", "--jobs", "3", "sweep"]);
    let m1 = std::fs::read_to_string(dir.path().join("j1/manifest.json")).unwrap();
    let m3 = std::fs::read_to_string(dir.path().join("j3/manifest.json")).unwrap();
    assert_eq!(m1, m3);

    // Follow-up studies read the sweep's artifacts.
    let exit = run(&["--out", "j1", "exit-study", "--cl", "0.5,0.55,0.7"]);
    assert!(exit.contains("CL 0.5: exit 1.000"), "{exit}");
    run(&["--out", "j1", "asr", "--top", "1", "--ratios", "2,5.5"]);
    let asr = std::fs::read_to_string(dir.path().join("j1/asr_study.csv")).unwrap();
    assert_eq!(asr.lines().count(), 3);
    let report = run(&["--out", "j1", "report"]);
    assert!(report.contains("complete true"));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("j1/manifest.json")).unwrap(),
        m1
    );

    let ins = run(&["inspect", "j1/phases/phase_000/model.eeck"]);
    assert!(ins.contains("26594 parameters"), "{ins}");
    let ins = run(&["inspect", "j1/manifest.json"]);
    assert!(ins.contains("2 phases"), "{ins}");

    // Stand-alone train and evaluate reproduce the sweep's checkpoint.
    run(&["--out", "j1", "gen-dataset", "--phase", "1"]);
    let trained = run(&["--out", "j1", "train-fl", "--phase", "1"]);
    assert!(m1.contains(sha_field(&trained)), "{trained}");
    let eval = run(&["--out", "j1", "evaluate", "--phase", "1"]);
    assert!(eval.contains("accuracy"));
    let ins = run(&["inspect", "j1/phases/phase_001/dataset.csi"]);
    assert!(ins.contains("60 samples"), "{ins}");
}
