use std::path::Path;
use std::process::Command;

use omgpt::dataset::read_dataset;

const MAB: &str = "seed = 2\n\
[task]\nfamily = \"mab\"\narms = 4\n\
[prior]\nhorizon = 5\npool_size = 2\n\
[model]\nn_layers = 2\nn_heads = 2\nembed_dim = 8\n\
[train]\niterations = 4\nearly_iterations = 2\nsequences_per_iteration = 4\nbatch_size = 4\n\
lr = 1e-3\npool_size = 12\nholdout_size = 4\nholdout_every = 2\ncheckpoint_every = 2\n\
[eval]\nruns = 3\npolicies = [\"oracle\", \"ucb\", \"tf\"]\n\
[probe]\nepisodes = 16\n";

fn omgpt(dir: &Path, args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_omgpt"));
    c.current_dir(dir).args(args).env_remove("OMGPT_SEED").env_remove("OMGPT_OUT");
    c
}

fn code(c: &mut Command) -> i32 {
    c.output().expect("binary runs").status.code().expect("exit code")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn config_errors_exit_with_two() {
    let dir = setup(&MAB.replace("lr = 1e-3", "lr = 1e-3\nbogus = 1"));
    assert_eq!(code(omgpt(dir.path(), &["--config", "run.toml", "train"]).arg("--out").arg("o")), 2);
    let dir = setup("seed = [");
    assert_eq!(code(&mut omgpt(dir.path(), &["--config", "run.toml", "gen-data"])), 2);
    assert_eq!(code(&mut omgpt(dir.path(), &["no-such-command"])), 2);
    assert_eq!(code(&mut omgpt(dir.path(), &["--out", "o", "repro", "no-such-bundle"])), 2);
}

#[test]
fn runtime_errors_exit_with_three() {
    let dir = setup(MAB);
    let c = &mut omgpt(dir.path(), &["--config", "run.toml", "--checkpoint", "missing.ckpt", "eval"]);
    assert_eq!(code(c), 3);
}

#[test]
fn gen_data_writes_every_record() {
    let dir = setup(MAB);
    assert_eq!(code(&mut omgpt(dir.path(), &["--config", "run.toml", "--out", "d", "gen-data"])), 0);
    let file = std::fs::File::open(dir.path().join("d/dataset.jsonl")).unwrap();
    let (header, samples) = read_dataset(std::io::BufReader::new(file)).unwrap();
    assert_eq!(header.sequences, 12);
    assert_eq!(header.records, 12 * 5);
    assert_eq!(samples.len(), 12);
}

#[test]
fn seed_environment_variable_and_flag_precedence() {
    let dir = setup(MAB);
    let read = |p: &str| std::fs::read(dir.path().join(p).join("dataset.jsonl")).unwrap();
    assert_eq!(code(&mut omgpt(dir.path(), &["--config", "run.toml", "--out", "a", "gen-data"])), 0);
    assert_eq!(code(omgpt(dir.path(), &["--config", "run.toml", "--out", "b", "gen-data"]).env("OMGPT_SEED", "9")), 0);
    assert_eq!(code(&mut omgpt(dir.path(), &["--config", "run.toml", "--seed", "9", "--out", "c", "gen-data"])), 0);
    let flag_wins = &mut omgpt(dir.path(), &["--config", "run.toml", "--seed", "2", "--out", "e", "gen-data"]);
    assert_eq!(code(flag_wins.env("OMGPT_SEED", "9")), 0);
    assert_ne!(read("a"), read("b"));
    assert_eq!(read("b"), read("c"));
    assert_eq!(read("a"), read("e"));
    assert_eq!(code(omgpt(dir.path(), &["--config", "run.toml", "gen-data"]).env("OMGPT_OUT", "envout")), 0);
    assert!(dir.path().join("envout/dataset.jsonl").exists());
    assert_eq!(code(omgpt(dir.path(), &["--config", "run.toml", "gen-data"]).env("OMGPT_SEED", "x")), 2);
}

#[test]
fn single_iteration_run_leaves_a_checkpoint() {
    let dir = setup(&MAB.replace("iterations = 4\nearly_iterations = 2", "iterations = 1\nearly_iterations = 1").replace("checkpoint_every = 2", "checkpoint_every = 1"));
    assert_eq!(code(&mut omgpt(dir.path(), &["--config", "run.toml", "--out", "t", "train"])), 0);
    assert!(dir.path().join("t/checkpoints/iter_000001.ckpt").exists());
    assert!(dir.path().join("t/model.ckpt").exists());
    let rows = csv_rows(&dir.path().join("t/loss.csv"));
    assert_eq!(rows.len(), 1);
    assert!(!rows[0][2].is_empty(), "the last iteration reports a held-out loss");
}

#[test]
fn resumed_training_continues_the_loss_trace() {
    let dir = setup(MAB);
    assert_eq!(code(&mut omgpt(dir.path(), &["--config", "run.toml", "--out", "full", "train"])), 0);
    assert_eq!(code(&mut omgpt(dir.path(), &["--config", "run.toml", "--out", "part", "train"])), 0);
    let c = &mut omgpt(
        dir.path(),
        &["--config", "run.toml", "--out", "part", "--checkpoint", "full/checkpoints/iter_000002.ckpt", "train"],
    );
    assert_eq!(code(c), 0);
    let full = std::fs::read(dir.path().join("full/loss.csv")).unwrap();
    assert_eq!(full, std::fs::read(dir.path().join("part/loss.csv")).unwrap());
    assert_eq!(csv_rows(&dir.path().join("full/loss.csv")).len(), 4);
    assert_eq!(
        std::fs::read(dir.path().join("full/model.ckpt")).unwrap(),
        std::fs::read(dir.path().join("part/model.ckpt")).unwrap()
    );
}

#[test]
fn eval_and_probe_write_expected_rows() {
    let dir = setup(MAB);
    assert_eq!(code(&mut omgpt(dir.path(), &["--config", "run.toml", "--out", "t", "train"])), 0);
    let ck = ["--checkpoint", "t/model.ckpt"];
    let mut args = vec!["--config", "run.toml", "--out", "e"];
    args.extend(ck);
    args.push("eval");
    assert_eq!(code(&mut omgpt(dir.path(), &args)), 0);
    assert_eq!(csv_rows(&dir.path().join("e/eval_runs.csv")).len(), 3 * 3 * 5);
    let report = csv_rows(&dir.path().join("e/eval_report.csv"));
    assert_eq!(report.len(), 3 * 5);
    let oracle: Vec<f64> = report.iter().filter(|r| &r[1] == "Oracle").map(|r| r[2].parse().unwrap()).collect();
    assert!(oracle.iter().all(|&v| v.abs() < 1e-12));

    let mut args = vec!["--config", "run.toml", "--out", "p"];
    args.extend(ck);
    args.push("probe");
    assert_eq!(code(&mut omgpt(dir.path(), &args)), 0);
    let mut r = csv::Reader::from_path(dir.path().join("p/probe.csv")).unwrap();
    let head = r.headers().unwrap().clone();
    assert_eq!(&head[0], "layer");
    assert!(head.iter().any(|h| h == "optimal_action_mse"));
    assert!(r.records().count() >= 2);
}

#[test]
fn prop4_bundle_needs_no_config() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mut omgpt(dir.path(), &["--out", "r", "repro", "prop4-linear-regret"])), 0);
    let rows = csv_rows(&dir.path().join("r/prop4-linear-regret/summary.csv"));
    assert!(!rows.is_empty());
}
