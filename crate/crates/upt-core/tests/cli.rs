//! End-to-end checks of the command-line surface: extract, binomial
//! analysis, task generation, synthesis, training, and evaluation.

use std::path::Path;
use std::process::Command;

fn upt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_upt"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn upt");
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

#[test]
fn extract_emits_kind_and_canonical_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("responses.txt");
    std::fs::write(
        &input,
        "so \\boxed{42} is final\nThe answer is (B).\n\njust words\nx = 3/6\n",
    )
    .unwrap();
    let stdout = run_ok(upt().args(["extract", "--in", input.to_str().unwrap()]));
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(
        lines,
        vec![
            "numeric\t42",
            "choice\tB",
            "none\t",
            "none\t",
            "numeric\t1/2"
        ]
    );
}

#[test]
fn analyze_binomial_prints_both_variants() {
    let stdout = run_ok(upt().args(["analyze-binomial", "--p", "0.7", "--n", "10"]));
    assert!(stdout.contains("strict"), "{stdout}");
    assert!(stdout.contains("inclusive"), "{stdout}");
    assert!(stdout.contains("0.849731667"), "{stdout}");
    assert!(stdout.contains("0.952651012"), "{stdout}");
    assert!(stdout.contains("i =   5"), "{stdout}");
    let selected =
        run_ok(upt().args(["analyze-binomial", "--p", "0.7", "--n", "10", "--inclusive"]));
    assert!(
        selected.contains("selected variant: inclusive"),
        "{selected}"
    );
}

fn write_config(path: &Path, extra: &str) {
    std::fs::write(
        path,
        format!("learning_rate = 0.01\nepisodes = 2\neval_every = 5\n{extra}"),
    )
    .unwrap();
}

#[test]
fn gen_synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = dir.path().join("tasks.jsonl");
    run_ok(upt().args([
        "gen-tasks",
        "--family",
        "mixed",
        "--count",
        "12",
        "--seed",
        "5",
        "--out",
        tasks.to_str().unwrap(),
    ]));
    assert!(tasks.exists());

    // Both synthesis strategies produce loadable task sets.
    let ic = dir.path().join("ic.jsonl");
    run_ok(upt().args([
        "synth",
        "--strategy",
        "in_context",
        "--seed-tasks",
        tasks.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        ic.to_str().unwrap(),
    ]));
    let direct_stdout = run_ok(upt().args([
        "synth",
        "--strategy",
        "direct",
        "--seed-tasks",
        tasks.to_str().unwrap(),
        "--seed",
        "4",
    ]));
    assert!(direct_stdout.lines().count() >= 13); // header + 12 tasks
    let header: serde_json::Value =
        serde_json::from_str(direct_stdout.lines().next().unwrap()).unwrap();
    assert_eq!(header["schema"], "upt-taskset");
    assert_eq!(header["version"], 1);
    let loaded = upt_core::tasks::TaskSet::load(&ic).unwrap();
    assert_eq!(loaded.len(), 12);

    // Train on the generated set, then evaluate the final checkpoint.
    let config = dir.path().join("train.cfg");
    write_config(&config, "");
    let run_dir = dir.path().join("run");
    let stdout = run_ok(upt().args([
        "train",
        "--config",
        config.to_str().unwrap(),
        "--tasks",
        tasks.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]));
    assert!(stdout.contains("trained"), "{stdout}");
    assert!(run_dir.join("config.resolved").exists());
    assert!(run_dir.join("metrics.log").exists());
    let ckpt = run_dir.join("checkpoints").join("ep1.ckpt");
    assert!(ckpt.exists());

    let eval_out = dir.path().join("eval.jsonl");
    let stdout = run_ok(upt().args([
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--tasks",
        tasks.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]));
    assert!(stdout.contains("accuracy:"), "{stdout}");
    let report = std::fs::read_to_string(&eval_out).unwrap();
    assert_eq!(report.lines().count(), 12);
    for line in report.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["id"].is_string());
        assert!(v["correct_fraction"].is_number());
    }
}

#[test]
fn train_rejects_mismatched_checkpoint_kind() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = dir.path().join("tasks.jsonl");
    run_ok(upt().args([
        "gen-tasks",
        "--family",
        "modular",
        "--count",
        "6",
        "--seed",
        "1",
        "--out",
        tasks.to_str().unwrap(),
    ]));
    let config = dir.path().join("train.cfg");
    write_config(&config, "policy_kind = seq\n");
    // A bandit checkpoint cannot warm-start a seq run.
    let ckpt = dir.path().join("bandit.ckpt");
    upt_core::policy::save_checkpoint(
        &ckpt,
        upt_core::policy::PolicyKind::Bandit,
        &upt_core::policy::PolicyParams::zeros(24),
    )
    .unwrap();
    let out = upt()
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--tasks",
            tasks.to_str().unwrap(),
            "--init-ckpt",
            ckpt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bandit"), "{stderr}");
}
