//! Operator-surface behavior: exit codes, usage text, config validation,
//! and the plot command, none of which need trained models.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_textflow")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("textflow_cli_{name}"));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn no_arguments_prints_usage_and_exits_one() {
    let out = Command::new(bin()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("usage"), "{stderr}");
    assert!(stderr.contains("train-vae"));
}

#[test]
fn unknown_subcommand_exits_one() {
    let dir = scratch("unknown");
    std::fs::write(dir.join("c.conf"), "[corpus]\nn = 4\n").unwrap();
    let out = Command::new(bin())
        .args([
            "transmogrify",
            "--config",
            dir.join("c.conf").to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_file_is_runtime_error() {
    let dir = scratch("missing");
    let out = Command::new(bin())
        .args([
            "train-vae",
            "--config",
            dir.join("nope.conf").to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = scratch("badkey");
    std::fs::write(
        dir.join("c.conf"),
        "[corpus]\nn = 20\nmax_len = 16\n\n[vae]\nembed_dim = 8\nchannels = 12\nlatent_dim = 4\ndownsample = 2\nbanana = 7\n\n[train]\nsteps = 2\nbatch = 2\nseq_len = 16\n",
    )
    .unwrap();
    let out = Command::new(bin())
        .args([
            "train-vae",
            "--config",
            dir.join("c.conf").to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("banana"), "{stderr}");
}

#[test]
fn plot_renders_csv_deterministically() {
    let dir = scratch("plot");
    let csv = dir.join("series.csv");
    std::fs::write(&csv, "step,loss,kind\n0,3.0,a\n1,2.0,a\n0,4.0,b\n1,1.5,b\n").unwrap();
    std::fs::write(
        dir.join("plot.conf"),
        format!(
            "[plot]\ninput = {}\nx = step\ny = loss\ngroup = kind\ntitle = losses\n",
            csv.display()
        ),
    )
    .unwrap();
    let run = |out_dir: &str| {
        let status = Command::new(bin())
            .args([
                "plot",
                "--config",
                dir.join("plot.conf").to_str().unwrap(),
                "--out",
                dir.join(out_dir).to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(dir.join(out_dir).join("plot.svg")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b, "plot output must be byte-identical");
    let svg = String::from_utf8(a).unwrap();
    assert!(svg.contains("<polyline"));
    assert!(svg.contains("data-xmin"));
    // resolved config is echoed
    assert!(dir.join("a").join("config.resolved").exists());
}

#[test]
fn soclab_runs_without_models() {
    let dir = scratch("soclab");
    std::fs::write(
        dir.join("c.conf"),
        "[soclab]\ndensity = gaussian\nseeds = 6\nsde_steps = 60\nflow_steps = 24\n",
    )
    .unwrap();
    let out = Command::new(bin())
        .args([
            "soclab",
            "--config",
            dir.join("c.conf").to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
            "--seed",
            "3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = std::fs::read_to_string(dir.join("out").join("runs.csv")).unwrap();
    assert!(runs.starts_with("kind,seed,action,terminal_error,nfe_or_events"));
    assert_eq!(runs.lines().count(), 1 + 6 * 3);
    assert!(dir.join("out").join("perturbation.csv").exists());
    assert!(dir.join("out").join("soclab_trajectories.svg").exists());
    assert!(dir.join("out").join("soclab_summary.txt").exists());
}
