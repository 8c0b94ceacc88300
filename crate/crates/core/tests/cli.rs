use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use s2r2::config::ExperimentConfig;
use s2r2::datasets::{write_binary_images, ImageShape};
use s2r2::experiment::read_metrics;

const SMALL: &str = "steps = 12\neval_every = 6\nbatch_images = 4\nviews_per_image = 4\n\
                     [dataset.synthetic]\nnum_classes = 3\ndim = 8\nsamples_per_class = 20\n\
                     [encoder]\nhidden_dims = [16]\nrep_dim = 8\nproj_hidden_dim = 8\nproj_out_dim = 8\n";

fn s2r2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2r2")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn selftest_passes() {
    let out = s2r2(&["selftest", "--seed", "3"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 6, "{stdout}");
}

#[test]
fn train_writes_artifacts_and_eval_reads_them() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    let out = s2r2(&["train", "--config", &config, "--out", run_s, "--seed", "4", "--deterministic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let records = read_metrics(&run.join("metrics.jsonl")).unwrap();
    assert_eq!(records.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=12).collect::<Vec<_>>());

    let ckpt = fs::read(run.join("checkpoint.bin")).unwrap();
    assert_eq!(&ckpt[..8], b"S2R2CKPT");
    assert_eq!(u32::from_le_bytes(ckpt[8..12].try_into().unwrap()), 1);

    let echo = ExperimentConfig::from_file(&run.join("config.echo")).unwrap();
    assert_eq!(echo.seed, 4);
    assert_eq!(echo.steps, 12);
    assert_eq!(echo, echo.normalized());

    let eval_dir = tmp.path().join("eval");
    let out = s2r2(&[
        "eval", "--config", &config, "--seed", "4", "--out", eval_dir.to_str().unwrap(),
        "--checkpoint", run.join("checkpoint.bin").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(eval_dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["probe"]["top1_accuracy"].as_f64(), records.last().unwrap().probe_top1);
}

#[test]
fn invalid_config_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    fs::write(&config, "steps = 0\n").unwrap();
    let out = s2r2(&["train", "--config", config.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("steps"));

    fs::write(&config, "no_such_key = 1\n").unwrap();
    assert!(!s2r2(&["train", "--config", config.to_str().unwrap()]).status.success());
}

#[test]
fn ablate_records_failing_cells() {
    let tmp = tempfile::tempdir().unwrap();
    // B = 100 exceeds the 48 training samples.
    let config = write_config(tmp.path(), "[ablation]\nb_values = [2, 100, 2]\nk_values = [2]\n");
    let out_dir = tmp.path().join("grid");
    let out = s2r2(&["ablate", "--config", &config, "--out", out_dir.to_str().unwrap(), "--deterministic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = fs::read_to_string(out_dir.join("grid.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines[0], "B,K,BK,probe_top1,final_loss,status");
    assert_eq!(lines.len(), 3, "{grid}");
    assert!(lines[1].starts_with("2,2,4,") && lines[1].ends_with(",ok"));
    assert!(lines[2].starts_with("100,2,200,,,") && lines[2].contains("error"));
}

#[test]
fn compare_trains_both_arms() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let out_dir = tmp.path().join("cmp");
    let out = s2r2(&["compare", "--config", &config, "--out", out_dir.to_str().unwrap(), "--deterministic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    for arm in ["s2r2", "infonce"] {
        assert_eq!(report[arm]["eval_points"].as_array().unwrap().len(), 2);
        assert!(out_dir.join(arm).join("metrics.jsonl").exists());
    }
    assert_eq!(report["views_per_step"], 16);
}

#[test]
fn trains_on_binary_image_files() {
    let tmp = tempfile::tempdir().unwrap();
    let shape = ImageShape { height: 6, width: 6, channels: 3 };
    let labels: Vec<u16> = (0..40).map(|i| (i % 2) as u16).collect();
    let pixels: Vec<u8> = (0..40 * shape.len()).map(|i| ((i * 37 + (i / shape.len()) * 11) % 251) as u8).collect();
    let images = tmp.path().join("train.s2r2img");
    write_binary_images(&images, shape, 2, &pixels, &labels).unwrap();
    let config = tmp.path().join("img.toml");
    fs::write(
        &config,
        format!(
            "steps = 4\neval_every = 2\nbatch_images = 4\nviews_per_image = 2\n\
             [dataset]\nsource = \"images\"\npath = \"{}\"\n\
             [augmentation.image]\noutput_size = [4, 4]\n\
             [encoder]\nhidden_dims = [16]\nrep_dim = 8\nproj_hidden_dim = 8\nproj_out_dim = 8\n",
            images.display()
        ),
    )
    .unwrap();
    let out_dir = tmp.path().join("run");
    let out = s2r2(&["train", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo = ExperimentConfig::from_file(&out_dir.join("config.echo")).unwrap();
    assert_eq!(echo.encoder.input_dim, 4 * 4 * 3);

    let out = s2r2(&[
        "eval", "--config", config.to_str().unwrap(), "--out", tmp.path().join("eval").to_str().unwrap(),
        "--checkpoint", out_dir.join("checkpoint.bin").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
