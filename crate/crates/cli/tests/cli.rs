use std::path::Path;
use std::process::{Command, Output};

use fakeguard_core::dataset::{encode_ppm, RgbImage};
use fakeguard_core::model::{save_weights, Family, ModelSpec, Network, Preset};
use fakeguard_core::tensor::Tensor;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fakeguard"))
        .args(args)
        .output()
        .expect("run fakeguard")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gendata(dir: &Path, videos: &str) -> Output {
    run(&[
        "gendata",
        "--out",
        s(dir),
        "--videos",
        videos,
        "--frames",
        "4",
        "--size",
        "32",
        "--seed",
        "3",
    ])
}

/// resnet-mini weights whose head always outputs logit 0.
fn zero_head_weights(path: &Path) {
    let spec = ModelSpec::preset(Family::Resnet, Preset::Mini);
    let mut net = Network::<f32>::build(&spec, 0).unwrap();
    let hidden = spec.hidden_width;
    net.weights_mut()
        .set_by_path("head.out.weight", Tensor::zeros(&[1, hidden]))
        .unwrap();
    net.weights_mut()
        .set_by_path("head.out.bias", Tensor::zeros(&[1]))
        .unwrap();
    save_weights(net.weights(), path).unwrap();
}

#[test]
fn gendata_rejects_odd_video_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = gendata(&dir.path().join("d"), "5");
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error: "));
}

#[test]
fn repeated_gendata_reports_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let first = gendata(&data, "4");
    assert!(first.status.success());
    assert!(stdout(&first).contains("wrote"), "{}", stdout(&first));
    let second = gendata(&data, "4");
    assert!(second.status.success());
    assert!(stdout(&second).contains("unchanged: all"), "{}", stdout(&second));
}

#[test]
fn kfold_on_four_videos_writes_two_folds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(gendata(&data, "4").status.success());
    let out_dir = dir.path().join("k");
    let out = run(&[
        "kfold",
        "--data",
        s(&data),
        "--out",
        s(&out_dir),
        "--k",
        "2",
        "--model",
        "resnet",
        "--epochs",
        "1",
        "--batch",
        "2",
        "--frames",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for fold in ["fold_0", "fold_1"] {
        for file in ["resnet.fgwt", "curves.csv", "report.txt"] {
            assert!(out_dir.join(fold).join(file).is_file(), "{fold}/{file}");
        }
    }
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "fold,best_epoch,val_acc,val_f1");
    assert!(
        lines[1].starts_with("0,1,") && lines[2].starts_with("1,1,"),
        "{summary}"
    );
}

#[test]
fn zero_gamma_loss_equals_log_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(gendata(&data, "4").status.success());
    let out_dir = dir.path().join("t");
    let out = run(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&out_dir),
        "--k",
        "2",
        "--model",
        "xception",
        "--epochs",
        "2",
        "--batch",
        "2",
        "--frames",
        "2",
        "--gamma",
        "0",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let curves = std::fs::read_to_string(out_dir.join("curves.csv")).unwrap();
    for row in curves.lines().skip(1) {
        let c: Vec<&str> = row.split(',').collect();
        assert_eq!(c[1], c[3], "train loss vs log loss: {row}");
        assert_eq!(c[2], c[4], "val loss vs log loss: {row}");
    }
    assert!(out_dir.join("xception.fgwt").is_file());
}

#[test]
fn predict_zeroed_head_is_a_coin_flip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(gendata(&data, "2").status.success());
    let weights = dir.path().join("w.fgwt");
    zero_head_weights(&weights);
    let out = run(&["predict", "--weights-resnet", s(&weights), "--video-dir", s(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "vid_0000,0.500000,fake\nvid_0001,0.500000,fake\n");
    let single = run(&[
        "predict",
        "--weights-resnet",
        s(&weights),
        "--video-dir",
        s(&data.join("vid_0001")),
    ]);
    assert_eq!(stdout(&single), "vid_0001,0.500000,fake\n");
}

#[test]
fn predict_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.fgwt");
    zero_head_weights(&weights);
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = run(&["predict", "--weights-resnet", s(&weights), "--video-dir", s(&empty)]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    // resnet weights offered as the xception member
    let data = dir.path().join("d");
    assert!(gendata(&data, "2").status.success());
    let out = run(&["predict", "--weights-xception", s(&weights), "--video-dir", s(&data)]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
    let out = run(&[
        "predict",
        "--weights-resnet",
        s(&weights),
        "--preset",
        "full",
        "--video-dir",
        s(&data),
    ]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));

    let garbage = dir.path().join("g.fgwt");
    std::fs::write(&garbage, b"not weights").unwrap();
    let out = run(&["predict", "--weights-resnet", s(&garbage), "--video-dir", s(&data)]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
}

#[test]
fn inspect_writes_a_grid_and_rejects_out_of_range_layers() {
    let dir = tempfile::tempdir().unwrap();
    let frame = dir.path().join("f.ppm");
    std::fs::write(&frame, encode_ppm(&RgbImage::filled(48, 40, [200, 120, 90]))).unwrap();
    let grid = dir.path().join("g.ppm");
    let out = run(&["inspect", "--frame", s(&frame), "--layer", "3", "--out", s(&grid)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        stdout(&out).starts_with("layer 3 of 8: 8 maps in a 3x3 grid (96x96 px)"),
        "{}",
        stdout(&out)
    );
    assert!(grid.is_file());

    let out = run(&[
        "inspect",
        "--preset",
        "full",
        "--frame",
        s(&frame),
        "--layer",
        "49",
        "--out",
        s(&grid),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("valid range 1..48"), "{}", stderr(&out));
    let out = run(&["inspect", "--frame", s(&frame), "--layer", "0", "--out", s(&grid)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_and_flags_layer_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"data": "d", "out": "o", "preset_run": "fig5", "epochs": 7, "seed": 4}"#,
    )
    .unwrap();
    let resolved = |extra: &[&str]| {
        let mut args = vec!["train", "--config", s(&cfg), "--print-config"];
        args.extend(extra);
        let out = run(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    let v = resolved(&[]);
    assert_eq!(v["train"]["epochs"], 7);
    assert_eq!(v["train"]["batch_size"], 64);
    assert_eq!(v["train"]["seed"], 4);
    let v = resolved(&["--preset-run", "fig2"]);
    assert_eq!(
        (v["train"]["epochs"].as_u64(), v["train"]["batch_size"].as_u64()),
        (Some(100), Some(32))
    );
    let v = resolved(&["--preset-run", "fig2", "--epochs", "3", "--preset", "full-xception"]);
    assert_eq!(v["train"]["epochs"], 3);
    assert_eq!(
        (v["preset"].as_str(), v["model"].as_str()),
        (Some("full"), Some("xception"))
    );

    std::fs::write(&cfg, r#"{"data": "d", "out": "o", "epoch": 7}"#).unwrap();
    let out = run(&["train", "--config", s(&cfg), "--print-config"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--data",
        s(&dir.path().join("nope")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}
