use std::path::Path;
use std::process::{Command, Output};

use gaqn::trainer::LossHistory;

fn gaqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaqn")).args(args).env("GAQN_LOG", "warn").output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_file_size_matches_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.bin");
    let o = gaqn(&["gen-data", "--scenes", "2", "--views", "5", "--seed", "7", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::metadata(&out).unwrap().len(), 123_108);
    let again = dir.path().join("e.bin");
    gaqn(&["gen-data", "--scenes", "2", "--views", "5", "--seed", "7", "--out", path(&again)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn usage_errors_exit_one_with_flag_documentation() {
    let o = gaqn(&["gen-data", "--scenes", "2", "--views", "5", "--bogus", "1", "--out", "x.bin"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--bogus") && err.contains("--views") && err.contains("Usage"), "{err}");

    assert_eq!(gaqn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gaqn(&["train", "--data", "d", "--out", "o", "--mode", "wgan"]).status.code(), Some(1));
    assert_eq!(gaqn(&["train", "--data", "d", "--out", "o", "--batch", "0"]).status.code(), Some(1));
    assert_eq!(gaqn(&["gen-data", "--scenes", "0", "--views", "5", "--out", "x.bin"]).status.code(), Some(1));
    assert_eq!(gaqn(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let o = gaqn(&["eval", "--ckpt", path(&missing), "--data", path(&missing), "--report", path(&dir.path().join("r.txt"))]);
    assert_eq!(o.status.code(), Some(2));
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let o = gaqn(&["render", "--ckpt", path(&junk), "--data", path(&missing), "--out", path(&dir.path().join("g.ppm"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_render_plot_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    assert_eq!(gaqn(&["gen-data", "--scenes", "2", "--views", "5", "--seed", "1", "--out", path(&data)]).status.code(), Some(0));

    let run = dir.path().join("gqn");
    let train = |out: &Path, mode: &str, steps: &str, extra: &[&str]| {
        let mut args = vec!["train", "--data", path(&data), "--mode", mode, "--preset", "desk", "--batch", "2", "--gen-layers", "2", "--steps", steps, "--seed", "3", "--out", path(out)];
        args.extend_from_slice(extra);
        gaqn(&args)
    };
    let o = train(&run, "gqn", "2", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let history = LossHistory::read_csv(&run.join("history.csv")).unwrap();
    assert_eq!(history.len(), 2);
    for r in history.reports() {
        let adversarial = [r.lsgan_g, r.lsgan_d, r.fm, r.gan_g, r.gan_d, r.total_generator, r.total_discriminator];
        assert!(adversarial.iter().all(|&v| v == 0.0), "{r:?}");
        assert!(r.elbo > 0.0);
    }
    let config = std::fs::read_to_string(run.join("config.json")).unwrap();
    assert!(config.contains("\"gen_layers\": 2"));

    let ckpt = run.join("checkpoint.ckpt");
    let o = train(&run, "gqn", "3", &["--resume", path(&ckpt)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let resumed = LossHistory::read_csv(&run.join("history.csv")).unwrap();
    assert_eq!(resumed.reports().iter().map(|r| r.step).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(resumed.reports()[..2], history.reports()[..]);
    let o = train(&dir.path().join("other"), "gqn", "3", &["--resume", path(&ckpt), "--lr-g", "1e-3"]);
    assert_eq!(o.status.code(), Some(2));

    let gaqn_run = dir.path().join("gaqn");
    assert_eq!(train(&gaqn_run, "gaqn", "1", &[]).status.code(), Some(0));
    let r = LossHistory::read_csv(&gaqn_run.join("history.csv")).unwrap().reports()[0].clone();
    assert!(r.lsgan_g > 0.0 && r.lsgan_d > 0.0 && r.fm >= 0.0);

    let report = dir.path().join("metrics.txt");
    let o = gaqn(&["eval", "--ckpt", path(&ckpt), "--data", path(&data), "--seed", "5", "--report", path(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("mode: gqn") && text.contains("checkpoint_step: 3") && text.contains("context_views: 4"));
    assert_eq!(String::from_utf8_lossy(&o.stdout), text);
    assert!(report.with_extension("csv").exists());

    let grid = dir.path().join("grid.ppm");
    assert_eq!(gaqn(&["render", "--ckpt", path(&ckpt), "--data", path(&data), "--scene", "1", "--out", path(&grid)]).status.code(), Some(0));
    assert!(std::fs::read(&grid).unwrap().starts_with(b"P6\n384 64\n255\n"));
    assert_eq!(gaqn(&["render", "--ckpt", path(&ckpt), "--data", path(&data), "--scene", "2", "--out", path(&grid)]).status.code(), Some(2));

    let plots = dir.path().join("plots");
    let o = gaqn(&["plot", "--history", path(&run.join("history.csv")), path(&gaqn_run.join("history.csv")), "--out", path(&plots)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let comparison = std::fs::read_to_string(plots.join("comparison.csv")).unwrap();
    assert!(comparison.lines().next().unwrap().contains("gqn_history"));
    assert!(plots.join("gaqn_history").join("history.csv").exists());
}
