use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robusthide::synthetic::natural_image;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robusthide"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn robusthide")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_images(dir: &Path, count: usize, side: u32) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    (0..count)
        .map(|i| {
            let p = dir.join(format!("img{i:02}.png"));
            natural_image(i as u64 + 100, side as usize).save(&p).unwrap();
            p
        })
        .collect()
}

const TINY: &str = "image_side = 16\nsteps = 1\nbatch_size = 2\nval_count = 2\neval_every = 0\n\
[network]\ndepth = 2\nbase_channels = 4\ndisc_base_channels = 4\ndisc_downsamplings = 1\n";

/// Trains a throw-away bundle with `n` secrets and returns its checkpoint.
fn tiny_checkpoint(dir: &Path, n: usize, steps: u64) -> PathBuf {
    let cfg = dir.join(format!("tiny{n}.toml"));
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.join(format!("run{n}"));
    let o = run(
        dir,
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--synthetic",
            "12",
            "--seed",
            "3",
            "--out-dir",
            out.to_str().unwrap(),
            "--set",
            &format!("network.n={n}"),
            "--set",
            &format!("steps={steps}"),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("latest.ckpt")
}

#[test]
fn unknown_attack_op_is_a_usage_error_listing_ops() {
    let dir = tempfile::tempdir().unwrap();
    let img = &write_images(dir.path(), 1, 16)[0];
    let o = run(dir.path(), &["attack", img.to_str().unwrap(), "--op", "rotate", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("real-jpeg") && e.contains("jpeg-soft") && e.contains("crop"), "{e}");
}

#[test]
fn train_without_config_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--synthetic", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn scale_by_one_keeps_pixels_and_jpeg_reports_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let img = &write_images(dir.path(), 1, 32)[0];
    let out = dir.path().join("same.png");
    let o = run(
        dir.path(),
        &["attack", img.to_str().unwrap(), "--op", "scale", "--param", "factor=1.0", "--seed", "1", "--output", out.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = image::open(img).unwrap().to_rgb8();
    let b = image::open(&out).unwrap().to_rgb8();
    assert_eq!(a.as_raw(), b.as_raw());

    let jpg = dir.path().join("q70.jpg");
    let o = run(
        dir.path(),
        &["attack", img.to_str().unwrap(), "--op", "real-jpeg", "--param", "qf=70", "--seed", "1", "--output", jpg.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("psnr"));
    assert_eq!(&std::fs::read(&jpg).unwrap()[..2], &[0xFF, 0xD8]);
}

#[test]
fn omitted_seed_is_printed() {
    let dir = tempfile::tempdir().unwrap();
    let img = &write_images(dir.path(), 1, 16)[0];
    let o = run(dir.path(), &["attack", img.to_str().unwrap(), "--op", "noise", "--out-dir", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("seed: "));
}

#[test]
fn ingest_counts_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let o = run(dir.path(), &["ingest", empty.to_str().unwrap(), "--seed", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no images found"));

    let src = dir.path().join("imgs");
    write_images(&src, 10, 16);
    let o = run(dir.path(), &["ingest", src.to_str().unwrap(), "--seed", "0", "--split", "0.7,0.2,0.2"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = run(dir.path(), &["ingest", src.to_str().unwrap(), "--seed", "9", "--side", "16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("train 8, val 1, test 1"));
    let first = std::fs::read(dir.path().join("out/manifest.json")).unwrap();
    run(dir.path(), &["ingest", src.to_str().unwrap(), "--seed", "9", "--side", "16"]);
    assert_eq!(first, std::fs::read(dir.path().join("out/manifest.json")).unwrap());
}

#[test]
fn train_writes_one_record_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let ck = tiny_checkpoint(dir.path(), 1, 1);
    let run_dir = ck.parent().unwrap().to_path_buf();
    let lines = |p: &Path| std::fs::read_to_string(p).unwrap().lines().count();
    assert_eq!(lines(&run_dir.join("metrics.jsonl")), 1);
    assert!(ck.is_file());

    let cfg = dir.path().join("tiny1.toml");
    let o = run(
        dir.path(),
        &[
            "train", "--config", cfg.to_str().unwrap(), "--synthetic", "12", "--seed", "3", "--out-dir",
            run_dir.to_str().unwrap(), "--set", "steps=2", "--resume",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("resuming at step 1"));
    assert_eq!(lines(&run_dir.join("metrics.jsonl")), 2);
    let last: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap().lines().last().unwrap()).unwrap();
    assert_eq!(last["step"], 1);
}

#[test]
fn embed_extract_round_trip_shapes_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = write_images(&dir.path().join("imgs"), 4, 16);
    let ck1 = tiny_checkpoint(dir.path(), 1, 0);
    let ck3 = tiny_checkpoint(dir.path(), 3, 0);
    let p = |x: &Path| x.to_str().unwrap().to_string();

    let o = run(dir.path(), &["embed", "--checkpoint", &p(&ck1), &p(&imgs[0]), &p(&imgs[1]), &p(&imgs[2])]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n = 1"), "{}", stderr(&o));

    let o = run(dir.path(), &["embed", "--checkpoint", &p(&ck1), &p(&imgs[0]), &p(&imgs[1]), "--out-dir", "e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let marked = dir.path().join("e/marked.png");
    assert_eq!(image::open(&marked).unwrap().to_rgb8().dimensions(), (16, 16));
    assert!(dir.path().join("e/residual.png").is_file() && dir.path().join("e/residual.json").is_file());

    let o = run(dir.path(), &["extract", "--checkpoint", &p(&ck3), &p(&marked), "--out-dir", "x1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let secrets = |d: &str| (1..=4).filter(|i| dir.path().join(format!("{d}/secret_{i}.png")).is_file()).count();
    assert_eq!(secrets("x1"), 3);
    assert!(dir.path().join("x1/cover.png").is_file() && dir.path().join("x1/residual.png").is_file());
    run(dir.path(), &["extract", "--checkpoint", &p(&ck3), &p(&marked), "--out-dir", "x2"]);
    for f in ["secret_1.png", "secret_3.png", "cover.png", "residual.json"] {
        assert_eq!(std::fs::read(dir.path().join("x1").join(f)).unwrap(), std::fs::read(dir.path().join("x2").join(f)).unwrap());
    }

    let wide = dir.path().join("wide.png");
    image::RgbImage::from_pixel(24, 16, image::Rgb([90, 120, 30])).save(&wide).unwrap();
    let o = run(dir.path(), &["extract", "--checkpoint", &p(&ck1), &p(&wide), "--strict", "--out-dir", "s"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(dir.path(), &["extract", "--checkpoint", &p(&ck1), &p(&wide), "--out-dir", "s"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn eval_writes_json_and_table_and_rejects_zero_count() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("imgs");
    write_images(&src, 10, 16);
    assert!(run(dir.path(), &["ingest", src.to_str().unwrap(), "--side", "16", "--seed", "0", "--split", "0,0,1"]).status.success());
    let ck = tiny_checkpoint(dir.path(), 1, 0);
    let args = |count: &str| {
        vec![
            "eval".to_string(),
            "--checkpoint".into(),
            ck.to_str().unwrap().into(),
            "--manifest".into(),
            "out/manifest.json".into(),
            "--count".into(),
            count.into(),
            "--seed".into(),
            "2".into(),
            "--grid-rows".into(),
            "2".into(),
        ]
    };
    let o = bin().current_dir(dir.path()).args(args("0")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin().current_dir(dir.path()).args(args("4")).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/battery.json")).unwrap()).unwrap();
    assert_eq!(json[0]["rows"].as_array().unwrap().len(), 6);
    assert_eq!(json[0]["samples"], 4);
    let table = std::fs::read_to_string(dir.path().join("out/battery.txt")).unwrap();
    assert!(table.contains("real-jpeg qf=70"));
    assert!(dir.path().join("out/residual_grid.png").is_file());
}

#[test]
fn gradcheck_blur_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gradcheck", "--op", "blur", "--trials", "100", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/gradcheck.json")).unwrap()).unwrap();
    assert!(reports[0]["max_rel_error"].as_f64().unwrap() < 1e-3);
    assert_eq!(reports[0]["checked"], 100);
}
