use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use disque::cli::{RejectionReport, RunMetadata};
use disque::pixelcore::{load_image, save_png16, save_png8, Colorspace, Image};
use disque::quality::EvalReport;
use disque::synth::colorful_image;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn disque(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disque"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn scene(h: usize, w: usize, seed: u64) -> Image {
    colorful_image(h, w, seed).unwrap()
}

/// A tiny model checkpoint trained for two steps on 32 px patches.
fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let imgs = dir.join("imgs");
    fs::create_dir_all(&imgs).unwrap();
    for k in 0..3 {
        save_png8(imgs.join(format!("s{k}.png")), &scene(64, 64, 40 + k)).unwrap();
    }
    let manifest = dir.join("m.jsonl");
    let o = disque(&["make-manifest", "--dir", p(&imgs), "--out", p(&manifest)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.join("run");
    let o = disque(&[
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
        "--steps",
        "2",
        "--batch-size",
        "2",
        "--set",
        "train.patch_size=32",
        "--set",
        "train.net.patch_size=32",
        "--deterministic",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("checkpoints/step-00000002.ckpt")
}

#[test]
fn make_manifest_screens_gray_images() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    fs::create_dir_all(&imgs).unwrap();
    for k in 0..3 {
        let v = 0.3 + 0.1 * k as f32;
        save_png8(imgs.join(format!("gray{k}.png")), &Image::filled(32, 32, [v; 3], Colorspace::Srgb).unwrap()).unwrap();
    }
    for k in 0..2 {
        save_png8(imgs.join(format!("color{k}.png")), &scene(32, 32, k)).unwrap();
    }
    fs::write(imgs.join("notes.txt"), "not an image").unwrap();

    let manifest = dir.path().join("m.jsonl");
    let o = disque(&["make-manifest", "--dir", p(&imgs), "--out", p(&manifest)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "accepted 2 rejected 3");
    let text = fs::read_to_string(&manifest).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("color0.png") && text.contains("color1.png"));
    let report: RejectionReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m.jsonl.rejected.json")).unwrap()).unwrap();
    assert_eq!(report.rejected.len(), 3);
    assert!(report.rejected.iter().all(|r| r.reason == "grayscale" && r.screening.unwrap().is_grayscale));

    let o = disque(&["make-manifest", "--dir", p(&imgs), "--out", p(&manifest)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&manifest).unwrap(), text);

    let o = disque(&["make-manifest", "--dir", p(&imgs), "--out", p(&manifest), "--no-screening"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&manifest).unwrap().lines().count(), 5);
}

#[test]
fn make_manifest_on_empty_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = disque(&["make-manifest", "--dir", p(dir.path()), "--out", p(&dir.path().join("m.jsonl"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).lines().any(|l| l.starts_with("error class=data code=3 ")));
}

#[test]
fn distort_matches_the_frozen_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("blur.png");
    let o = disque(&["distort", "--input", p(&fixture("scene.png")), "--output", p(&out), "--spec", "GaussianBlur:3:0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "GaussianBlur:3:0");
    let got = load_image(&out, Colorspace::Srgb).unwrap();
    let golden = load_image(fixture("scene_gaussianblur_3_0.png"), Colorspace::Srgb).unwrap();
    assert_eq!(got, golden);
}

#[test]
fn malformed_spec_names_the_token() {
    let dir = tempfile::tempdir().unwrap();
    let o = disque(&[
        "distort",
        "--input",
        p(&fixture("scene.png")),
        "--output",
        p(&dir.path().join("x.png")),
        "--spec",
        "Blur;3",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let line = stderr(&o).lines().find(|l| l.starts_with("error ")).unwrap().to_string();
    assert!(line.starts_with("error class=config code=2 "), "{line}");
    assert!(line.contains("`Blur;3`"), "{line}");
}

#[test]
fn random_distortion_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = disque(&["distort", "--input", p(&fixture("scene.png")), "--output", p(&out), "--random", "17"]);
        assert!(o.status.success(), "{}", stderr(&o));
        (stdout(&o), fs::read(out).unwrap())
    };
    let (a, img_a) = run("a.png");
    let (b, img_b) = run("b.png");
    assert_eq!(a, b);
    assert_eq!(img_a, img_b);
    let meta = RunMetadata::load(dir.path().join("a.png.run.json")).unwrap();
    assert_eq!(meta.seed, Some(17));
    assert_eq!(meta.command, "distort");
}

#[test]
fn missing_input_is_a_data_error_and_usage_errors_are_config() {
    let o = disque(&["distort", "--input", "/nonexistent.png", "--output", "/tmp/never.png", "--spec", "MeanShift:1"]);
    assert_eq!(o.status.code(), Some(3));
    let o = disque(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error class=config code=2 "));
    let o = disque(&["--help"]);
    assert!(o.status.success());
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[train]\nsteps = 3\nbatch_size = 2\npatch_size = 32\n[train.net]\npatch_size = 32\n").unwrap();
    let imgs = dir.path().join("imgs");
    fs::create_dir_all(&imgs).unwrap();
    for k in 0..2 {
        save_png8(imgs.join(format!("s{k}.png")), &scene(48, 48, k)).unwrap();
    }
    let manifest = dir.path().join("m.jsonl");
    assert!(disque(&["make-manifest", "--dir", p(&imgs), "--out", p(&manifest)]).status.success());
    let out = dir.path().join("run");
    let o = disque(&["--config", p(&cfg), "train", "--manifest", p(&manifest), "--out", p(&out), "--steps", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("settings precedence: cli > config ("), "{err}");
    assert!(err.contains("train.steps [cli]") && err.contains("train.batch_size [config]"), "{err}");
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let meta = RunMetadata::load(out.join("run.json")).unwrap();
    assert_eq!(meta.argv[0], "train");
    assert!(!meta.argv.iter().any(|a| a.contains("config")));
    assert!(meta.settings.contains("steps = 1"));
    assert_eq!(meta.config_hash.len(), 64);
}

#[test]
fn rerun_reproduces_a_training_run() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    assert!(ckpt.exists());
    let log = fs::read(dir.path().join("run/train_log.csv")).unwrap();
    let meta_path = dir.path().join("run/run.json");
    let first = fs::read(ckpt.clone()).unwrap();
    fs::remove_dir_all(dir.path().join("run/checkpoints")).unwrap();
    let o = disque(&["rerun", p(&meta_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("run/train_log.csv")).unwrap(), log);
    assert_eq!(fs::read(ckpt).unwrap(), first);
}

#[test]
fn egip_and_egtm_null_examples_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let input = dir.path().join("in.png");
    let example = dir.path().join("ex.png");
    save_png8(&input, &scene(48, 40, 90)).unwrap();
    save_png8(&example, &scene(32, 32, 91)).unwrap();
    let run = |mode: &str, ex_tgt: &Path, out: &Path| {
        let o = disque(&[
            "egip", "--model", p(&ckpt), "--example-src", p(&example), "--example-tgt", p(ex_tgt), "--input",
            p(&input), "--output", p(out), "--mode", mode,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        load_image(out, Colorspace::Srgb).unwrap()
    };
    let null = run("MIXING", &example, &dir.path().join("null.png"));
    assert_eq!(null.dims(), (48, 40));
    let model = disque::trainer::load_model(&ckpt).unwrap();
    let x = load_image(&input, Colorspace::Srgb).unwrap();
    let recon = disque::egip::self_reconstruct(&model, &x, &Default::default()).unwrap();
    assert_eq!(null.to_rgb8(), recon.to_rgb8());

    let o = disque(&[
        "egip", "--model", p(&ckpt), "--example-src", p(&example), "--example-tgt", p(&example), "--input",
        p(&input), "--output", p(&dir.path().join("bad.png")), "--mode", "BLEND",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let pq = dir.path().join("frame.png");
    save_png16(&pq, &scene(32, 32, 92).with_colorspace(Colorspace::PqBt2100)).unwrap();
    let out = dir.path().join("tm.png");
    let o = disque(&[
        "egtm", "--model", p(&ckpt), "--input", p(&pq), "--example-hdr", p(&pq), "--example-sdr", p(&pq),
        "--output", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_image(&out, Colorspace::Srgb).unwrap().dims(), (32, 32));
}

#[test]
fn evaluate_and_ablate_on_a_linear_dataset() {
    use disque::quality::{extract_features, fr_feature, Variant};

    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let model = disque::trainer::load_model(&ckpt).unwrap();
    let imgs = dir.path().join("q");
    fs::create_dir_all(&imgs).unwrap();
    // MOS is an exact linear function of the single-scale mean FR feature,
    // which has fewer dimensions than there are training records, so a
    // correctly wired pipeline recovers the ranking.
    let mut rows = String::from("ref_path,dis_path,mos,content_id\n");
    let mut w: Option<Vec<f64>> = None;
    for r in 0..16u64 {
        let reference = scene(32, 32, 200 + r);
        let ref_name = format!("ref{r}.png");
        save_png8(imgs.join(&ref_name), &reference).unwrap();
        let reference = load_image(imgs.join(&ref_name), Colorspace::Srgb).unwrap();
        let zr = extract_features(&model, &reference).unwrap().select(Variant::SingleScaleMean);
        for s in 1..=5u8 {
            for kind in ["MeanShift", "GaussianBlur"] {
                let spec: disque::bank::Transform = format!("{kind}:{s}:0").parse().unwrap();
                let dis_name = format!("d{r}_{kind}{s}.png");
                save_png8(imgs.join(&dis_name), &spec.apply(&reference).unwrap()).unwrap();
                let dis = load_image(imgs.join(&dis_name), Colorspace::Srgb).unwrap();
                let z = fr_feature(&zr, &extract_features(&model, &dis).unwrap().select(Variant::SingleScaleMean)).unwrap();
                let w = w.get_or_insert_with(|| (0..z.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect());
                let mos: f64 = 50.0 + z.iter().zip(w.iter()).map(|(a, b)| *a as f64 * b).sum::<f64>();
                rows.push_str(&format!("q/{ref_name},q/{dis_name},{mos},c{r}\n"));
            }
        }
    }
    let records = dir.path().join("records.csv");
    fs::write(&records, rows).unwrap();
    let cache = dir.path().join("feat.cache");
    let o = disque(&["extract", "--model", p(&ckpt), "--records", p(&records), "--out", p(&cache)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("176 images"), "{}", stdout(&o));

    let report_path = dir.path().join("report.json");
    let o = disque(&[
        "evaluate", "--model", p(&ckpt), "--records", p(&records), "--out", p(&report_path), "--cache", p(&cache),
        "--set", "eval.methods=[\"RIDGE\"]", "--folds", "4", "--variant", "single-mean", "--deterministic",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.folds.len(), 4);
    assert!(report.median.srocc > 0.99, "{report}");

    let table_path = dir.path().join("ablation.json");
    let o = disque(&[
        "ablate", "--model", p(&ckpt), "--records", p(&records), "--out", p(&table_path), "--cache", p(&cache),
        "--set", "eval.methods=[\"RIDGE\"]", "--folds", "2", "--deterministic",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(table.starts_with("Scale"));
}
