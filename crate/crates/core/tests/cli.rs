use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lsdc::cli::ConfigFile;
use lsdc::data::{load_features, save_features, FeatureFormat, FeatureMatrix};
use lsdc::trainer;

fn lsdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsdc")).args(args).output().expect("spawn lsdc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_preset_parses() {
    for name in ["cifar10", "cifar100-20", "stl10", "mnist", "reuters10k", "moons", "blobs"] {
        let cfg = ConfigFile::load(&preset(&format!("{name}.cfg"))).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.data_source().unwrap();
    }
    let c10 = ConfigFile::load(&preset("cifar10.cfg")).unwrap().run_config().unwrap();
    assert_eq!((c10.epochs, c10.lr_steps.clone(), c10.lambda, c10.ramp_len_epochs), (220, vec![140, 180], 5.0, 100));
    let reuters = ConfigFile::load(&preset("reuters10k.cfg")).unwrap().run_config().unwrap();
    assert_eq!(reuters.optimizer, lsdc::optim::OptimizerKind::Adam);
    assert_eq!(reuters.weight_decay(), 2e-3);
}

#[test]
fn train_blobs_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = lsdc(&["train", "--config", s(&preset("blobs.cfg")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("acc 1.0000"), "{}", stdout(&o));
    let report = fs::read_to_string(out.join("report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 10);
    assert!(report.lines().all(|l| l.starts_with("{\"epoch\":")));
    let csv = fs::read_to_string(out.join("confusion.csv")).unwrap();
    assert!(csv.starts_with("true_class,cluster_"));
    assert!(out.join("model.lsdh").exists());
}

#[test]
fn train_is_a_thin_delegation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = lsdc(&["train", "--config", s(&preset("blobs.cfg")), "--seed", "5", "--set", "epochs=3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut cfg = ConfigFile::load(&preset("blobs.cfg")).unwrap();
    cfg.set("seed", "5").unwrap();
    cfg.set("epochs", "3").unwrap();
    let (x, y) = cfg.data_source().unwrap().load().unwrap();
    let report = trainer::train(&x, &cfg.run_config().unwrap(), y.as_ref()).unwrap();
    assert_eq!(fs::read_to_string(out.join("report.jsonl")).unwrap(), report.stream_string());
    assert_eq!(fs::read(out.join("model.lsdh")).unwrap(), report.network.to_bytes());
}

#[test]
fn train_moons_with_sne_override() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsdc(&[
        "train", "--config", s(&preset("moons.cfg")),
        "--set", "similarity.kind=sne", "--set", "similarity.tau=0.01", "--set", "similarity.temperature=1.0",
        "--set", "epochs=2", "--out", s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("acc "));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "data.kind = moons\nsimilarity.k = 300\nbatch_size = 256\n").unwrap();
    let o = lsdc(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("similarity.k"), "{}", stderr(&o));

    let o = lsdc(&["train", "--config", s(&preset("moons.cfg")), "--set", "warmup=3", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warmup"));

    let o = lsdc(&["train", "--config", s(&preset("moons.cfg")), "--set", "batch_size=1", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batch_size"));

    let o = lsdc(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_reports_confident_subset_and_checks_dims() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = lsdc(&["train", "--config", s(&preset("blobs.cfg")), "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = dir.path().join("blobs.bin");
    assert!(lsdc(&["gen", "blobs", "--n", "100", "--noise", "0.5", "--out", s(&data)]).status.success());

    let o = lsdc(&["eval", "--checkpoint", s(&run.join("model.lsdh")), "--features", s(&data), "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("threshold 0.9"), "{text}");
    assert!(text.contains("acc 1.0000"), "{text}");
    assert!(text.contains("confident acc"), "{text}");

    let wide = dir.path().join("wide.csv");
    fs::write(&wide, "1,2,3\n4,5,6\n").unwrap();
    let o = lsdc(&["eval", "--checkpoint", s(&run.join("model.lsdh")), "--features", s(&wide)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn kmeans_on_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blobs.bin");
    assert!(lsdc(&["gen", "blobs", "--n", "50", "--noise", "0.3", "--seed", "2", "--out", s(&data)]).status.success());
    let a = lsdc(&["kmeans", "--features", s(&data), "--k", "4", "--seed", "9"]);
    let b = lsdc(&["kmeans", "--features", s(&data), "--k", "4", "--seed", "9"]);
    assert!(a.status.success());
    assert!(stdout(&a).contains("acc 1.0000"), "{}", stdout(&a));
    assert!(stdout(&a).contains("inertia "));
    assert_eq!(stdout(&a), stdout(&b));

    let o = lsdc(&["kmeans", "--features", s(&dir.path().join("missing.bin")), "--k", "4"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gen_round_trips_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let flat = dir.path().join("flat.bin");
    assert!(lsdc(&["gen", "moons", "--n", "200", "--seed", "7", "--out", s(&a)]).status.success());
    assert!(lsdc(&["gen", "moons", "--n", "200", "--seed", "7", "--out", s(&b)]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let (x, y) = load_features(&a, FeatureFormat::Binary).unwrap();
    assert_eq!(x.n_samples(), 200);
    assert_eq!(y.unwrap().num_classes(), 2);

    assert!(lsdc(&["gen", "moons", "--n", "40", "--noise", "0", "--out", s(&flat)]).status.success());
    let (x, y) = load_features(&flat, FeatureFormat::Binary).unwrap();
    for (row, &label) in x.view().rows().into_iter().zip(y.unwrap().as_slice()) {
        let (cx, cy) = if label == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
        let r = ((row[0] - cx).powi(2) + (row[1] - cy).powi(2)).sqrt();
        // f32 storage
        assert!((r - 1.0).abs() < 1e-6, "{r}");
    }
}

fn write_matrix(path: &Path, rows: &[Vec<f64>]) {
    let x = FeatureMatrix::from_rows(rows).unwrap();
    save_features(path, &x, None, FeatureFormat::Binary).unwrap();
}

#[test]
fn edges_command() {
    let dir = tempfile::tempdir().unwrap();
    let line = dir.path().join("line.bin");
    write_matrix(&line, &[vec![0.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]]);
    let out = dir.path().join("edges.txt");
    let o = lsdc(&["edges", "--features", s(&line), "--similarity", "knn", "--k", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("edges 2"));
    assert_eq!(fs::read_to_string(&out).unwrap(), "0 1\n1 2\n");

    let mut rng = lsdc::rng::RngState::new(3);
    let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
    let random = dir.path().join("random.bin");
    write_matrix(&random, &rows);
    let o = lsdc(&["edges", "--features", s(&random), "--similarity", "cosine", "--tau", "0.999999", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("edges 0"));

    // Brute-force count for an L2 threshold on the stored (f32) values.
    let (x, _) = load_features(&random, FeatureFormat::Binary).unwrap();
    let v = x.view();
    let mut expected = 0;
    for i in 0..40 {
        for j in i + 1..40 {
            let d2: f64 = (0..4).map(|c| (v[[i, c]] - v[[j, c]]).powi(2)).sum();
            if d2 < 4.0 {
                expected += 1;
            }
        }
    }
    let o = lsdc(&["edges", "--features", s(&random), "--similarity", "l2", "--tau", "4", "--out", s(&out)]);
    assert!(stdout(&o).contains(&format!("edges {expected}\n")), "{} vs {expected}", stdout(&o));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), expected);
}

#[test]
fn threads_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsdc(&["--threads", "1", "train", "--config", s(&preset("blobs.cfg")), "--set", "epochs=1", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
}
