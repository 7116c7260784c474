use std::path::Path;
use std::process::{Command, Output};

use spherelets::datasets::load_csv;
use spherelets::SphereletModel;

fn spherelets(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spherelets"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = spherelets(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // usage
    assert_eq!(spherelets(d, &["fit", "--d", "1"]).status.code(), Some(2));
    assert_eq!(spherelets(d, &["nonsense"]).status.code(), Some(2));
    // data
    let missing = spherelets(d, &["fit", "--input", "nope.csv", "--d", "1", "--eps", "1e-3", "--out", "m.json"]);
    assert_eq!(missing.status.code(), Some(3));
    std::fs::write(d.join("bad.csv"), "1,2\n3,oops\n").unwrap();
    let bad = spherelets(d, &["fit", "--input", "bad.csv", "--d", "1", "--eps", "1e-3", "--out", "m.json"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("2"));
    std::fs::write(d.join("model.json"), "{\"version\": 1, \"d\": ").unwrap();
    std::fs::write(d.join("pts.csv"), "0,0\n1,1\n").unwrap();
    let trunc = spherelets(d, &["project", "--model", "model.json", "--input", "pts.csv", "--out", "p.csv"]);
    assert_eq!(trunc.status.code(), Some(3));
}

#[test]
fn pipeline_writes_provenance_and_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--dataset", "euler", "--n", "500", "--noise", "0", "--seed", "7", "--out", "e.csv"]);
    let text = std::fs::read_to_string(d.join("e.csv")).unwrap();
    let header: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    assert!(header.iter().any(|l| l.contains(env!("CARGO_PKG_VERSION"))));
    assert!(header.iter().any(|l| l.contains("generate --dataset euler")));
    assert!(header.iter().any(|l| l.contains("seed: 7")));
    let x = load_csv(d.join("e.csv")).unwrap();
    assert_eq!(x.shape(), (500, 2));

    let stdout = ok(d, &["fit", "--input", "e.csv", "--d", "1", "--eps", "1e-6", "--n-min", "10", "--method", "spca", "--out", "m.json"]);
    assert!(stdout.starts_with("pieces: "));
    let model = SphereletModel::load(d.join("m.json")).unwrap();
    assert!(model.provenance.command.as_deref().unwrap().contains("fit --input e.csv"));

    let report = ok(d, &["project", "--model", "m.json", "--input", "e.csv", "--out", "p.csv", "--report-mse"]);
    let projected = load_csv(d.join("p.csv")).unwrap();
    assert_eq!(projected, model.project_all(&x).unwrap());
    let reported: f64 = report.lines().next().unwrap().trim_start_matches("mse: ").parse().unwrap();
    assert_eq!(reported, model.mse(&x).unwrap().overall);
}

#[test]
fn generators_cover_every_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (name, cols) in [("euler", 2), ("spiral", 2), ("enneper", 3), ("sphere", 3)] {
        let out = format!("{name}.csv");
        let clean = format!("{name}_clean.csv");
        ok(d, &["generate", "--dataset", name, "--n", "50", "--noise", "0.1", "--seed", "1", "--out", &out, "--clean-out", &clean]);
        let noisy = load_csv(d.join(&out)).unwrap();
        let truth = load_csv(d.join(&clean)).unwrap();
        assert_eq!(noisy.shape(), (50, cols));
        assert_eq!(truth.shape(), (50, cols));
        let rms = ((&noisy - &truth).norm_squared() / (50 * cols) as f64).sqrt();
        assert!(rms > 0.05 && rms < 0.2, "{name}: {rms}");
    }
}

#[test]
fn denoise_embed_bench_and_rate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--dataset", "spiral", "--n", "200", "--noise", "0.2", "--seed", "2", "--out", "s.csv"]);
    ok(d, &["denoise", "--input", "s.csv", "--method", "gbms", "--k", "20", "--sigma", "1", "--iters", "1", "--d", "1", "--out", "g.csv"]);
    assert_eq!(load_csv(d.join("g.csv")).unwrap().shape(), (200, 2));

    ok(d, &["embed", "--input", "s.csv", "--mode", "euclidean", "--d", "1", "--m", "2", "--k", "10", "--sigma", "2", "--iters", "120", "--lr", "100", "--seed", "0", "--out", "y.csv", "--log", "kl.csv"]);
    assert_eq!(load_csv(d.join("y.csv")).unwrap().shape(), (200, 2));
    let log = std::fs::read_to_string(d.join("kl.csv")).unwrap();
    let rows: Vec<&str> = log.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "iter,kl,best_kl");
    let iters: Vec<usize> = rows[1..].iter().map(|r| r.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(iters, vec![0, 50, 100, 120]);

    ok(d, &["bench", "--dataset", "circle:200", "--d", "1", "--eps-grid", "1e-2,1e-6", "--methods", "spca,pca", "--seed", "3", "--out", "b.csv"]);
    let bench = std::fs::read_to_string(d.join("b.csv")).unwrap();
    let rows: Vec<Vec<&str>> = bench.lines().filter(|l| !l.starts_with('#')).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["method", "eps", "pieces", "train_mse", "test_mse", "wall_time_s", "error"]);
    assert_eq!(rows.len(), 5);
    assert_eq!((rows[1][0], rows[1][2]), ("spca", "1"));
    assert_eq!(rows[3][0], "pca");

    ok(d, &["rate", "--alpha-grid", "0.4,0.04", "--methods", "pca", "--out", "r.csv"]);
    let rate = std::fs::read_to_string(d.join("r.csv")).unwrap();
    let rows: Vec<&str> = rate.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    let slope: f64 = rows[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((3.5..=4.5).contains(&slope));

    let bad = spherelets(d, &["bench", "--dataset", "circle:50", "--d", "1", "--eps-grid", "1e-6,1e-2", "--out", "x.csv"]);
    assert_eq!(bad.status.code(), Some(3));
}
