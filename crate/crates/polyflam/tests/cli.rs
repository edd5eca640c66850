use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polyflam_core::assets;

const TINY_CONFIG: &str =
    "seed = 11\nsizes = [150, 300]\nk_values = [5, 10]\nrepeats = 2\n[forest]\nn_trees = 8\n";

fn polyflam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyflam"))
        .current_dir(dir)
        .env_remove(assets::ASSETS_ENV)
        .env_remove("POLYFLAM_BUNDLE")
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY_CONFIG).unwrap();
    dir
}

fn copy_assets(to: &Path) -> PathBuf {
    let dest = to.join("assets");
    std::fs::create_dir_all(&dest).unwrap();
    for entry in std::fs::read_dir(assets::default_assets_dir()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dest.join(entry.file_name())).unwrap();
    }
    dest
}

#[test]
fn ingest_reports_filter() {
    let dir = workdir();
    let out = polyflam(dir.path(), &["ingest"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("26 kept, 6 removed"), "{text}");
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn ingest_names_tampered_file() {
    let dir = workdir();
    let assets_dir = copy_assets(dir.path());
    let table = assets_dir.join(assets::TABLE2_FILE);
    let text = std::fs::read_to_string(&table).unwrap();
    std::fs::write(&table, text.replacen('1', "2", 1)).unwrap();
    let out = polyflam(dir.path(), &["--assets", assets_dir.to_str().unwrap(), "ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stdout(&out).contains("[FAIL] table2.csv checksum"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn descriptors_and_synth_roundtrip() {
    let dir = workdir();
    let out = polyflam(
        dir.path(),
        &[
            "descriptors",
            "--smiles",
            "*CC(*)c1ccccc1",
            "--smiles",
            "*CC(*)Cl",
            "--output",
            "desc.csv",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let desc = std::fs::read_to_string(dir.path().join("desc.csv")).unwrap();
    assert_eq!(desc.lines().count(), 3);

    let bad = polyflam(dir.path(), &["descriptors", "--smiles", "C1CC"]);
    assert_eq!(bad.status.code(), Some(1));

    let mut rows = String::from("a,b,c\n");
    for i in 0..12 {
        rows.push_str(&format!("{},{},{}\n", i, (i * 7) % 5, i * i));
    }
    std::fs::write(dir.path().join("feat.csv"), rows).unwrap();
    let args = [
        "synth", "--input", "feat.csv", "-n", "40", "--seed", "5", "--output",
    ];
    let a = polyflam(dir.path(), &[&args[..], &["s1.csv"]].concat());
    let b = polyflam(
        dir.path(),
        &[&args[..], &["s2.csv", "--model-out", "copula.json"]].concat(),
    );
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(b.status.code(), Some(0));
    let s1 = std::fs::read(dir.path().join("s1.csv")).unwrap();
    assert_eq!(s1, std::fs::read(dir.path().join("s2.csv")).unwrap());
    assert_eq!(String::from_utf8(s1).unwrap().lines().count(), 41);
    assert!(dir.path().join("copula.json").exists());
}

#[test]
fn train_eval_predict_is_reproducible() {
    let dir = workdir();
    let run = |out_dir: &str, bundle: &str| {
        let t = polyflam(
            dir.path(),
            &[
                "train",
                "--config",
                "tiny.toml",
                "--out-dir",
                out_dir,
                "--bundle",
                bundle,
            ],
        );
        assert_eq!(t.status.code(), Some(0), "{}", String::from_utf8_lossy(&t.stderr));
        let e = polyflam(
            dir.path(),
            &[
                "eval",
                "--config",
                "tiny.toml",
                "--out-dir",
                out_dir,
                "--bundle",
                bundle,
            ],
        );
        assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    };
    run("a", "a.json");
    run("b", "b.json");

    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    let mut files: Vec<String> = std::fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files.len(), 5 * 3 + 3, "{files:?}");
    for f in &files {
        assert_eq!(read(&format!("a/{f}")), read(&format!("b/{f}")), "{f} differs");
    }
    let repeats = String::from_utf8(read("a/eval_repeats.csv")).unwrap();
    assert_eq!(repeats.lines().count(), 1 + 5 * 2);

    let p1 = polyflam(
        dir.path(),
        &["predict", "--smiles", "*CC(*)c1ccccc1", "--bundle", "a.json"],
    );
    let p2 = polyflam(
        dir.path(),
        &["predict", "--smiles", "*CC(*)c1ccccc1", "--bundle", "b.json"],
    );
    assert_eq!(
        p1.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&p1.stderr)
    );
    assert_eq!(p1.stdout, p2.stdout);
    let v: serde_json::Value = serde_json::from_slice(&p1.stdout).unwrap();
    for key in ["fi", "tig", "phrr", "tsr", "figra"] {
        assert!(v[key].as_f64().unwrap().is_finite(), "{key}");
    }

    let pdb = assets::default_assets_dir().join(assets::SAMPLE_PDB_FILE);
    let p = polyflam(
        dir.path(),
        &["predict", "--pdb", pdb.to_str().unwrap(), "--bundle", "a.json"],
    );
    assert_eq!(p.status.code(), Some(0));

    let bad = polyflam(dir.path(), &["predict", "--smiles", "C1CC", "--bundle", "a.json"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn sweep_writes_curves_only() {
    let dir = workdir();
    let out = polyflam(dir.path(), &["sweep", "--config", "tiny.toml", "--out-dir", "s"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let size = std::fs::read_to_string(dir.path().join("s/fi_size_sweep.csv")).unwrap();
    assert_eq!(size.lines().next(), Some("n_synthetic,r2_test_real"));
    assert_eq!(size.lines().count(), 3);
    assert!(!dir.path().join("s/train_report.json").exists());
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = workdir();
    let missing = polyflam(
        dir.path(),
        &["predict", "--smiles", "CC", "--bundle", "missing.json"],
    );
    assert_eq!(missing.status.code(), Some(2));

    std::fs::write(dir.path().join("junk.json"), "{\"format\": \"other\"}").unwrap();
    let wrong = polyflam(
        dir.path(),
        &["predict", "--smiles", "CC", "--bundle", "junk.json"],
    );
    assert_eq!(wrong.status.code(), Some(1));

    std::fs::write(dir.path().join("bad.toml"), "sizes = [300, 100]\n").unwrap();
    let cfg = polyflam(dir.path(), &["sweep", "--config", "bad.toml"]);
    assert_eq!(cfg.status.code(), Some(1));
}
