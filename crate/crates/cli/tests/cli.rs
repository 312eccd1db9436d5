use std::path::Path;
use std::process::{Command, Output};

fn fracseg(out: &Path, args: &[&str]) -> Output {
    let o = Command::new(env!("CARGO_BIN_EXE_fracseg"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn fracseg");
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn mu_table_lists_every_octave_range() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracseg(dir.path(), &["mu-table", "--jmax", "5"]);
    let text = String::from_utf8(o.stdout).unwrap();
    // header plus C(5,2) ranges
    assert_eq!(text.lines().count(), 11);
    let row = text.lines().find(|l| l.starts_with("2,5,")).unwrap();
    let mu: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((mu - 0.3469).abs() < 1e-4);
    assert!(dir.path().join("mu_table.csv").exists());
}

#[test]
fn synth_analyze_segment_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fracseg(d, &["synth", "--n", "128", "--seed", "3"]);
    assert!(d.join("texture.fseg").exists() && d.join("mask.pgm").exists());

    fracseg(d, &["analyze", d.join("texture.fseg").to_str().unwrap()]);
    for f in ["h_lr.f64", "h_lr.hdr", "v_lr.f64", "loglead_j2.f64", "loglead_j5.hdr"] {
        assert!(d.join(f).exists(), "{f}");
    }

    let o = fracseg(
        d,
        &[
            "segment",
            d.join("texture.fseg").to_str().unwrap(),
            "--method",
            "coupled",
            "--lambda",
            "10",
            "--alpha",
            "1",
            "--max-iter",
            "200",
            "--truth",
            d.join("mask.pgm").to_str().unwrap(),
        ],
    );
    let text = String::from_utf8(o.stdout).unwrap();
    let score: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("score "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((0.5..=1.0).contains(&score));
    for f in ["h.f64", "v.f64", "trace.csv", "segmentation.pgm"] {
        assert!(d.join(f).exists(), "{f}");
    }
}

#[test]
fn gap_writes_one_trace_per_engine() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fracseg(d, &["synth", "--n", "64", "--homogeneous-h", "0.5"]);
    fracseg(
        d,
        &["gap", d.join("texture.fseg").to_str().unwrap(), "--method", "rof", "--lambda", "1", "--max-iter", "100"],
    );
    for e in ["dfb", "fista", "pd", "acpd"] {
        let path = d.join(format!("gap_t-rof_{e}.csv"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().count() > 1, "{e}");
    }
}

#[test]
fn bench_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.toml");
    std::fs::write(
        &cfg,
        "preset = \"I\"\nn = 64\nrealizations = 1\nmethods = [\"T-ROF\"]\n\
         lambda_min = 1.0\nlambda_max = 1.0\nlambda_count = 1\nmax_iter = 200\nj2 = 4\n",
    )
    .unwrap();
    fracseg(d, &["bench", "--config", cfg.to_str().unwrap()]);
    for f in ["records.csv", "best.csv", "costs.csv"] {
        assert!(d.join(f).exists(), "{f}");
    }
}

#[test]
fn rejects_unknown_method() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fracseg"))
        .arg("--out-dir")
        .arg(dir.path())
        .args(["segment", "missing.fseg", "--method", "nope"])
        .output()
        .unwrap();
    assert!(!o.status.success());
}
