use fracseg::gridops::Mask;
use fracseg::harness::{
    best_over_grid, ingest_real_texture, run_config, save_tables, synthesize_realization, ExperimentConfig, LogGrid,
    Method, Scale,
};
use fracseg::solvers::Engine;
use fracseg::synthesis::ellipse_mask;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(
        r#"
        preset = "I"
        n = 64
        realizations = 2
        methods = ["T-ROF", "T-joint"]
        lambda_min = 0.5
        lambda_max = 5.0
        lambda_count = 2
        alpha_min = 1.0
        alpha_max = 1.0
        alpha_count = 1
        max_iter = 300
        "#,
    )
    .unwrap()
}

#[test]
fn empty_method_list_gives_no_records() {
    let mut cfg = tiny();
    cfg.methods.clear();
    assert!(run_config(&cfg).unwrap().is_empty());
}

#[test]
fn grid_runs_every_cell_and_is_reproducible() {
    let cfg = tiny();
    let a = run_config(&cfg).unwrap();
    // 2 realizations x (2 ROF cells + 2 joint cells)
    assert_eq!(a.len(), 8);
    assert!(a.iter().all(|r| (0.5..=1.0).contains(&r.score) && r.iterations <= 300));
    let b = run_config(&cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.method, x.lambda, x.realization, x.score), (y.method, y.lambda, y.realization, y.score));
    }

    let best = best_over_grid(&a).unwrap();
    assert_eq!(best.len(), 2);
    for cell in &best {
        for lambda in [0.5, 5.0] {
            let mean = a
                .iter()
                .filter(|r| r.method == cell.method && (r.lambda - lambda).abs() < 1e-12)
                .map(|r| r.score)
                .sum::<f64>()
                / 2.0;
            assert!(cell.score.mean >= mean - 1e-15);
        }
    }

    let dir = tempfile::tempdir().unwrap();
    save_tables(&a, dir.path()).unwrap();
    let records = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 9);
    for f in ["best.csv", "costs.csv"] {
        assert!(dir.path().join(f).exists());
    }
}

#[test]
fn single_cell_with_explicit_engine() {
    let mut cfg = ExperimentConfig::preset("I", Scale::Desk).unwrap();
    cfg.n = 64;
    cfg.realizations = 1;
    cfg.methods = vec![(Method::Coupled, vec![Engine::Fista, Engine::AcPd])];
    cfg.lambda_grid = LogGrid::single(2.0);
    cfg.alpha_grid = LogGrid::single(1.0);
    cfg.max_iter = 200;
    let recs = run_config(&cfg).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].engine, Engine::Fista);
    assert_eq!(recs[1].engine, Engine::AcPd);
    assert_eq!(recs[0].alpha, Some(1.0));
}

#[test]
fn config_file_rejects_unknown_keys() {
    assert!(ExperimentConfig::from_toml_str("lamda_min = 1.0").is_err());
    assert!(ExperimentConfig::from_toml_str("preset = \"XI\"").is_err());
}

#[test]
fn realization_texture_matches_its_mask() {
    let mut cfg = tiny();
    cfg.n = 128;
    let (texture, mask) = synthesize_realization(&cfg, 0).unwrap();
    assert_eq!(texture.dims(), (128, 128));
    assert_eq!(mask.dims(), (128, 128));
    let frac = mask.fraction();
    assert!(frac > 0.1 && frac < 0.4, "{frac}");
    let again = synthesize_realization(&cfg, 0).unwrap().0;
    assert_eq!(texture, again);
    assert_ne!(texture, synthesize_realization(&cfg, 1).unwrap().0);
}

#[test]
fn ingest_two_images_under_a_mask() {
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.png"), dir.path().join("b.png"));
    image::GrayImage::from_fn(64, 64, |x, y| image::Luma([((x * 7 + y * 3) % 256) as u8])).save(&pa).unwrap();
    image::GrayImage::from_fn(64, 64, |x, y| image::Luma([((x * y) % 251) as u8])).save(&pb).unwrap();
    let mask = ellipse_mask(64, (32.0, 32.0), (16.0, 10.0)).unwrap();
    let x = ingest_real_texture(&pa, &pb, &mask).unwrap();
    assert_eq!(x.dims(), (64, 64));
    // each region is a slice of a standardized image, so the whole field
    // stays bounded and finite
    assert!(x.as_slice().iter().all(|v| v.is_finite() && v.abs() < 10.0));

    let wrong = Mask::zeros(32, 32);
    assert!(ingest_real_texture(&pa, &pb, &wrong).is_err());
    assert!(ingest_real_texture(&pa, &dir.path().join("missing.png"), &mask).is_err());
}
