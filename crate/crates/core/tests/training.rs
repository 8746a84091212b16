use std::collections::HashMap;

use instant3d::trace::{intra_group_distances, unique_window_series, MemorySink, WindowMode};
use instant3d::{generate_toy_scene, train, Branch, DecomposedField, DecomposedFieldConfig, HashConfig, Phase, Scene, ToySceneSpec};

fn scene() -> Scene {
    generate_toy_scene(&ToySceneSpec::sphere(), 4, 1, 16, 9).unwrap()
}

fn small(iterations: u32) -> DecomposedFieldConfig {
    DecomposedFieldConfig { iterations, batch_size: 32, samples_per_ray: 8, ..Default::default() }
}

fn baseline(iterations: u32) -> DecomposedFieldConfig {
    let mut c = small(iterations);
    c.color = c.density.clone();
    c
}

#[test]
fn fused_storage_trains_bit_identically() {
    let s = scene();
    let split = train(&s, &baseline(12), None).unwrap();
    let fused = train(&s, &DecomposedFieldConfig { fused_baseline: true, ..baseline(12) }, None).unwrap();
    assert!(fused.field.is_fused());
    assert_eq!(split.report.history, fused.report.history);
    assert_eq!(split.report.train_psnr.to_bits(), fused.report.train_psnr.to_bits());
    let (sd, sc) = split.field.tables();
    let (fd, fc) = fused.field.tables();
    assert_eq!(sd.data(), fd.data());
    assert_eq!(sc.data(), fc.data());
    assert_eq!(split.field.mlp, fused.field.mlp);
}

#[test]
fn half_frequency_halves_color_updates() {
    let s = scene();
    let mut cfg = small(10);
    cfg.color_freq = "1/2".parse().unwrap();
    let r = train(&s, &cfg, None).unwrap().report;
    assert_eq!(r.density_updates, 10);
    assert_eq!(r.color_updates, 5);
    assert_eq!(r.color_entries * 4, r.density_entries);

    cfg.iterations = 7;
    cfg.color_freq = "0.3".parse().unwrap();
    let r = train(&s, &cfg, None).unwrap().report;
    // ceil(7 * 3 / 10)
    assert_eq!(r.color_updates, 3);
}

#[test]
fn same_seed_same_report() {
    let s = scene();
    let a = train(&s, &small(6), None).unwrap().report;
    let b = train(&s, &small(6), None).unwrap().report;
    assert_eq!(a.csv(), b.csv());
    let c = train(&s, &DecomposedFieldConfig { seed: 1, ..small(6) }, None).unwrap().report;
    assert_ne!(a.csv(), c.csv());
}

#[test]
fn trace_has_expected_shape() {
    let s = scene();
    let cfg = DecomposedFieldConfig { batch_size: 64, samples_per_ray: 16, ..small(1) };
    let mut sink = MemorySink::new();
    train(&s, &cfg, Some(&mut sink)).unwrap();
    let recs = sink.records();
    assert!(!recs.is_empty());

    let mut per_point: HashMap<(Branch, u32, u8), usize> = HashMap::new();
    for r in recs.iter().filter(|r| r.phase == Phase::Forward) {
        *per_point.entry((r.branch, r.point_id, r.level)).or_default() += 1;
    }
    assert!(per_point.values().all(|&c| c == 8));
    let points = per_point.keys().filter(|k| k.0 == Branch::Density && k.2 == 0).count();
    assert_eq!(per_point.len(), points * (cfg.density.levels + cfg.color.levels) as usize);

    let mean = |phase| {
        let s = unique_window_series(recs.iter().filter(|r| r.phase == phase), 1000, WindowMode::Tiled).unwrap();
        s.iter().sum::<usize>() as f64 / s.len() as f64
    };
    assert!(mean(Phase::Backward) < mean(Phase::Forward));

    let intra = intra_group_distances(recs.iter().filter(|r| r.phase == Phase::Forward)).unwrap();
    assert!(intra.fraction_within_5 >= 0.8, "{}", intra.fraction_within_5);
}

#[test]
fn checkpoint_roundtrip_after_training() {
    let s = scene();
    let cfg = small(5);
    let out = train(&s, &cfg, None).unwrap();
    let mut bytes = Vec::new();
    out.field.write_to(&mut bytes).unwrap();
    let back = DecomposedField::read_from(bytes.as_slice(), cfg.density.clone(), cfg.color.clone()).unwrap();
    assert_eq!(back, out.field);

    let wrong = HashConfig { table_size: cfg.color.table_size * 2, ..cfg.color.clone() };
    assert!(DecomposedField::read_from(bytes.as_slice(), cfg.density.clone(), wrong).is_err());
    assert!(DecomposedField::read_from(&bytes[..bytes.len() - 3], cfg.density.clone(), cfg.color.clone()).is_err());
}

#[test]
fn inverted_grids_need_override() {
    let mut cfg = small(1);
    std::mem::swap(&mut cfg.density, &mut cfg.color);
    assert!(cfg.validate(false).is_err());
    let warnings = cfg.validate(true).unwrap();
    assert_eq!(warnings.len(), 1);
}
