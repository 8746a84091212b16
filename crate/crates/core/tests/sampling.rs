use std::collections::HashSet;

use instant3d::render::{sample_along_ray, sample_pixels, PixelSampling};
use instant3d::{generate_toy_scene, ToySceneSpec};

/// Upper 0.1% point of chi-square with `k` degrees of freedom (Wilson-Hilferty).
fn chi_square_critical(k: f64) -> f64 {
    let z = 3.090_232;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn pixel_draws_are_uniform() {
    let scene = generate_toy_scene(&ToySceneSpec::sphere(), 2, 0, 8, 3).unwrap();
    let bins = 2 * 8 * 8;
    let draws = 100_000;
    let batch = sample_pixels(&scene, draws, 17, PixelSampling::WithReplacement).unwrap();
    let mut counts = vec![0u64; bins];
    for p in &batch.pixels {
        counts[(p.view * 64 + p.y * 8 + p.x) as usize] += 1;
        assert_eq!(p.color, scene.train_views[p.view as usize].image.get(p.x, p.y));
    }
    let expected = draws as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < chi_square_critical((bins - 1) as f64), "chi2 {chi2}");
}

#[test]
fn full_draw_without_replacement_covers_every_pixel_once() {
    let scene = generate_toy_scene(&ToySceneSpec::sphere(), 3, 0, 8, 3).unwrap();
    let batch = sample_pixels(&scene, 192, 4, PixelSampling::WithoutReplacement).unwrap();
    let ids: HashSet<(u32, u32, u32)> = batch.pixels.iter().map(|p| (p.view, p.x, p.y)).collect();
    assert_eq!(ids.len(), 192);
    assert!(sample_pixels(&scene, 193, 4, PixelSampling::WithoutReplacement).is_err());
}

#[test]
fn stratified_samples_average_to_bin_centres() {
    let (near, far, n) = (2.0, 6.0, 16);
    let trials = 20_000;
    let mut mean = vec![0.0; n];
    for s in 0..trials {
        let t = sample_along_ray(near, far, n, s, true).unwrap();
        for (k, v) in t.iter().enumerate() {
            let lo = near + k as f64 * (far - near) / n as f64;
            assert!(*v >= lo && *v < lo + (far - near) / n as f64);
            mean[k] += v / trials as f64;
        }
    }
    let width = (far - near) / n as f64;
    // standard error of a uniform on the bin is width / sqrt(12 trials)
    let se = width / (12.0 * trials as f64).sqrt();
    for (k, m) in mean.iter().enumerate() {
        let centre = near + (k as f64 + 0.5) * width;
        assert!((m - centre).abs() < 5.0 * se, "bin {k}: {m} vs {centre}");
    }
}
