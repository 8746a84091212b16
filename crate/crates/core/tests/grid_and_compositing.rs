use instant3d::hash_grid::{hash_index, neighbor_cube, HashConfig};
use instant3d::render::{composite, SamplePoint};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference hash in 64-bit arithmetic, reduced mod 2^32 by hand.
fn hash_oracle(c: [u32; 3], t: u32) -> u32 {
    let m = 1u64 << 32;
    let a = u64::from(c[0]) % m;
    let b = (u64::from(c[1]) * 2_654_435_761) % m;
    let d = (u64::from(c[2]) * 805_459_861) % m;
    ((a ^ b ^ d) % u64::from(t)) as u32
}

fn table(t: u32) -> HashConfig {
    HashConfig { table_size: t, ..HashConfig::default() }
}

#[test]
fn hash_agrees_with_wide_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in [1 << 10, 1 << 16] {
        let cfg = table(t);
        for _ in 0..100_000 {
            let c = [rng.gen(), rng.gen(), rng.gen()];
            assert_eq!(hash_index(c, &cfg), hash_oracle(c, t), "{c:?}");
        }
    }
    let cfg = table(1 << 16);
    assert_eq!(hash_index([0, 0, 0], &cfg), 0);
    assert_eq!(hash_index([1, 0, 0], &cfg), 1);
    assert_eq!(hash_index([0, 1, 0], &cfg), 31153);
    assert_eq!(hash_index([0, 0, 1], &cfg), 22421);
}

proptest! {
    #[test]
    fn hash_stays_in_table(c in prop::array::uniform3(any::<u32>()), log_t in 0u32..24) {
        let t = 1u32 << log_t;
        prop_assert!(hash_index(c, &table(t)) < t);
    }

    #[test]
    fn even_x_neighbours_differ_by_one(x in (0u32..1 << 20).prop_map(|v| v * 2), y in any::<u32>(), z in any::<u32>(), log_t in 1u32..24) {
        let cfg = table(1 << log_t);
        let a = i64::from(hash_index([x, y, z], &cfg));
        let b = i64::from(hash_index([x + 1, y, z], &cfg));
        prop_assert_eq!((b - a).abs(), 1);
    }

    #[test]
    fn cube_weights_partition_unity(p in prop::array::uniform3(0.0f64..=1.0), level in 0u32..4) {
        let cfg = HashConfig::default();
        let cube = neighbor_cube(p, level, &cfg).unwrap();
        let sum: f64 = cube.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(cube.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
        let res = cfg.resolution(level);
        for c in cube.vertex_coords {
            prop_assert!(c.iter().all(|&v| v < res));
        }
    }

    #[test]
    fn composite_stays_in_color_range(
        raw in prop::collection::vec((0.0f64..50.0, prop::array::uniform3(0.0f64..=1.0), 0.01f64..0.5), 0..20),
        bg in prop::array::uniform3(0.0f64..=1.0),
    ) {
        let mut t = 0.0;
        let samples: Vec<SamplePoint> = raw.iter().map(|&(sigma, color, dt)| { t += dt; SamplePoint { t, sigma, color } }).collect();
        let (c, cache) = composite(&samples, t + 0.1, bg).unwrap();
        for ch in c {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ch));
        }
        let tr = cache.transmittance();
        prop_assert!(tr.windows(2).all(|w| w[1] <= w[0]));
        let w_sum: f64 = cache.weights().iter().sum::<f64>() + tr[tr.len() - 1];
        prop_assert!((w_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn more_density_lets_less_light_through(
        raw in prop::collection::vec((0.0f64..10.0, 0.01f64..0.5), 1..12),
        k in any::<prop::sample::Index>(),
        extra in 0.0f64..5.0,
    ) {
        let mut t = 0.0;
        let samples: Vec<SamplePoint> = raw.iter().map(|&(sigma, dt)| { t += dt; SamplePoint { t, sigma, color: [1.0; 3] } }).collect();
        let t_far = t + 0.1;
        let (_, base) = composite(&samples, t_far, [0.0; 3]).unwrap();
        let mut denser = samples.clone();
        denser[k.index(samples.len())].sigma += extra;
        let (_, more) = composite(&denser, t_far, [0.0; 3]).unwrap();
        let last = |c: &instant3d::render::CompositeCache| *c.transmittance().last().unwrap();
        prop_assert!(last(&more) <= last(&base));
    }
}
