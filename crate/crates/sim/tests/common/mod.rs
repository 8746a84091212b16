#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use instant3d::trace::{AccessKind, AccessRecord, AccessTrace, Branch, BranchGeometry, Phase, TraceHeader};

pub fn header(table_size: u32, levels: u32) -> TraceHeader {
    let geo = BranchGeometry { table_size, levels, features: 2 };
    TraceHeader {
        density: geo,
        color: geo,
        mlp_input: 2 * levels * 2 + 27,
        mlp_hidden: 64,
        samples_per_ray: 8,
        batch_size: 4,
        seed: 0,
    }
}

/// Builds a one-iteration trace from per-(point, level) corner address lists
/// for the density branch; writes replay the reads in the same order.
pub fn trace_from_cubes(table_size: u32, levels: u32, cubes: &[(u32, u8, [u32; 8])]) -> AccessTrace {
    let mut t = AccessTrace::new(header(table_size, levels));
    for (phase, kind) in [(Phase::Forward, AccessKind::Read), (Phase::Backward, AccessKind::Write)] {
        for &(point_id, level, addrs) in cubes {
            for (corner, &address) in addrs.iter().enumerate() {
                t.records.push(AccessRecord {
                    iteration: 0,
                    phase,
                    branch: Branch::Density,
                    level,
                    point_id,
                    corner: corner as u8,
                    address,
                    kind,
                });
            }
        }
    }
    t
}

/// One level of consecutive cells. A single unfused core owns the level while
/// the widest fusion spreads it over all 32 banks.
pub fn local_stream_trace() -> AccessTrace {
    let cubes: Vec<(u32, u8, [u32; 8])> = (0..512u32)
        .map(|p| {
            let b = p * 2;
            (p, 0, [b, b + 1, b + 64, b + 65, b + 128, b + 129, b + 192, b + 193])
        })
        .collect();
    trace_from_cubes(1 << 14, 1, &cubes)
}

/// 1000 updates over 200 addresses, each address hit five times within a
/// short span, the way a ray-ordered backward pass revisits nearby vertices.
pub fn windowed_stream(seed: u64) -> Vec<(u64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut addrs: Vec<u64> = (0..200u64).map(|_| rng.gen_range(0..1 << 16)).collect();
    addrs.sort_unstable();
    addrs.dedup();
    while addrs.len() < 200 {
        let a = rng.gen_range(0..1 << 16);
        if !addrs.contains(&a) {
            addrs.push(a);
        }
    }
    addrs.shuffle(&mut rng);
    let mut keyed: Vec<(f64, u64)> = Vec::with_capacity(1000);
    for (j, &a) in addrs.iter().enumerate() {
        for _ in 0..5 {
            keyed.push((j as f64 * 5.0 + rng.gen_range(0.0..20.0), a));
        }
    }
    keyed.sort_by(|x, y| x.0.total_cmp(&y.0));
    keyed.into_iter().map(|(_, a)| (a, 1.0)).collect()
}
