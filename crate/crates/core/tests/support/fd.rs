//! Central finite differences against the analytic backward passes.

#![allow(dead_code)]

use instant3d::field::FieldGrads;
use instant3d::hash_grid::{EmbeddingTable, GridCube, HashConfig};
use instant3d::mlp::MlpParams;
use instant3d::render::{composite, composite_backward, Ray, SamplePoint};
use instant3d::{BranchMask, DecomposedField, RaySamples};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a - n| / max(|a|, |n|)` over whole gradient vectors.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn central(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn small_grid(rng: &mut ChaCha8Rng) -> HashConfig {
    HashConfig {
        table_size: 1 << rng.gen_range(4..8),
        features: rng.gen_range(1..4),
        base_resolution: rng.gen_range(2..6),
        levels: rng.gen_range(1..4),
        ..HashConfig::default()
    }
}

fn random_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// Worst relative error of the interpolation backward pass over `instances`
/// random grids; the scatter and per-vertex forms must also agree.
pub fn interpolation_worst(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_grid(&mut rng);
        let mut table = EmbeddingTable::uniform(cfg.clone(), 1.0, seed).unwrap();
        let p = random_point(&mut rng);
        let u: Vec<f64> = (0..cfg.embedding_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cubes = vec![GridCube::default(); cfg.levels as usize];
        let mut out = vec![0.0; cfg.embedding_dim()];
        table.interpolate_into(p, &mut out, &mut cubes).unwrap();
        let mut analytic = vec![0.0; table.data().len()];
        table.accumulate_scatter(&cubes, &u, &mut analytic);

        let mut numeric = vec![0.0; analytic.len()];
        for i in 0..numeric.len() {
            let x0 = table.data()[i];
            let mut f = |x: f64| {
                table.data_mut()[i] = x;
                let e = table.interpolate(p).unwrap();
                e.iter().zip(&u).map(|(a, b)| a * b).sum()
            };
            numeric[i] = central(&mut f, x0, 1e-5);
            table.data_mut()[i] = x0;
        }
        worst = worst.max(rel_err(&analytic, &numeric));

        // the per-vertex form agrees with the scatter form
        let contributions = table.interpolate_backward(p, &u).unwrap();
        let mut dense = vec![0.0; analytic.len()];
        for c in contributions {
            let o = table.offset(c.level, c.address);
            for (k, g) in c.grad.iter().enumerate() {
                dense[o + k] += g;
            }
        }
        if rel_err(&analytic, &dense) >= 1e-12 {
            return f64::INFINITY;
        }
    }
    worst
}

fn mlp_objective(mlp: &MlpParams, input: &[f64], rows: usize, w: &[[f64; 4]]) -> f64 {
    let cache = mlp.forward_batch(input.to_vec(), rows).unwrap();
    (0..rows)
        .map(|r| {
            let c = cache.color(r);
            w[r][0] * cache.sigma(r) + w[r][1] * c[0] + w[r][2] * c[1] + w[r][3] * c[2]
        })
        .sum()
}

fn param_mut(m: &mut MlpParams, layer: usize, bias: bool, i: usize) -> &mut f64 {
    let l = &mut m.layers_mut()[layer];
    if bias {
        &mut l.bias[i]
    } else {
        &mut l.weights[i]
    }
}

/// Worst relative error of the network backward pass, over inputs and
/// parameters.
pub fn network_worst(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let emb = rng.gen_range(2..10);
        let rows = rng.gen_range(1..4);
        let mut mlp = MlpParams::xavier(emb, rng.gen_range(3..9), rng.gen_range(1..3), seed);
        // zero biases put exact ReLU kinks wherever a whole layer goes dark
        for l in mlp.layers_mut() {
            for b in &mut l.bias {
                *b = rng.gen_range(-0.2..0.2);
            }
        }
        let dim = mlp.input_dim();
        let input: Vec<f64> = (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<[f64; 4]> = (0..rows).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();

        let cache = mlp.forward_batch(input.clone(), rows).unwrap();
        let mut grads = instant3d::mlp::MlpGrads::zeros_like(&mlp);
        let d_input = mlp.backward_batch(&cache, &w, &mut grads).unwrap();

        let h = 1e-6;
        let mut numeric_in = vec![0.0; input.len()];
        for i in 0..input.len() {
            let mut x = input.clone();
            x[i] += h;
            let up = mlp_objective(&mlp, &x, rows, &w);
            x[i] -= 2.0 * h;
            let down = mlp_objective(&mlp, &x, rows, &w);
            numeric_in[i] = (up - down) / (2.0 * h);
        }
        worst = worst.max(rel_err(&d_input, &numeric_in));

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for l in 0..grads.layers.len() {
            for (is_bias, count) in [(false, grads.layers[l].weights.len()), (true, grads.layers[l].bias.len())] {
                for i in 0..count {
                    analytic.push(if is_bias { grads.layers[l].bias[i] } else { grads.layers[l].weights[i] });
                    let x0 = *param_mut(&mut mlp, l, is_bias, i);
                    *param_mut(&mut mlp, l, is_bias, i) = x0 + h;
                    let up = mlp_objective(&mlp, &input, rows, &w);
                    *param_mut(&mut mlp, l, is_bias, i) = x0 - h;
                    let down = mlp_objective(&mlp, &input, rows, &w);
                    *param_mut(&mut mlp, l, is_bias, i) = x0;
                    numeric.push((up - down) / (2.0 * h));
                }
            }
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize) -> (Vec<SamplePoint>, f64) {
    let mut t = rng.gen_range(0.5..1.0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(SamplePoint {
            t,
            sigma: rng.gen_range(0.0..3.0),
            color: [rng.gen(), rng.gen(), rng.gen()],
        });
        t += rng.gen_range(0.05..0.4);
    }
    (out, t + rng.gen_range(0.0..0.3))
}

fn sample_slot(s: &mut SamplePoint, field: usize) -> &mut f64 {
    if field == 0 {
        &mut s.sigma
    } else {
        &mut s.color[field - 1]
    }
}

/// Worst relative error of the compositing backward pass.
pub fn compositing_worst(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let n = rng.gen_range(1..12);
        let (samples, t_far) = random_samples(&mut rng, n);
        let bg = [rng.gen(), rng.gen(), rng.gen()];
        let u = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let (_, cache) = composite(&samples, t_far, bg).unwrap();
        let g = composite_backward(&samples, &cache, u).unwrap();

        let objective = |s: &[SamplePoint]| {
            let (c, _) = composite(s, t_far, bg).unwrap();
            c[0] * u[0] + c[1] * u[1] + c[2] * u[2]
        };
        let h: f64 = 1e-6;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for k in 0..n {
            for field in 0..4 {
                let mut s = samples.clone();
                let x0 = *sample_slot(&mut s[k], field);
                // keep densities non-negative near zero with a one-sided step
                let step: f64 = if field == 0 { h.min(x0.max(h * 1e-3)) } else { h };
                *sample_slot(&mut s[k], field) = x0 + step;
                let up = objective(&s);
                *sample_slot(&mut s[k], field) = x0 - step;
                let down = objective(&s);
                numeric.push((up - down) / (2.0 * step));
                analytic.push(if field == 0 { g[k].sigma } else { g[k].color[field - 1] });
            }
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn end_to_end_instance(seed: u64) -> (DecomposedField, Vec<RaySamples>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
    let dcfg = HashConfig { table_size: 1 << 6, features: 2, base_resolution: 3, levels: 2, ..HashConfig::default() };
    let ccfg = HashConfig { table_size: 1 << 5, ..dcfg.clone() };
    let mut field = DecomposedField::new(dcfg, ccfg, seed).unwrap();
    for v in field.density_table_mut().unwrap().data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in field.color_table_mut().unwrap().data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let rays = (0..rng.gen_range(1..4))
        .map(|r| {
            let n = rng.gen_range(1..6);
            let origin = random_point(&mut rng);
            let dir = {
                let d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0f64)];
                let l = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-3);
                [d[0] / l, d[1] / l, d[2] / l]
            };
            let mut t = Vec::new();
            let mut tk = 0.1;
            for _ in 0..n {
                t.push(tk);
                tk += rng.gen_range(0.05..0.3);
            }
            let points = (0..n).map(|_| random_point(&mut rng)).collect();
            RaySamples {
                ray: Ray { origin, direction: dir, pixel_id: r, ground_truth: [rng.gen(), rng.gen(), rng.gen()] },
                t,
                t_far: tk,
                points,
            }
        })
        .collect();
    (field, rays)
}

fn loss_of(field: &DecomposedField, rays: &[RaySamples]) -> f64 {
    let colors = field.render(rays, [0.2, 0.3, 0.4]).unwrap();
    colors
        .iter()
        .zip(rays)
        .map(|(c, r)| (0..3).map(|k| (c[k] - r.ray.ground_truth[k]).powi(2)).sum::<f64>())
        .sum()
}

/// Worst relative error of the loss gradient with respect to both tables,
/// taken through a full training step.
pub fn end_to_end_worst(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let (mut field, rays) = end_to_end_instance(seed);
        let mut grads: FieldGrads = field.zero_grads();
        let out = field.step(&rays, [0.2, 0.3, 0.4], BranchMask::ALL, &mut grads, None).unwrap();
        if (out.loss - loss_of(&field, &rays)).abs() > 1e-12 * out.loss.max(1.0) {
            return f64::INFINITY;
        }

        let h = 1e-6;
        for branch in 0..2 {
            let analytic = if branch == 0 { grads.density.clone() } else { grads.color.clone() };
            let mut numeric = vec![0.0; analytic.len()];
            for i in 0..analytic.len() {
                let set = |f: &mut DecomposedField, v: f64| {
                    let t = if branch == 0 { f.density_table_mut() } else { f.color_table_mut() };
                    t.unwrap().data_mut()[i] = v;
                };
                let x0 = if branch == 0 { field.tables().0.data()[i] } else { field.tables().1.data()[i] };
                set(&mut field, x0 + h);
                let up = loss_of(&field, &rays);
                set(&mut field, x0 - h);
                let down = loss_of(&field, &rays);
                set(&mut field, x0);
                numeric[i] = (up - down) / (2.0 * h);
            }
            worst = worst.max(rel_err(&analytic, &numeric));
        }
    }
    worst
}
