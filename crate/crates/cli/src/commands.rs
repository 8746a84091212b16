use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use instant3d::trace::{inter_group_distances, intra_group_distances, unique_window_series, FileSink, MemorySink, WindowMode};
use instant3d::{AccessTrace, DecomposedFieldConfig, Phase, Scene, TrainReport};
use instant3d_sim::{simulate as run_sim, FusionMode, SimConfig, SimReport};

use crate::config::{self, build_scene, RunConfig, SceneSource};
use crate::{Failure, RunArgs, WindowArg};

struct Resolved {
    run: RunConfig,
    source: SceneSource,
    field: DecomposedFieldConfig,
}

fn resolve(config: Option<&Path>, scene: Option<&str>, seed: Option<u64>, iterations: Option<u32>, allow_inverted: bool) -> Result<Resolved, Failure> {
    let mut run = config::load(config)?;
    if let Some(s) = scene {
        run.scene = Some(s.to_string());
        if config.is_none() {
            run.base_dir = PathBuf::new();
        }
    }
    if seed.is_some() {
        run.seed = seed;
    }
    if let Some(n) = iterations {
        run.field.iterations = n;
    }
    run.allow_inverted |= allow_inverted;
    let source = run.scene_source()?;
    let field = run.field_config()?;
    Ok(Resolved { run, source, field })
}

fn resolve_args(a: &RunArgs) -> Result<Resolved, Failure> {
    resolve(a.config.as_deref(), a.scene.as_deref(), a.seed, a.iterations, a.allow_inverted)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn summary_csv(r: &TrainReport) -> String {
    let mut s = String::from("metric,value\n");
    let _ = writeln!(s, "iterations,{}", r.history.len());
    let _ = writeln!(s, "final_loss,{:.9e}", r.history.last().map_or(f64::NAN, |h| h.loss));
    let _ = writeln!(s, "train_psnr,{:.6}", r.train_psnr);
    if let Some(t) = r.test_psnr {
        let _ = writeln!(s, "test_psnr,{t:.6}");
    }
    let _ = writeln!(s, "density_updates,{}", r.density_updates);
    let _ = writeln!(s, "color_updates,{}", r.color_updates);
    let _ = writeln!(s, "density_entries,{}", r.density_entries);
    let _ = writeln!(s, "color_entries,{}", r.color_entries);
    s
}

pub fn train(args: &RunArgs, out: Option<PathBuf>) -> Result<(), Failure> {
    let r = resolve_args(args)?;
    let scene = build_scene(&r.source)?;
    let outcome = instant3d::train(&scene, &r.field, None)?;
    let dir = out.or_else(|| r.run.report_dir()).unwrap_or_else(|| PathBuf::from("."));
    write(&dir.join("train.csv"), outcome.report.csv())?;
    write(&dir.join("summary.csv"), summary_csv(&outcome.report))?;
    let mut ckpt = Vec::new();
    outcome.field.write_to(&mut ckpt)?;
    write(&dir.join("field.bin"), ckpt)?;
    print!("{}", outcome.report.summary());
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn trace(args: &RunArgs, out: &Path) -> Result<(), Failure> {
    let mut r = resolve_args(args)?;
    if args.iterations.is_none() {
        r.field.iterations = r.run.trace.iterations;
    }
    let scene = build_scene(&r.source)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut sink = FileSink::create(out, &r.field.trace_header()).with_context(|| format!("creating {}", out.display()))?;
    instant3d::train(&scene, &r.field, Some(&mut sink))?;
    println!("{} records over {} iterations -> {}", sink.count(), r.field.iterations, out.display());
    Ok(())
}

fn load_trace(path: &Path) -> Result<AccessTrace, Failure> {
    AccessTrace::load(path).with_context(|| format!("reading trace {}", path.display())).map_err(Failure::Runtime)
}

pub fn analyze(trace_path: &Path, out: &Path, window: usize, mode: WindowArg) -> Result<(), Failure> {
    if window == 0 {
        return Err(Failure::Usage("--window must be at least 1".into()));
    }
    let trace = load_trace(trace_path)?;
    let mode = match mode {
        WindowArg::Tiled => WindowMode::Tiled,
        WindowArg::Sliding => WindowMode::Sliding,
    };
    let mut windows = String::from("phase,window,unique\n");
    let mut means = Vec::new();
    for (name, phase) in [("forward", Phase::Forward), ("backward", Phase::Backward)] {
        let series = unique_window_series(trace.phase_view(phase), window, mode)?;
        for (i, u) in series.iter().enumerate() {
            let _ = writeln!(windows, "{name},{i},{u}");
        }
        let mean = if series.is_empty() { 0.0 } else { series.iter().sum::<usize>() as f64 / series.len() as f64 };
        means.push((name, mean));
    }
    let intra = intra_group_distances(trace.phase_view(Phase::Forward))?;
    let inter = inter_group_distances(trace.phase_view(Phase::Forward))?;
    let mut hist = String::from("delta,count\n");
    for (d, c) in &intra.histogram {
        let _ = writeln!(hist, "{d},{c}");
    }
    let mut summary = String::from("metric,value\n");
    let _ = writeln!(summary, "records,{}", trace.len());
    let _ = writeln!(summary, "forward_records,{}", trace.phase_view(Phase::Forward).count());
    let _ = writeln!(summary, "backward_records,{}", trace.phase_view(Phase::Backward).count());
    for (name, m) in &means {
        let _ = writeln!(summary, "{name}_window_mean_unique,{m:.6}");
    }
    let _ = writeln!(summary, "intra_group_within_5,{:.6}", intra.fraction_within_5);
    let _ = writeln!(summary, "inter_group_pairs,{}", inter.pairs);
    let _ = writeln!(summary, "inter_group_mean,{:.6}", inter.mean);
    let _ = writeln!(summary, "inter_group_median,{:.6}", inter.median);
    write(&out.join("windows.csv"), windows)?;
    write(&out.join("intra.csv"), hist)?;
    write(&out.join("summary.csv"), &summary)?;
    print!("{}", summary);
    Ok(())
}

fn sim_config(config: Option<&Path>, no_frm: bool, no_bum: bool, fusion: Option<FusionMode>) -> Result<SimConfig, Failure> {
    let mut sim = config::load(config)?.sim;
    sim.frm &= !no_frm;
    sim.bum &= !no_bum;
    if fusion.is_some() {
        sim.fusion = fusion;
    }
    sim.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(sim)
}

pub fn simulate(trace_path: &Path, config: Option<&Path>, report: &Path, no_frm: bool, no_bum: bool, fusion: Option<FusionMode>) -> Result<(), Failure> {
    let sim = sim_config(config, no_frm, no_bum, fusion)?;
    let trace = load_trace(trace_path)?;
    let r = run_sim(&trace, &sim)?;
    write(report, r.csv())?;
    println!(
        "total cycles {} ({:.6} s at {} GHz), grid phase {} cycles -> {}",
        r.total_cycles,
        r.seconds(),
        sim.clock_ghz,
        r.grid_phase_cycles(),
        report.display()
    );
    Ok(())
}

fn traced_sim(scene: &Scene, r: &Resolved) -> anyhow::Result<SimReport> {
    let cfg = DecomposedFieldConfig { iterations: r.run.trace.iterations, ..r.field.clone() };
    let mut sink = MemorySink::new();
    instant3d::train(scene, &cfg, Some(&mut sink))?;
    Ok(run_sim(&sink.into_trace(cfg.trace_header()), &r.run.sim)?)
}

pub const COMPARE_HEADER: &str = "config,density_table_size,color_table_size,density_freq,color_freq,train_psnr,test_psnr,density_updates,color_updates,density_entries,color_entries,grid_phase_cycles,total_cycles";

pub fn compare(
    baseline: &Path,
    decomposed: &Path,
    out: &Path,
    seed: Option<u64>,
    iterations: Option<u32>,
    with_sim: bool,
    allow_inverted: bool,
) -> Result<(), Failure> {
    let a = resolve(Some(baseline), None, seed, iterations, allow_inverted)?;
    let b = resolve(Some(decomposed), None, seed, iterations, allow_inverted)?;
    if a.source != b.source {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "contract violated: baseline and decomposed configs use different scenes"
        )));
    }
    let scene = build_scene(&a.source)?;
    let mut table = String::from(COMPARE_HEADER);
    table.push('\n');
    for (name, r) in [("baseline", &a), ("decomposed", &b)] {
        let started = Instant::now();
        let rep = instant3d::train(&scene, &r.field, None)?.report;
        let sim = if with_sim { Some(traced_sim(&scene, r)?) } else { None };
        let _ = writeln!(
            table,
            "{name},{},{},{},{},{:.6},{},{},{},{},{},{},{}",
            r.field.density.table_size,
            r.field.color.table_size,
            r.field.density_freq,
            r.field.color_freq,
            rep.train_psnr,
            rep.test_psnr.map(|t| format!("{t:.6}")).unwrap_or_default(),
            rep.density_updates,
            rep.color_updates,
            rep.density_entries,
            rep.color_entries,
            sim.as_ref().map(|s| s.grid_phase_cycles().to_string()).unwrap_or_default(),
            sim.as_ref().map(|s| s.total_cycles.to_string()).unwrap_or_default(),
        );
        eprintln!("{name}: {:.1} s", started.elapsed().as_secs_f64());
    }
    write(out, &table)?;
    print!("{table}");
    Ok(())
}
