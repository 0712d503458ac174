//! The five subcommands.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use cbt_tess::conformity::check_triangles;
use cbt_tess::export::{to_obj, to_svg};
use cbt_tess::lod::{camera_path_at, parse_path};
use cbt_tess::pipeline::STAGE_NAMES;
use cbt_tess::{shapes, Camera, HalfedgeMesh, HeapId, Lod, LodConfig, LodDecision, MeshError, Pipeline, StateError, TriangulationState, UpdateStats};
use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::snapshot::Snapshot;
use crate::{AnimateArgs, BenchArgs, ExportArgs, Failure, Format, OutputArgs, SubdivideArgs};

type Outcome = Result<(), Failure>;

/// An OBJ path if one exists, otherwise a built-in shape name.
fn load_mesh(spec: &str) -> Result<HalfedgeMesh, Failure> {
    let path = Path::new(spec);
    if path.exists() {
        let file = File::open(path).map_err(|e| Failure::input(anyhow::Error::new(e).context(spec.to_owned())))?;
        return HalfedgeMesh::load_obj(BufReader::new(file)).map_err(|e| Failure::input(anyhow::Error::new(e).context(spec.to_owned())));
    }
    shapes::builtin(spec).ok_or_else(|| Failure::input(anyhow::anyhow!("no mesh file or built-in shape named {spec:?}")))
}

fn new_state(mesh: Arc<HalfedgeMesh>, depth: u32) -> Result<TriangulationState, Failure> {
    TriangulationState::new(mesh, depth).map_err(|e| match e {
        StateError::Capacity { .. } => Failure::Capacity(e.to_string()),
        StateError::Cbt(_) => Failure::Usage(e.to_string()),
    })
}

fn pipeline(threads: Option<usize>) -> Result<Pipeline, Failure> {
    let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    Pipeline::new(n).map_err(|e| Failure::Input(e.into()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Outcome {
    fs::create_dir_all(dir).and_then(|_| fs::write(dir.join(name), contents)).map_err(|e| {
        Failure::Input(anyhow::Error::new(e).context(format!("writing {}", dir.join(name).display())))
    })
}

fn stats_csv(rows: &[UpdateStats], timing: bool) -> String {
    let mut csv = String::from(UpdateStats::CSV_HEADER);
    csv.push('\n');
    for (epoch, s) in rows.iter().enumerate() {
        csv.push_str(&s.csv_row(epoch, timing));
        csv.push('\n');
    }
    csv
}

pub fn validate(spec: &str) -> Outcome {
    let mesh = match load_mesh(spec) {
        Ok(m) => m,
        Err(Failure::Input(e)) => {
            if let Some(MeshError::Invalid(v)) = e.downcast_ref::<MeshError>() {
                println!("{v}");
            }
            return Err(Failure::Input(e));
        }
        Err(f) => return Err(f),
    };
    let violations = mesh.validate();
    for v in &violations {
        println!("{v}");
    }
    let s = mesh.stats();
    println!(
        "H={} V={} faces={} boundary={} max_degree={}",
        s.halfedges, s.vertices, s.faces, s.boundary_halfedges, s.max_degree
    );
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::input(anyhow::anyhow!("{} violations", violations.len())))
    }
}

/// Splits until every bisector reaches depth `k`, returning per-epoch
/// stats. Conservative reservations near capacity may defer splits, so this
/// can take more than `k` epochs.
fn uniform(state: &mut TriangulationState, pipe: &Pipeline, k: u32) -> Result<Vec<UpdateStats>, Failure> {
    let h = state.mesh().halfedge_count() as u64;
    let needed = h << k;
    if k > state.layout().max_depth() || needed > state.capacity() as u64 {
        return Err(Failure::Capacity(format!(
            "depth {k} needs {needed} bisectors, the pool holds {}",
            state.capacity()
        )));
    }
    let layout = *state.layout();
    let decide = |id: HeapId| if layout.depth(id) < k { LodDecision::Split } else { LodDecision::Keep };
    let mut rows = Vec::new();
    while (state.live_count() as u64) < needed {
        let s = pipe.update(state, decide);
        if s.changes() == 0 {
            return Err(Failure::Capacity(format!("stalled at {} of {needed} bisectors", state.live_count())));
        }
        rows.push(s);
    }
    Ok(rows)
}

fn export_triangles(out: &OutputArgs, name: &str, snap: &Snapshot, mesh: &Arc<HalfedgeMesh>) -> Outcome {
    let tris = snap.triangles(mesh).map_err(Failure::Input)?;
    if out.export.contains(&Format::Obj) {
        write(&out.out, &format!("{name}.obj"), &to_obj(&tris, out.weld))?;
    }
    if out.export.contains(&Format::Svg) {
        let lod = snap
            .lod_for(mesh)
            .ok_or_else(|| Failure::Usage("svg export needs a camera; subdivide snapshots carry none".into()))?;
        let culling = lod.config.frustum_cull;
        write(&out.out, &format!("{name}.svg"), &to_svg(&tris, &lod.camera, |t| !culling || !lod.is_culled(t)))?;
    }
    Ok(())
}

fn write_snapshot(out: &OutputArgs, snap: &Snapshot) -> Outcome {
    let json = serde_json::to_string(snap).map_err(Failure::input)?;
    write(&out.out, "snapshot.json", &json)
}

pub fn subdivide(a: &SubdivideArgs) -> Outcome {
    let mesh = Arc::new(load_mesh(&a.state.mesh)?);
    let mut state = new_state(mesh.clone(), a.state.cbt_depth)?;
    let pipe = pipeline(a.state.threads)?;
    let rows = uniform(&mut state, &pipe, a.uniform_depth)?;
    let snap = Snapshot::capture(&state, None, None);
    let report = check_triangles(&snap.triangles(&mesh).map_err(Failure::Input)?);
    println!(
        "{} triangles at depth {} after {} epochs; conforming: {}",
        state.live_count(),
        a.uniform_depth,
        rows.len(),
        report.is_conforming()
    );
    if a.output.export.contains(&Format::Csv) {
        write(&a.output.out, "stats.csv", &stats_csv(&rows, !a.output.no_timing))?;
    }
    export_triangles(&a.output, "subdivision", &snap, &mesh)?;
    write_snapshot(&a.output, &snap)
}

fn scene_diagonal(mesh: &HalfedgeMesh) -> f64 {
    let lo = mesh.positions.iter().fold(DVec3::splat(f64::MAX), |a, &p| a.min(p));
    let hi = mesh.positions.iter().fold(DVec3::splat(f64::MIN), |a, &p| a.max(p));
    (hi - lo).length()
}

pub fn animate(a: &AnimateArgs) -> Outcome {
    let text = fs::read_to_string(&a.path).map_err(|e| Failure::Input(anyhow::Error::new(e).context(a.path.display().to_string())))?;
    let path = parse_path(&text).map_err(|e| Failure::Input(anyhow::Error::new(e).context(a.path.display().to_string())))?;
    let config = LodConfig {
        target_area_px: a.target_area,
        planet_mode: a.planet_radius.is_some(),
        planet_radius: a.planet_radius.unwrap_or(1.0),
        ..LodConfig::default()
    };
    config.check().map_err(Failure::input)?;
    let mesh = Arc::new(load_mesh(&a.state.mesh)?);
    let mut state = new_state(mesh.clone(), a.state.cbt_depth)?;
    let pipe = pipeline(a.state.threads)?;
    if a.frames == 0 {
        println!("no frames requested");
        return Ok(());
    }
    let (t0, t1) = match (path.first(), path.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Err(Failure::input(anyhow::anyhow!("camera path has no keyframes"))),
    };
    let flat_near = 1e-3 * scene_diagonal(&mesh).max(f64::MIN_POSITIVE);
    let mut rows = Vec::with_capacity(a.frames);
    let (mut peak_live, mut peak_depth) = (0, 0);
    let mut camera = None;
    for frame in 0..a.frames {
        let t = if a.frames == 1 { t0 } else { t0 + (t1 - t0) * frame as f64 / (a.frames - 1) as f64 };
        let probe = camera_path_at(&path, t, a.width, a.height, flat_near).map_err(Failure::input)?;
        let near = match a.planet_radius {
            // a tenth of the altitude keeps depth precision near the ground
            Some(r) => (0.1 * (probe.position.length() - r)).max(1e-3),
            None => flat_near,
        };
        let cam = Camera { near, ..probe };
        let lod = Lod::new(config, cam, mesh.clone());
        rows.push(pipe.update(&mut state, |id| lod.decide(id)));
        peak_live = peak_live.max(state.live_count());
        peak_depth = peak_depth.max(state.max_live_depth());
        camera = Some(cam);
    }
    println!(
        "{} frames: peak live {peak_live}, peak depth {peak_depth}, peak pool occupancy {:.1}%",
        a.frames,
        100.0 * peak_live as f64 / state.capacity() as f64
    );
    if a.output.export.contains(&Format::Csv) {
        write(&a.output.out, "stats.csv", &stats_csv(&rows, !a.output.no_timing))?;
    }
    let snap = Snapshot::capture(&state, camera, Some(config));
    export_triangles(&a.output, "final", &snap, &mesh)?;
    write_snapshot(&a.output, &snap)
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v.get(v.len() / 2).copied().unwrap_or_default()
}

pub fn bench(a: &BenchArgs) -> Outcome {
    let mesh = Arc::new(load_mesh(&a.mesh)?);
    let mut state = new_state(mesh, a.cbt_depth)?;
    let max = a.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    uniform(&mut state, &pipeline(Some(max))?, a.uniform_depth)?;
    let layout = *state.layout();
    let mut counts: Vec<usize> = [1, 2, 4, max].into_iter().filter(|&t| t <= max).collect();
    counts.dedup();

    let mut csv = String::from("threads,live");
    for name in STAGE_NAMES {
        csv.push_str(&format!(",{name}_us"));
    }
    csv.push_str(",total_us,updates_per_s\n");
    println!("{} live bisectors, {} measured updates per thread count", state.live_count(), a.frames);
    for &threads in &counts {
        let pipe = pipeline(Some(threads))?;
        let mut samples: Vec<UpdateStats> = Vec::with_capacity(a.frames);
        for i in 0..3 + a.frames {
            let s = match a.seed {
                None => pipe.update(&mut state, |_| LodDecision::Keep),
                Some(seed) => {
                    let mut copy = state.clone();
                    pipe.update(&mut copy, |id| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64) << 48 ^ id.get());
                        match rng.gen_range(0..10) {
                            0 if layout.depth(id) < layout.max_depth() => LodDecision::Split,
                            1..=3 => LodDecision::Merge,
                            _ => LodDecision::Keep,
                        }
                    })
                }
            };
            if i >= 3 {
                samples.push(s);
            }
        }
        let stages: Vec<Duration> = (0..STAGE_NAMES.len()).map(|k| median(samples.iter().map(|s| s.stage_times[k]).collect())).collect();
        let total = median(samples.iter().map(UpdateStats::total_time).collect());
        let rate = 1.0 / total.as_secs_f64().max(1e-9);
        println!("threads {threads}: median update {:.3} ms, {rate:.1} updates/s", total.as_secs_f64() * 1e3);
        for (name, t) in STAGE_NAMES.iter().zip(&stages) {
            println!("  {name:<20} {:>10.1} us", t.as_secs_f64() * 1e6);
        }
        csv.push_str(&format!("{threads},{}", state.live_count()));
        for t in &stages {
            csv.push_str(&format!(",{:.1}", t.as_secs_f64() * 1e6));
        }
        csv.push_str(&format!(",{:.1},{rate:.3}\n", total.as_secs_f64() * 1e6));
    }
    if a.output.export.contains(&Format::Csv) {
        write(&a.output.out, "bench.csv", &csv)?;
    }
    Ok(())
}

pub fn export(a: &ExportArgs) -> Outcome {
    let text = fs::read_to_string(&a.snapshot).with_context(|| a.snapshot.display().to_string()).map_err(Failure::Input)?;
    let snap: Snapshot = serde_json::from_str(&text).with_context(|| a.snapshot.display().to_string()).map_err(Failure::Input)?;
    let mesh = Arc::new(snap.mesh().map_err(Failure::Input)?);
    if a.output.export.is_empty() {
        return Err(Failure::Usage("nothing to export; pass --export obj,svg".into()));
    }
    if a.output.export.contains(&Format::Csv) {
        return Err(Failure::Usage("snapshots carry no stats; csv comes from subdivide or animate".into()));
    }
    export_triangles(&a.output, "export", &snap, &mesh)?;
    println!("exported {} triangles", snap.ids.len());
    Ok(())
}
