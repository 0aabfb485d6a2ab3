use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use cgseg_core::imageio::read_gray16;
use cgseg_core::masks::{assign_levels, convert_sam_json, load_segments, TwoLevelMask};
use cgseg_core::raster::{render, RenderOptions};
use cgseg_core::scene::{load_cameras, load_scene, Camera, Checkpoint};
use cgseg_core::segment::{click_select, propagation_miou, EnginePolicy, LabeledView};
use cgseg_core::synth::{generate, SyntheticSpec};
use cgseg_core::train::{TrainConfig, Trainer};
use cgseg_core::{Error, Level};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{BenchArgs, ConfigOverrides, EvalArgs, Failure, ServeArgs, SynthArgs, TrainArgs};

/// Fails unless `path`'s parent directory exists, so no work is wasted on
/// an output that cannot be written.
fn check_output_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(Failure::data(format!("output directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

pub fn masks_convert(input: &Path, output: &Path) -> Result<(), Failure> {
    let written = convert_sam_json(input, output)?;
    println!("converted {} views into {}", written.len(), output.display());
    Ok(())
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(
            lambda_neg_cont, lambda1, lambda2, lambda3, lambda4, tau_f, tau_c, tau_g, learning_rate, pixels_per_iter,
            iterations, gfl_start, gfl_update_every, n_spatial, k_neighbors, hdbscan_eps_coarse, hdbscan_eps_fine, seed,
            fine_layout
        );
    }
}

pub fn load_masks(dir: &Path) -> Result<Vec<TwoLevelMask>, Failure> {
    let raw = load_segments(dir)?;
    if raw.is_empty() {
        return Err(Failure::data(format!("no .cgsg segment files in {}", dir.display())));
    }
    Ok(raw.iter().map(assign_levels).collect::<cgseg_core::Result<_>>()?)
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    a.overrides.apply(&mut cfg);
    cfg.validate()?;
    check_output_parent(&a.out)?;
    if let Some(l) = &a.log {
        check_output_parent(l)?;
    }
    let scene = load_scene(&a.scene)?;
    let cameras = load_cameras(&a.cameras)?;
    let masks = load_masks(&a.masks)?;
    let trainer = Trainer::new(&scene, &cameras, &masks, cfg)?;
    let mut log = match &a.log {
        Some(p) => Some(csv::Writer::from_path(p).map_err(|e| Failure::data(e.to_string()))?),
        None => None,
    };
    let mut log_err = None;
    let t = Instant::now();
    let ck = trainer.run(|e| {
        if let Some(w) = log.as_mut() {
            if let Err(err) = w.serialize(e) {
                log_err.get_or_insert(err);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(Failure::data(format!("writing the training log: {e}")));
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    ck.save(&a.out)?;
    println!(
        "trained {} iterations in {:.1} s: {} coarse / {} fine clusters -> {}",
        ck.iteration,
        t.elapsed().as_secs_f64(),
        ck.clusters.coarse.len(),
        ck.clusters.fine.len(),
        a.out.display()
    );
    Ok(())
}

/// Truth map of `view` at `level`, trying both naming schemes.
fn truth_map(dir: &Path, view: u32, level: Level) -> Result<Option<(u32, u32, Vec<i32>)>, Failure> {
    let names = match level {
        Level::Coarse => ["object", "coarse"],
        Level::Fine => ["part", "fine"],
    };
    for n in names {
        let p = dir.join(format!("{view:04}_{n}.png"));
        if p.is_file() {
            let (w, h, v) = read_gray16(&p)?;
            return Ok(Some((w, h, v.into_iter().map(i32::from).collect())));
        }
    }
    Ok(None)
}

/// View ids that have a truth map in `dir`.
fn truth_views(dir: &Path) -> Result<BTreeSet<u32>, Failure> {
    let mut views = BTreeSet::new();
    for e in std::fs::read_dir(dir)? {
        let name = e?.file_name();
        let name = name.to_string_lossy();
        if let Some((v, rest)) = name.split_once('_') {
            if rest.ends_with(".png") {
                if let Ok(v) = v.parse() {
                    views.insert(v);
                }
            }
        }
    }
    Ok(views)
}

pub struct EvalRow {
    pub level: Level,
    pub label: String,
    pub miou: f64,
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    if let Some(p) = &a.csv {
        check_output_parent(p)?;
    }
    let views = truth_views(&a.gt)?;
    let reference = match a.reference_view {
        Some(v) if views.contains(&v) => v,
        Some(v) => return Err(Failure::data(format!("no truth maps for reference view {v}"))),
        None => *views.first().ok_or_else(|| Failure::data(format!("no truth maps in {}", a.gt.display())))?,
    };
    let targets: Vec<u32> = if a.views.is_empty() { views.iter().copied().filter(|&v| v != reference).collect() } else { a.views.clone() };
    if targets.is_empty() {
        return Err(Failure::data("no target views to evaluate"));
    }
    let cam_path = a.cameras.clone().unwrap_or_else(|| a.gt.parent().unwrap_or(Path::new(".")).join("cameras.json"));
    let cameras = load_cameras(&cam_path)?;
    let scene = load_scene(&a.scene)?;
    let ck = Checkpoint::load(&a.ckpt)?;
    if ck.features.len() != scene.len() {
        return Err(Failure::data(format!("checkpoint has {} feature rows, scene has {} Gaussians", ck.features.len(), scene.len())));
    }
    let camera = |v: u32| -> Result<&Camera, Failure> {
        cameras.get(v as usize).ok_or_else(|| Failure::data(format!("view {v} has no camera ({} cameras)", cameras.len())))
    };
    let policy = EnginePolicy::default();
    let mut rows = Vec::new();
    for &level in &a.levels {
        let load = |v: u32| -> Result<Vec<i32>, Failure> {
            let (w, h, m) = truth_map(&a.gt, v, level)?.ok_or_else(|| Failure::data(format!("view {v} has no {level} truth map")))?;
            let cam = camera(v)?;
            if (w, h) != (cam.width, cam.height) {
                return Err(Failure::data(format!("view {v}: truth map is {w}x{h}, camera is {}x{}", cam.width, cam.height)));
            }
            Ok(m)
        };
        let ref_map = load(reference)?;
        let maps = targets.iter().map(|&v| load(v)).collect::<Result<Vec<_>, _>>()?;
        let tv = targets.iter().zip(&maps).map(|(&v, m)| Ok(LabeledView { camera: camera(v)?, labels: m })).collect::<Result<Vec<_>, Failure>>()?;
        let refv = LabeledView { camera: camera(reference)?, labels: &ref_map };
        let (labels, report) = propagation_miou(&scene, &ck.features, &ck.clusters, refv, &tv, level, &policy)?;
        for (l, m) in labels.iter().zip(&report.per_object) {
            rows.push(EvalRow { level, label: l.to_string(), miou: *m });
        }
        rows.push(EvalRow { level, label: "mean".into(), miou: report.mean });
    }
    println!("reference view {reference}, {} target views", targets.len());
    println!("{:<8} {:>6} {:>8}", "level", "label", "miou");
    for r in &rows {
        println!("{:<8} {:>6} {:>8.4}", r.level.as_str(), r.label, r.miou);
    }
    if let Some(p) = &a.csv {
        let mut w = csv::Writer::from_path(p).map_err(|e| Failure::data(e.to_string()))?;
        w.write_record(["level", "label", "miou"]).map_err(|e| Failure::data(e.to_string()))?;
        for r in &rows {
            w.write_record([r.level.as_str(), &r.label, &format!("{:.6}", r.miou)]).map_err(|e| Failure::data(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = match &a.spec {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let s = generate(&spec)?;
    s.write_to_dir(&a.out)?;
    println!(
        "{} Gaussians, {} cameras ({} training, {} held out) -> {}",
        s.scene.len(),
        s.cameras.len(),
        s.train_views.len(),
        s.held_out_views.len(),
        a.out.display()
    );
    Ok(())
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn bench(a: BenchArgs) -> Result<(), Failure> {
    if a.clicks == 0 || a.frames == 0 {
        return Err(Failure::usage("--clicks and --frames must be positive"));
    }
    if let Some(p) = &a.csv {
        check_output_parent(p)?;
    }
    let scene = load_scene(&a.scene)?;
    let ck = Checkpoint::load(&a.ckpt)?;
    if ck.features.len() != scene.len() {
        return Err(Failure::data(format!("checkpoint has {} feature rows, scene has {} Gaussians", ck.features.len(), scene.len())));
    }
    let cam = match &a.cameras {
        Some(p) => load_cameras(p)?
            .get(a.view)
            .cloned()
            .ok_or_else(|| Failure::data(format!("camera file has no view {}", a.view)))?,
        None => scene.overview_camera(a.width, a.height)?,
    };
    let policy = EnginePolicy::default();
    let mut frame_ms = Vec::with_capacity(a.frames);
    let mut buf = None;
    for _ in 0..a.frames {
        let t = Instant::now();
        buf = Some(render(&scene, &ck.features, &cam, RenderOptions::default())?);
        frame_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let buf = buf.expect("at least one frame");
    let fg: Vec<usize> = (0..buf.pixel_count()).filter(|&p| buf.alpha_acc[p] >= policy.min_opacity).collect();
    if fg.is_empty() {
        return Err(Failure::data("the view shows no foreground pixels to click"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut click_ms = Vec::with_capacity(a.clicks);
    let mut rows = Vec::with_capacity(a.clicks);
    let mut failed = 0;
    for _ in 0..a.clicks {
        let p = *fg.choose(&mut rng).expect("nonempty");
        let (x, y) = ((p % cam.width as usize) as u32, (p / cam.width as usize) as u32);
        let t = Instant::now();
        let r = click_select(&scene, &ck.features, &ck.clusters, &cam, x, y, a.level, &policy);
        let ms = t.elapsed().as_secs_f64() * 1e3;
        match r {
            Ok(_) | Err(Error::NoConfidentMatch { .. }) | Err(Error::BackgroundClick { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        failed += r.is_err() as usize;
        click_ms.push(ms);
        rows.push((x, y, ms, r.map(|s| s.gaussian_ids.len()).unwrap_or(0)));
    }
    frame_ms.sort_by(f64::total_cmp);
    let mut sorted = click_ms.clone();
    sorted.sort_by(f64::total_cmp);
    println!("scene: {} Gaussians, view {}x{}", scene.len(), cam.width, cam.height);
    println!("render ms/frame: p50 {:.2} p95 {:.2} ({} frames)", percentile(&frame_ms, 0.5), percentile(&frame_ms, 0.95), a.frames);
    println!(
        "click_select ms: p50 {:.2} p95 {:.2} ({} clicks, {} without a match)",
        percentile(&sorted, 0.5),
        percentile(&sorted, 0.95),
        a.clicks,
        failed
    );
    if let Some(p) = &a.csv {
        let mut w = csv::Writer::from_path(p).map_err(|e| Failure::data(e.to_string()))?;
        w.write_record(["x", "y", "ms", "selected"]).map_err(|e| Failure::data(e.to_string()))?;
        for (x, y, ms, n) in rows {
            w.write_record([x.to_string(), y.to_string(), format!("{ms:.4}"), n.to_string()]).map_err(|e| Failure::data(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<(), Failure> {
    let state = cgseg_server::load_state(&a.scene, &a.ckpt)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(cgseg_server::run(&a.bind, state)).map_err(|e| Failure::data(format!("server on {}: {e}", a.bind)))
}
