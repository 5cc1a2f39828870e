use std::fs;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use gsforge::camera::CameraSpec;
use gsforge::env::assets::RolloutFile;
use gsforge::env::{run_episode, summarize, EnvState, NavEnv, Observation, Policy, ScriptedPolicy};
use gsforge::image_io::{read_png_rgb, write_png_rgb8, FloatRaster};
use gsforge::mesh::tsdf::TsdfVolume;
use gsforge::mesh::{extract_mesh, TriangleMesh};
use gsforge::metrics::{fit_scene, l1, load_targets, psnr, scale_loss, write_trace_csv, FitConfig};
use gsforge::raster::{render, RenderOptions};
use gsforge::service::{serve, RenderService};
use gsforge::splat::ply::{load_ply, save_ply};
use gsforge::splat::{GaussianScene, SourceLabel};
use gsforge::transform::{crop_by_obb, fit_similarity, merge_scenes, transform_scene, ObbFile, SimilarityFile};

#[derive(Parser)]
#[command(name = "gsforge", version, about = "Gaussian splatting real-to-sim toolkit")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a similarity transform to point correspondences.
    Align {
        /// JSON list of {source, target} pairs.
        #[arg(long, conflicts_with_all = ["src", "dst"])]
        pairs: Option<PathBuf>,
        /// JSON list of source points.
        #[arg(long, requires = "dst")]
        src: Option<PathBuf>,
        /// JSON list of target points.
        #[arg(long, requires = "src")]
        dst: Option<PathBuf>,
        /// Write the transform as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a similarity transform to a splat scene.
    Transform {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        transform: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a scene by an oriented bounding box.
    Crop {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        obb: PathBuf,
        /// Splats inside the box.
        #[arg(long)]
        out: PathBuf,
        /// Splats outside the box.
        #[arg(long)]
        rest: Option<PathBuf>,
        /// Express the cropped splats in the box frame.
        #[arg(long)]
        canonical: bool,
    },
    /// Merge object scenes into a base scene.
    Compose {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, required = true)]
        object: Vec<PathBuf>,
        /// One transform per object, in order.
        #[arg(long)]
        transform: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a scene to PNG, optionally with depth and normal rasters.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        normal: Option<PathBuf>,
        /// Render every splat as a flat disk.
        #[arg(long)]
        flatten: bool,
    },
    /// Fuse rendered depth from many views into a TSDF volume.
    TsdfFuse {
        #[arg(long)]
        scene: PathBuf,
        /// JSON list of cameras.
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        voxel: f64,
        /// Padding around the splat bounds, in meters.
        #[arg(long, default_value_t = 0.1)]
        padding: f64,
        /// Drop depth samples seen at a grazing cosine below this.
        #[arg(long, default_value_t = 0.2)]
        min_cos: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the zero level set of a TSDF checkpoint as STL or OBJ.
    MeshExtract {
        #[arg(long)]
        volume: PathBuf,
        /// `.stl` or `.obj`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Image metrics and the flatness loss of a scene.
    Metrics {
        #[arg(long, requires = "reference")]
        image: Option<PathBuf>,
        #[arg(long, requires = "image")]
        reference: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Refine a scene against target views.
    Fit {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// TOML fit settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run navigation episodes and report success rate and reaching time.
    Rollout {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PolicyKind::Scripted)]
        policy: PolicyKind,
        #[arg(long, default_value_t = 1)]
        episodes: u64,
        /// Episode log as JSON lines, one file for all episodes.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Directory for observation PNG frames.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Serve renders over TCP.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Drop connections idle for this many seconds.
        #[arg(long, default_value_t = 300)]
        idle_timeout: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Scripted,
    Random,
}

/// A failure that is the caller's fault; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn input(path: &Path) -> Result<&Path> {
    if !path.is_file() {
        return Err(UsageError(format!("no such file: {}", path.display())).into());
    }
    Ok(path)
}

fn read_scene(path: &Path) -> Result<GaussianScene> {
    let bytes = fs::read(input(path)?).with_context(|| format!("reading {}", path.display()))?;
    load_ply(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_scene(path: &Path, scene: &GaussianScene) -> Result<()> {
    fs::write(path, save_ply(scene)).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(input(path)?).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_transform(path: &Path) -> Result<gsforge::transform::SimilarityTransform> {
    let f: SimilarityFile = read_json(path)?;
    f.to_transform().with_context(|| format!("transform in {}", path.display()))
}

#[derive(Deserialize)]
struct Pair {
    source: [f64; 3],
    target: [f64; 3],
}

#[derive(Serialize)]
struct AlignReport {
    #[serde(flatten)]
    transform: SimilarityFile,
    residual: f64,
}

fn align(pairs: Option<PathBuf>, src: Option<PathBuf>, dst: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let (s, d): (Vec<Vector3<f64>>, Vec<Vector3<f64>>) = match (pairs, src, dst) {
        (Some(p), _, _) => read_json::<Vec<Pair>>(&p)?
            .into_iter()
            .map(|p| (Vector3::from(p.source), Vector3::from(p.target)))
            .unzip(),
        (None, Some(a), Some(b)) => {
            let a: Vec<[f64; 3]> = read_json(&a)?;
            let b: Vec<[f64; 3]> = read_json(&b)?;
            (a.into_iter().map(Vector3::from).collect(), b.into_iter().map(Vector3::from).collect())
        }
        _ => return Err(UsageError("give --pairs or both --src and --dst".into()).into()),
    };
    let reg = fit_similarity(&s, &d)?;
    let report = AlignReport {
        transform: SimilarityFile::from_transform(&reg.transform),
        residual: reg.rms,
    };
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = out {
        fs::write(&out, serde_json::to_string_pretty(&report.transform)?)?;
    }
    Ok(())
}

fn cmd_render(scene: &Path, camera: &Path, out: &Path, depth: Option<PathBuf>, normal: Option<PathBuf>, flatten: bool) -> Result<()> {
    let scene = read_scene(scene)?;
    let spec: CameraSpec = read_json(camera)?;
    let cam = spec.to_camera()?;
    let options = RenderOptions {
        flatten_for_depth: flatten,
        ..RenderOptions::default()
    };
    let img = render(&scene, &cam, &options);
    write_png_rgb8(out, img.width, img.height, &img.rgb8())?;
    if let Some(p) = depth {
        FloatRaster::depth(img.width, img.height, &img.depth).write(&p)?;
    }
    if let Some(p) = normal {
        FloatRaster::normals(img.width, img.height, &img.normal).write(&p)?;
    }
    Ok(())
}

fn tsdf_fuse(scene: &Path, cameras: &Path, voxel: f64, padding: f64, min_cos: f64, out: &Path) -> Result<()> {
    let scene = read_scene(scene)?;
    let specs: Vec<CameraSpec> = read_json(cameras)?;
    if scene.is_empty() {
        bail!("scene has no splats");
    }
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for s in scene.splats() {
        lo = lo.inf(&s.mean);
        hi = hi.sup(&s.mean);
    }
    let mut volume = TsdfVolume::covering(lo, hi, voxel, padding)?;
    let options = RenderOptions {
        flatten_for_depth: true,
        ..RenderOptions::default()
    };
    for (i, spec) in specs.iter().enumerate() {
        let cam = spec.to_camera().with_context(|| format!("camera {i}"))?;
        let maps = gsforge::raster::render_depth_unbiased(&scene, &cam, &options);
        let stats = volume.fuse_depth(&maps.fusion_depth(&cam, min_cos), &cam)?;
        log::info!("view {i}: {stats:?}");
    }
    volume.save_checkpoint(out)?;
    println!("fused {} views into {:?} voxels", specs.len(), volume.dims());
    Ok(())
}

fn mesh_extract(volume: &Path, out: &Path) -> Result<()> {
    let vol = TsdfVolume::load_checkpoint(input(volume)?)?;
    let mesh: TriangleMesh = extract_mesh(&vol);
    let file = BufWriter::new(fs::File::create(out).with_context(|| format!("creating {}", out.display()))?);
    match out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => mesh.write_obj(file)?,
        Some("stl") => mesh.write_stl(file)?,
        _ => return Err(UsageError(format!("{}: output must end in .stl or .obj", out.display())).into()),
    }
    let (boundary, nonmanifold) = mesh.edge_report();
    println!(
        "{} vertices, {} triangles, {boundary} boundary edges, {nonmanifold} non-manifold edges",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    Ok(())
}

fn metrics(image: Option<PathBuf>, reference: Option<PathBuf>, scene: Option<PathBuf>) -> Result<()> {
    if image.is_none() && scene.is_none() {
        return Err(UsageError("give --image/--reference, --scene, or both".into()).into());
    }
    let mut report = serde_json::Map::new();
    if let (Some(a), Some(b)) = (image, reference) {
        let (wa, ha, a) = read_png_rgb(input(&a)?)?;
        let (wb, hb, b) = read_png_rgb(input(&b)?)?;
        if (wa, ha) != (wb, hb) {
            bail!("image is {wa}x{ha}, reference is {wb}x{hb}");
        }
        report.insert("psnr".into(), serde_json::json!(psnr(&a, &b)?));
        report.insert("l1".into(), serde_json::json!(l1(&a, &b)?));
    }
    if let Some(s) = scene {
        report.insert("scale_loss".into(), serde_json::json!(scale_loss(&read_scene(&s)?)?));
    }
    println!("{}", serde_json::Value::Object(report));
    Ok(())
}

fn fit(scene: &Path, targets: &Path, config: Option<PathBuf>, out: &Path, trace: Option<PathBuf>) -> Result<()> {
    let initial = read_scene(scene)?;
    let views = load_targets(input(targets)?)?;
    let config: FitConfig = match config {
        Some(p) => toml::from_str(&fs::read_to_string(input(&p)?)?).with_context(|| format!("parsing {}", p.display()))?,
        None => FitConfig::default(),
    };
    let result = fit_scene(&initial, &views, &config)?;
    write_scene(out, &result.scene)?;
    if let Some(p) = trace {
        write_trace_csv(&result.trace, BufWriter::new(fs::File::create(&p)?))?;
    }
    let first = result.trace.first().expect("trace has the initial row");
    let last = result.trace.last().expect("trace has the initial row");
    println!(
        "loss {:.6e} -> {:.6e} over {} iterations",
        first.terms.total,
        last.terms.total,
        result.trace.len() - 1
    );
    Ok(())
}

struct RandomPolicy(ChaCha8Rng);

impl Policy for RandomPolicy {
    fn act(&mut self, _: &Observation, _: &EnvState) -> [f64; 3] {
        std::array::from_fn(|_| self.0.random_range(-2.0..2.0))
    }
}

/// Writes each observation as a PNG before handing it to the policy.
struct Recording<'a> {
    inner: &'a mut dyn Policy,
    dir: &'a Path,
    episode: u64,
    frame: u32,
    error: Option<anyhow::Error>,
}

impl Policy for Recording<'_> {
    fn act(&mut self, obs: &Observation, state: &EnvState) -> [f64; 3] {
        if let (Some(rgb), None) = (&obs.rgb, &self.error) {
            let path = self.dir.join(format!("ep{:04}_{:03}.png", self.episode, self.frame));
            if let Err(e) = write_png_rgb8(&path, obs.width, obs.height, rgb) {
                self.error = Some(e.into());
            }
        }
        self.frame += 1;
        self.inner.act(obs, state)
    }
}

fn load_rollout(config: Option<PathBuf>) -> Result<(gsforge::env::EnvConfig, gsforge::env::EnvAssets)> {
    match config {
        Some(p) => Ok(RolloutFile::load(input(&p)?)?),
        None => {
            let f = RolloutFile::default();
            Ok((f.env.clone(), f.assets.resolve(Path::new("."))?))
        }
    }
}

fn rollout(seed: u64, config: Option<PathBuf>, kind: PolicyKind, episodes: u64, log: Option<PathBuf>, frames: Option<PathBuf>) -> Result<()> {
    let (cfg, assets) = load_rollout(config)?;
    let assets = Arc::new(assets);
    if let Some(dir) = &frames {
        fs::create_dir_all(dir)?;
    }
    let mut log = match log {
        Some(p) => Some(BufWriter::new(fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let mut summaries = Vec::new();
    for e in 0..episodes {
        let episode_seed = seed.wrapping_add(e);
        let mut env = NavEnv::new(cfg.clone(), assets.clone(), episode_seed)?;
        let mut scripted = ScriptedPolicy::new(cfg.velocity_limits);
        let mut random = RandomPolicy(ChaCha8Rng::seed_from_u64(episode_seed ^ 0x5eed));
        let policy: &mut dyn Policy = match kind {
            PolicyKind::Scripted => &mut scripted,
            PolicyKind::Random => &mut random,
        };
        let sink = log.as_mut().map(|w| w as &mut dyn Write);
        let summary = match &frames {
            Some(dir) => {
                let mut rec = Recording {
                    inner: policy,
                    dir,
                    episode: e,
                    frame: 0,
                    error: None,
                };
                let s = run_episode(&mut env, &mut rec, sink)?;
                if let Some(err) = rec.error {
                    return Err(err);
                }
                s
            }
            None => run_episode(&mut env, policy, sink)?,
        };
        log::info!("episode {e}: {summary:?}");
        summaries.push(summary);
    }
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    let s = summarize(&summaries, cfg.horizon_s);
    println!(
        "episodes {} successes {} SR {:.1}% ART {:.2} s",
        s.episodes,
        s.successes,
        100.0 * s.success_rate,
        s.average_reaching_time
    );
    Ok(())
}

fn cmd_serve(config: Option<PathBuf>, host: &str, port: u16, idle: u64) -> Result<()> {
    let (cfg, assets) = load_rollout(config)?;
    let service = Arc::new(RenderService::new(&assets, cfg.intrinsics(), cfg.render)?);
    let listener = TcpListener::bind((host, port)).with_context(|| format!("binding {host}:{port}"))?;
    println!("listening on {}", listener.local_addr()?);
    serve(listener, service, Some(Duration::from_secs(idle.max(1))))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Align { pairs, src, dst, out } => align(pairs, src, dst, out),
        Command::Transform { scene, transform, out } => {
            let t = read_transform(&transform)?;
            write_scene(&out, &transform_scene(&read_scene(&scene)?, &t))
        }
        Command::Crop {
            scene,
            obb,
            out,
            rest,
            canonical,
        } => {
            let obb = read_json::<ObbFile>(&obb)?.to_obb()?;
            let (inside, outside) = crop_by_obb(&read_scene(&scene)?, &obb);
            let inside = if canonical {
                transform_scene(&inside, &obb.to_similarity().inverse())
            } else {
                inside
            };
            println!("{} splats inside, {} outside", inside.len(), outside.len());
            write_scene(&out, &inside)?;
            match rest {
                Some(p) => write_scene(&p, &outside),
                None => Ok(()),
            }
        }
        Command::Compose {
            base,
            object,
            transform,
            out,
        } => {
            if !transform.is_empty() && transform.len() != object.len() {
                return Err(UsageError(format!("{} objects but {} transforms", object.len(), transform.len())).into());
            }
            let base = read_scene(&base)?;
            let mut objects = Vec::with_capacity(object.len());
            for (i, p) in object.iter().enumerate() {
                let mut s = read_scene(p)?;
                if let Some(t) = transform.get(i) {
                    s = transform_scene(&s, &read_transform(t)?);
                }
                let name = p.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                objects.push((s, SourceLabel::Object(name)));
            }
            let mut parts = vec![(&base, SourceLabel::Environment)];
            parts.extend(objects.iter().map(|(s, l)| (s, l.clone())));
            write_scene(&out, &merge_scenes(&parts)?)
        }
        Command::Render {
            scene,
            camera,
            out,
            depth,
            normal,
            flatten,
        } => cmd_render(&scene, &camera, &out, depth, normal, flatten),
        Command::TsdfFuse {
            scene,
            cameras,
            voxel,
            padding,
            min_cos,
            out,
        } => tsdf_fuse(&scene, &cameras, voxel, padding, min_cos, &out),
        Command::MeshExtract { volume, out } => mesh_extract(&volume, &out),
        Command::Metrics { image, reference, scene } => metrics(image, reference, scene),
        Command::Fit {
            scene,
            targets,
            config,
            out,
            trace,
        } => fit(&scene, &targets, config, &out, trace),
        Command::Rollout {
            config,
            policy,
            episodes,
            log,
            frames,
        } => rollout(cli.seed, config, policy, episodes, log, frames),
        Command::Serve {
            config,
            host,
            port,
            idle_timeout,
        } => cmd_serve(config, &host, port, idle_timeout),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("GSFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| UsageError(format!("GSFORGE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
