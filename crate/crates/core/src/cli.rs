//! Command-line driver. Every subcommand reads a [`RunConfig`] and works on a
//! sequence directory and a work directory:
//!
//! ```text
//! <sequence>/cameras.json
//! <sequence>/mesh_0000.obj            registered first-frame mesh with UVs
//! <sequence>/texture.png              its texture map
//! <sequence>/frame_####/cam_##.png    images (optional mask_##.png weights)
//! <sequence>/gt_mesh_####.obj         ground truth, synthetic runs only
//! <work>/checkpoints/{base,dense}_####.tmgs
//! <work>/meshes/mesh_####.obj
//! <work>/textures/{texture,coverage}_####.png
//! <work>/renders/frame_####/cam_##.png
//! <work>/report.{json,csv}, <work>/run_manifest.json
//! ```

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::densify::{densify_uv, DenseGaussianMesh};
use crate::error::{Error, Result};
use crate::extract::{bake_texture, normal_expansion};
use crate::image::Image;
use crate::io::{
    load_checkpoint, load_obj, load_png, read_json, save_checkpoint, save_mask_png, save_obj,
    save_png16, save_png8, save_rgba_png, write_json, CheckpointKind, RunManifest,
};
use crate::loss::{LossConfig, View};
use crate::mesh::{vertex_normals, GaussianMesh, GaussianSet, Topology};
use crate::optim::AdamHyper;
use crate::pipeline::{
    init_first_frame, optimize_texture_frame, track_frame, FrameReference, PipelineConfig,
    SequenceState, StageSchedule,
};
use crate::render::{cameras_from_json, cameras_to_json, render, Camera, RenderSettings};
use crate::synth::{generate_sequence, run_gradcheck, tracking_error, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub loss: LossConfig,
    pub schedule: StageSchedule,
    pub render: RenderSettings,
    pub adam: AdamHyper,
    /// Dense lattice size per quad.
    pub densify_n: usize,
    pub texture_resolution: usize,
    pub dilation_passes: usize,
    pub sequence: PathBuf,
    pub work: PathBuf,
    /// Defaults to `<sequence>/cameras.json`.
    pub cameras: Option<PathBuf>,
    /// Defaults to `<sequence>/mesh_0000.obj`.
    pub mesh: Option<PathBuf>,
    /// Defaults to `<sequence>/texture.png`.
    pub texture: Option<PathBuf>,
    /// Number of frames to process; all frames found when unset.
    pub frames: Option<usize>,
    /// Drives the synthetic texture and the gradient-check fixtures.
    pub seed: u64,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            schedule: StageSchedule::default(),
            render: RenderSettings::default(),
            adam: AdamHyper::default(),
            densify_n: 30,
            texture_resolution: 1024,
            dilation_passes: 4,
            sequence: "sequence".into(),
            work: "work".into(),
            cameras: None,
            mesh: None,
            texture: None,
            frames: None,
            seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut c.sequence);
        fix(&mut c.work);
        for p in [&mut c.cameras, &mut c.mesh, &mut c.texture].into_iter().flatten() {
            fix(p);
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        if self.densify_n < 2 {
            return Err(Error::Config(format!("densify_n = {} must be ≥ 2", self.densify_n)));
        }
        if self.texture_resolution < 1 {
            return Err(Error::Config("texture_resolution must be ≥ 1".into()));
        }
        if self.frames == Some(0) {
            return Err(Error::Config("frames must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            loss: self.loss.clone(),
            schedule: self.schedule.clone(),
            render: self.render,
            adam: self.adam,
        }
    }

    pub fn cameras_path(&self) -> PathBuf {
        self.cameras.clone().unwrap_or_else(|| self.sequence.join("cameras.json"))
    }

    pub fn mesh_path(&self) -> PathBuf {
        self.mesh.clone().unwrap_or_else(|| self.sequence.join("mesh_0000.obj"))
    }

    pub fn texture_path(&self) -> PathBuf {
        self.texture.clone().unwrap_or_else(|| self.sequence.join("texture.png"))
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut s = self.synth.clone();
        s.texture.seed = self.seed;
        s
    }
}

pub fn frame_dir(sequence: &Path, frame: usize) -> PathBuf {
    sequence.join(format!("frame_{frame:04}"))
}

pub fn image_path(sequence: &Path, frame: usize, cam: usize) -> PathBuf {
    frame_dir(sequence, frame).join(format!("cam_{cam:02}.png"))
}

fn mask_path(sequence: &Path, frame: usize, cam: usize) -> PathBuf {
    frame_dir(sequence, frame).join(format!("mask_{cam:02}.png"))
}

pub fn gt_mesh_path(sequence: &Path, frame: usize) -> PathBuf {
    sequence.join(format!("gt_mesh_{frame:04}.obj"))
}

pub fn checkpoint_rel(kind: CheckpointKind, frame: usize) -> PathBuf {
    let stem = match kind {
        CheckpointKind::Base => "base",
        CheckpointKind::Dense => "dense",
    };
    PathBuf::from("checkpoints").join(format!("{stem}_{frame:04}.tmgs"))
}

pub fn mesh_rel(frame: usize) -> PathBuf {
    PathBuf::from("meshes").join(format!("mesh_{frame:04}.obj"))
}

pub fn texture_rel(frame: usize) -> PathBuf {
    PathBuf::from("textures").join(format!("texture_{frame:04}.png"))
}

fn coverage_rel(frame: usize) -> PathBuf {
    PathBuf::from("textures").join(format!("coverage_{frame:04}.png"))
}

/// Loads and checks the views of one frame.
pub fn load_views(sequence: &Path, frame: usize, cameras: &[Camera]) -> Result<Vec<View>> {
    cameras
        .iter()
        .enumerate()
        .map(|(c, cam)| {
            let path = image_path(sequence, frame, c);
            let target = load_png(&path)?;
            if target.width != cam.width || target.height != cam.height {
                return Err(Error::ShapeMismatch(format!(
                    "{} is {}x{}, camera {c} expects {}x{}",
                    path.display(),
                    target.width,
                    target.height,
                    cam.width,
                    cam.height
                )));
            }
            let mp = mask_path(sequence, frame, c);
            let mask = if mp.exists() {
                let m = load_png(&mp)?;
                m.check_same_shape(&target)?;
                Some(m.data.chunks_exact(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect())
            } else {
                None
            };
            Ok(View {
                camera: cam.clone(),
                target,
                mask,
            })
        })
        .collect()
}

/// Frame count: `config.frames`, else the number of consecutive frame
/// directories. Every image of every counted frame must exist.
fn frame_count(config: &RunConfig, n_cams: usize) -> Result<usize> {
    let count = match config.frames {
        Some(f) => f,
        None => {
            let mut f = 0;
            while frame_dir(&config.sequence, f).is_dir() {
                f += 1;
            }
            f
        }
    };
    if count == 0 {
        return Err(Error::MissingPath(frame_dir(&config.sequence, 0)));
    }
    for f in 0..count {
        for c in 0..n_cams {
            let p = image_path(&config.sequence, f, c);
            if !p.exists() {
                return Err(Error::MissingPath(p));
            }
        }
    }
    Ok(count)
}

fn load_cameras(config: &RunConfig) -> Result<Vec<Camera>> {
    let p = config.cameras_path();
    if !p.exists() {
        return Err(Error::MissingPath(p));
    }
    let cams = cameras_from_json(&fs::read_to_string(&p)?)?;
    if cams.is_empty() {
        return Err(Error::Config(format!("{} lists no cameras", p.display())));
    }
    Ok(cams)
}

struct Inputs {
    topology: Arc<Topology>,
    positions0: Vec<[f64; 3]>,
    cameras: Vec<Camera>,
    frames: usize,
}

fn load_inputs(config: &RunConfig) -> Result<Inputs> {
    let cameras = load_cameras(config)?;
    let (topology, positions0) = load_obj(&config.mesh_path())?;
    let frames = frame_count(config, cameras.len())?;
    Ok(Inputs {
        topology: Arc::new(topology),
        positions0,
        cameras,
        frames,
    })
}

fn load_base(work: &Path, frame: usize, topology: &Arc<Topology>) -> Result<GaussianMesh> {
    let (kind, f, g) = load_checkpoint(&work.join(checkpoint_rel(CheckpointKind::Base, frame)))?;
    if kind != CheckpointKind::Base || f != frame {
        return Err(Error::Checkpoint(format!("expected base frame {frame}, found {kind:?} frame {f}")));
    }
    GaussianMesh::new(g, topology.clone(), frame)
}

fn state_at(config: &RunConfig, inputs: &Inputs, mesh: GaussianMesh) -> Result<SequenceState> {
    let reference = FrameReference::new(&inputs.topology, &inputs.positions0, config.loss.lambda_w, &inputs.cameras)?;
    Ok(SequenceState {
        mesh,
        reference: Arc::new(reference),
        diagnostics: Vec::new(),
    })
}

fn dense_at(config: &RunConfig, base: &GaussianMesh, frame: usize, work: &Path) -> Result<DenseGaussianMesh> {
    let mut dense = densify_uv(base, config.densify_n)?;
    let (kind, f, g) = load_checkpoint(&work.join(checkpoint_rel(CheckpointKind::Dense, frame)))?;
    if kind != CheckpointKind::Dense || f != frame || g.len() != dense.len() {
        return Err(Error::Checkpoint(format!(
            "dense checkpoint of frame {frame} does not match N = {}",
            config.densify_n
        )));
    }
    dense.gaussians = g;
    Ok(dense)
}

type Outputs = Vec<PathBuf>;

fn cmd_synth(config: &RunConfig) -> Result<Outputs> {
    let seq = generate_sequence(&config.synth_config(), &config.render)?;
    let dir = &config.sequence;
    fs::create_dir_all(dir)?;
    let dir = &std::path::absolute(dir)?;
    let mut out = Vec::new();
    let cams = dir.join("cameras.json");
    fs::write(&cams, cameras_to_json(&seq.cameras)?)?;
    out.push(cams);
    for (f, imgs) in seq.images.iter().enumerate() {
        for (c, img) in imgs.iter().enumerate() {
            let p = image_path(dir, f, c);
            save_png16(&p, img)?;
            out.push(p);
        }
        let p = gt_mesh_path(dir, f);
        save_obj(&p, &seq.topology, &seq.frames[f])?;
        out.push(p);
    }
    let mesh = dir.join("mesh_0000.obj");
    save_obj(&mesh, &seq.topology, &seq.frames[0])?;
    out.push(mesh);
    let tex = dir.join("texture.png");
    save_png16(&tex, &seq.texture)?;
    out.push(tex);
    log::info!("synth: {} frames x {} cameras in {}", seq.frames.len(), seq.cameras.len(), dir.display());
    Ok(out)
}

fn cmd_init(config: &RunConfig) -> Result<Outputs> {
    let inputs = load_inputs(config)?;
    let texture = load_png(&config.texture_path())?;
    let views = load_views(&config.sequence, 0, &inputs.cameras)?;
    let st = init_first_frame(inputs.topology.clone(), &inputs.positions0, &texture, &views, &config.pipeline())?;
    let ck = checkpoint_rel(CheckpointKind::Base, 0);
    save_checkpoint(&config.work.join(&ck), CheckpointKind::Base, 0, &st.mesh.gaussians)?;
    let diag = PathBuf::from("diagnostics").join("init.json");
    write_json(&config.work.join(&diag), &st.diagnostics)?;
    log::info!("init: L_init {:.6}", st.diagnostics[0].losses.last().unwrap_or(&f64::NAN));
    Ok(vec![ck, diag])
}

fn cmd_track(config: &RunConfig) -> Result<Outputs> {
    let inputs = load_inputs(config)?;
    let mesh = load_base(&config.work, 0, &inputs.topology)?;
    let mut st = state_at(config, &inputs, mesh)?;
    let pipeline = config.pipeline();
    let mut out = Vec::new();
    for f in 1..inputs.frames {
        let views = load_views(&config.sequence, f, &inputs.cameras)?;
        track_frame(&mut st, &views, &pipeline)?;
        let ck = checkpoint_rel(CheckpointKind::Base, f);
        save_checkpoint(&config.work.join(&ck), CheckpointKind::Base, f, &st.mesh.gaussians)?;
        out.push(ck);
        let d = st.diagnostics.last().expect("stage recorded");
        log::info!("track: frame {f} loss {:.6} ({:.1}s)", d.losses.last().unwrap_or(&f64::NAN), d.seconds);
    }
    let diag = PathBuf::from("diagnostics").join("track.json");
    write_json(&config.work.join(&diag), &st.diagnostics)?;
    out.push(diag);
    Ok(out)
}

fn cmd_texture(config: &RunConfig) -> Result<Outputs> {
    let inputs = load_inputs(config)?;
    let pipeline = config.pipeline();
    let mut out = Vec::new();
    let mut diags = Vec::new();
    let mut previous: Option<GaussianSet> = None;
    for f in 0..inputs.frames {
        let base = load_base(&config.work, f, &inputs.topology)?;
        let mut dense = densify_uv(&base, config.densify_n)?;
        if let Some(prev) = &previous {
            dense.gaussians.colors.clone_from(&prev.colors);
        }
        let st = state_at(config, &inputs, base)?;
        let views = load_views(&config.sequence, f, &inputs.cameras)?;
        diags.push(optimize_texture_frame(&st, &mut dense, &views, &pipeline)?);
        let ck = checkpoint_rel(CheckpointKind::Dense, f);
        save_checkpoint(&config.work.join(&ck), CheckpointKind::Dense, f, &dense.gaussians)?;
        out.push(ck);
        log::info!("texture: frame {f}, {} dense Gaussians", dense.len());
        previous = Some(dense.gaussians);
    }
    let diag = PathBuf::from("diagnostics").join("texture.json");
    write_json(&config.work.join(&diag), &diags)?;
    out.push(diag);
    Ok(out)
}

fn checkpoint_frames(config: &RunConfig, kind: CheckpointKind) -> Result<usize> {
    let mut count = 0;
    while config.work.join(checkpoint_rel(kind, count)).exists() {
        count += 1;
    }
    let n = config.frames.unwrap_or(count);
    if n == 0 || n > count {
        return Err(Error::MissingPath(config.work.join(checkpoint_rel(kind, count))));
    }
    Ok(n)
}

fn cmd_extract(config: &RunConfig) -> Result<Outputs> {
    let (topology, _) = load_obj(&config.mesh_path())?;
    let topology = Arc::new(topology);
    let frames = checkpoint_frames(config, CheckpointKind::Base)?;
    let mut out = Vec::new();
    for f in 0..frames {
        let base = load_base(&config.work, f, &topology)?;
        let normals = vertex_normals(&topology, base.positions(), None);
        let (pos, skipped) = normal_expansion(&base.gaussians, &normals)?;
        if skipped > 0 {
            log::warn!("extract-mesh: frame {f}: {skipped} vertices without a normal kept in place");
        }
        let rel = mesh_rel(f);
        save_obj(&config.work.join(&rel), &topology, &pos)?;
        out.push(rel);
    }
    Ok(out)
}

fn cmd_bake(config: &RunConfig) -> Result<Outputs> {
    let (topology, _) = load_obj(&config.mesh_path())?;
    let topology = Arc::new(topology);
    let frames = checkpoint_frames(config, CheckpointKind::Dense)?;
    let mut out = Vec::new();
    for f in 0..frames {
        let base = load_base(&config.work, f, &topology)?;
        let dense = dense_at(config, &base, f, &config.work)?;
        let map = bake_texture(&dense, config.texture_resolution)?;
        if map.overlaps > 0 {
            log::warn!("bake-texture: frame {f}: {} texels covered more than once", map.overlaps);
        }
        let (t, c) = (texture_rel(f), coverage_rel(f));
        save_png8(&config.work.join(&t), &map.dilated(config.dilation_passes))?;
        save_mask_png(&config.work.join(&c), map.resolution, map.resolution, &map.coverage)?;
        out.extend([t, c]);
    }
    Ok(out)
}

fn cmd_render(config: &RunConfig) -> Result<Outputs> {
    let cameras = load_cameras(config)?;
    let (topology, _) = load_obj(&config.mesh_path())?;
    let topology = Arc::new(topology);
    let frames = checkpoint_frames(config, CheckpointKind::Base)?;
    let mut out = Vec::new();
    for f in 0..frames {
        let base = load_base(&config.work, f, &topology)?;
        for (c, cam) in cameras.iter().enumerate() {
            let r = render(&base.gaussians, cam, &config.render);
            let rel = PathBuf::from("renders").join(format!("frame_{f:04}")).join(format!("cam_{c:02}.png"));
            save_rgba_png(&config.work.join(&rel), &r.rgb, &r.alpha)?;
            out.push(rel);
        }
    }
    Ok(out)
}

fn cmd_gradcheck(config: &RunConfig) -> Result<(Outputs, bool)> {
    let rows = run_gradcheck(config.seed)?;
    println!("{:<28} {:>10} {:>12}  result", "check", "components", "max rel err");
    for r in &rows {
        println!(
            "{:<28} {:>10} {:>12.3e}  {}",
            r.name,
            r.components,
            r.max_error,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    let rel = PathBuf::from("gradcheck.json");
    write_json(&config.work.join(&rel), &rows)?;
    Ok((vec![rel], rows.iter().all(|r| r.pass)))
}

fn cmd_report(config: &RunConfig) -> Result<Outputs> {
    let (topology, _) = load_obj(&config.mesh_path())?;
    let topology = Arc::new(topology);
    let frames = checkpoint_frames(config, CheckpointKind::Base)?;
    let mut tracked = Vec::with_capacity(frames);
    let mut gt = Vec::with_capacity(frames);
    for f in 0..frames {
        tracked.push(load_base(&config.work, f, &topology)?.gaussians.positions);
        let (_, p) = load_obj(&gt_mesh_path(&config.sequence, f))?;
        gt.push(p);
    }
    let mut report = tracking_error(&topology, &tracked, &gt)?;
    let textures: Vec<Image> = (0..frames)
        .map(|f| config.work.join(texture_rel(f)))
        .take_while(|p| p.exists())
        .map(|p| load_png(&p))
        .collect::<Result<_>>()?;
    if textures.len() == frames {
        report.set_texture_psnr(&textures, None)?;
    }
    let (j, c) = (PathBuf::from("report.json"), PathBuf::from("report.csv"));
    write_json(&config.work.join(&j), &report)?;
    fs::write(config.work.join(&c), report.to_csv())?;
    let worst = report.frames.iter().map(|f| f.mean).fold(0.0, f64::max);
    println!("frames {frames}, worst mean vertex error {:.4} of mean edge length", worst);
    Ok(vec![j, c])
}

#[derive(Debug, Parser)]
#[command(name = "topomesh", version, about = "Topology-preserving Gaussian mesh tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the sequence directory.
    #[arg(long)]
    sequence: Option<PathBuf>,
    /// Overrides the work directory.
    #[arg(long)]
    work: Option<PathBuf>,
    /// Overrides the number of frames.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic sequence with ground truth.
    Synth(Common),
    /// Bind Gaussians to the first-frame mesh and optimize rotations and scales.
    Init(Common),
    /// Track every later frame.
    Track(Common),
    /// Optimize dense per-frame colours.
    Texture(Common),
    /// Write per-frame meshes by normal expansion.
    ExtractMesh(Common),
    /// Bake dense colours into per-frame UV textures.
    BakeTexture(Common),
    /// Render tracked frames from every camera.
    Render(Common),
    /// Check analytic gradients against finite differences.
    Gradcheck(Common),
    /// Compare tracked vertices with the synthetic ground truth.
    Report(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Synth(c) => ("synth", c),
            Command::Init(c) => ("init", c),
            Command::Track(c) => ("track", c),
            Command::Texture(c) => ("texture", c),
            Command::ExtractMesh(c) => ("extract-mesh", c),
            Command::BakeTexture(c) => ("bake-texture", c),
            Command::Render(c) => ("render", c),
            Command::Gradcheck(c) => ("gradcheck", c),
            Command::Report(c) => ("report", c),
        }
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &common.sequence {
        c.sequence.clone_from(s);
    }
    if let Some(w) = &common.work {
        c.work.clone_from(w);
    }
    if common.frames.is_some() {
        c.frames = common.frames;
    }
    c.validate()?;
    Ok(c)
}

/// Caps the global worker pool from `TOPOMESH_THREADS` (0 or unset = auto).
/// Only the first call in a process has an effect.
pub fn configure_threads() {
    let n = std::env::var("TOPOMESH_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs one command line and returns the process exit code: 0 on success,
/// 1 on usage or validation errors, 2 on runtime failures.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let (name, common) = cli.command.parts();
    let result = resolve_config(common).and_then(|config| {
        let (files, ok) = match &cli.command {
            Command::Synth(_) => (cmd_synth(&config)?, true),
            Command::Init(_) => (cmd_init(&config)?, true),
            Command::Track(_) => (cmd_track(&config)?, true),
            Command::Texture(_) => (cmd_texture(&config)?, true),
            Command::ExtractMesh(_) => (cmd_extract(&config)?, true),
            Command::BakeTexture(_) => (cmd_bake(&config)?, true),
            Command::Render(_) => (cmd_render(&config)?, true),
            Command::Gradcheck(_) => cmd_gradcheck(&config)?,
            Command::Report(_) => (cmd_report(&config)?, true),
        };
        fs::create_dir_all(&config.work)?;
        RunManifest::record(&config.work, name, files)?;
        Ok(ok)
    });
    match result {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error: {name}: some checks failed");
            2
        }
        Err(e) => {
            eprintln!("error: {name}: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
