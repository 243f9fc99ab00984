//! Subcommand implementations.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use facefield::checkpoint::{export_checkpoint, load_checkpoint, read_manifest, CHECKPOINT_SCHEMA};
use facefield::fit::{align_landmarks, fit_codes, random_init, AlignOptions, FitOptions, FitTarget};
use facefield::metrics::{psnr_from_mse, MetricReport};
use facefield::model::Model;
use facefield::morph::{expression_track, interpolate, rig_sequence, swap_attribute, write_frames};
use facefield::synth::dataset::{image_stem, SCHEMA_VERSION};
use facefield::synth::{build_dataset, landmarks_for, Dataset, DatasetConfig};
use facefield::train::{TrainConfig, Trainer};
use facefield::{Camera, CodeKind, Error, FaceCodes, Image, Mask, RenderSettings};
use facefield_service::{AppState, API_VERSION};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{resolve, Overrides};
use crate::{CameraArgs, CliError, DatasetArgs, EvalArgs, FitArgs, MorphArgs, MorphMode, RenderArgs, ServeArgs, SplitName, TrainArgs};

const RUN_FILE: &str = "run.json";

fn op(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Op(format!("{context}: {e}"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| op("serializing", e))?;
    std::fs::write(path, text + "\n").map_err(|e| op(&format!("writing {}", path.display()), e))
}

/// Records the resolved configuration and versions next to a command's output.
fn write_run(path: &Path, command: &str, argv: &[String], config: &impl Serialize) -> Result<(), CliError> {
    let record = json!({
        "tool": "facefield",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "argv": argv,
        "schemas": { "dataset": SCHEMA_VERSION, "checkpoint": CHECKPOINT_SCHEMA, "api": API_VERSION },
        "config": config,
    });
    write_json(path, &record)
}

fn flags(common: &crate::Common) -> Result<Overrides, CliError> {
    let mut o = Overrides::default();
    o.assignments(&common.set)?;
    Ok(o)
}

fn load_model(dir: &Path) -> Result<Model, CliError> {
    Model::load(dir).map_err(|e| op(&format!("loading checkpoint {}", dir.display()), e))
}

pub fn dataset_build(a: DatasetArgs, argv: &[String]) -> Result<(), CliError> {
    let mut o = flags(&a.common)?;
    o.opt("n_subjects", a.subjects);
    o.opt("n_expressions", a.expressions);
    o.opt("views", a.views.map(|n| json!({ "spread": n })));
    o.opt("resolution", a.resolution);
    o.opt("seed", a.seed);
    o.opt("shape_dim", a.shape_dim);
    o.opt("texture_size", a.texture_size);
    o.opt("train_ratio", a.train_ratio);
    let cfg: DatasetConfig = resolve(&DatasetConfig::default(), a.common.config.as_deref(), o)?;
    let manifest = build_dataset(&cfg, &a.out).map_err(|e| match e {
        Error::Config(m) | Error::InvalidInput(m) => CliError::Usage(m),
        e => e.into(),
    })?;
    write_run(&a.out.join(RUN_FILE), "dataset build", argv, &cfg)?;
    log::info!("wrote {} images to {}", manifest.images.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRun {
    pub data: Option<PathBuf>,
    pub checkpoint_every: u64,
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self { data: None, checkpoint_every: 0, train: TrainConfig::default() }
    }
}

fn train_overrides(a: &TrainArgs) -> Result<Overrides, CliError> {
    let mut o = flags(&a.common)?;
    o.opt("data", a.data.as_ref());
    o.opt("checkpoint_every", a.checkpoint_every);
    o.opt("train.total_iters", a.iters);
    o.opt("train.rays_per_iter", a.rays);
    o.opt("train.lr_start", a.lr);
    o.opt("train.seed", a.seed);
    Ok(o)
}

pub fn train(a: TrainArgs, argv: &[String]) -> Result<(), CliError> {
    let resumed = if a.resume { Some(load_checkpoint(&a.out)?) } else { None };
    let mut defaults = TrainRun::default();
    if let Some(s) = &resumed {
        defaults.train = s.config.clone();
    }
    let first: TrainRun = resolve(&defaults, a.common.config.as_deref(), train_overrides(&a)?)?;
    let data_dir = first.data.clone().ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let data = Dataset::load(&data_dir).map_err(|e| op(&format!("loading dataset {}", data_dir.display()), e))?;
    if resumed.is_none() {
        // field dimensions follow the dataset unless configured explicitly
        defaults.train.field.shape_dim = data.manifest.config.shape_dim;
        defaults.train.field.texture_size = data.manifest.config.texture_size;
    }
    let mut run: TrainRun = resolve(&defaults, a.common.config.as_deref(), train_overrides(&a)?)?;
    run.data = Some(std::path::absolute(&data_dir).map_err(|e| op("resolving data path", e))?);
    run.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut trainer = match resumed {
        Some(mut state) => {
            if state.config.field != run.train.field {
                return Err(CliError::Usage("the field configuration cannot change on resume".into()));
            }
            state.config = run.train.clone();
            Trainer::with_state(&data, state)?
        }
        None => {
            std::fs::create_dir_all(&a.out).map_err(|e| op("creating output directory", e))?;
            Trainer::new(&data, run.train.clone()).map_err(|e| match e {
                Error::Config(m) => CliError::Usage(m),
                e => e.into(),
            })?
        }
    };
    write_run(&a.out.join(RUN_FILE), "train", argv, &run)?;

    let metrics_path = a.out.join("metrics.ndjson");
    let file = OpenOptions::new()
        .create(true)
        .append(a.resume)
        .write(true)
        .truncate(!a.resume)
        .open(&metrics_path)
        .map_err(|e| op("opening metrics log", e))?;
    let mut log_file = BufWriter::new(file);
    let total = run.train.total_iters;
    let report_every = (total / 20).max(1);
    let stop = a.max_steps.map_or(total, |n| total.min(trainer.state.step.saturating_add(n)));
    while trainer.state.step < stop {
        let m = trainer.step()?;
        serde_json::to_writer(&mut log_file, &m).map_err(|e| op("writing metrics", e))?;
        writeln!(log_file).map_err(|e| op("writing metrics", e))?;
        if m.step % report_every == 0 {
            log::info!("step {} loss {:.5} psnr {:.2} lr {:.2e}", m.step, m.loss, m.psnr_probe, m.lr);
        }
        if run.checkpoint_every > 0 && m.step % run.checkpoint_every == 0 && m.step < stop {
            log_file.flush().map_err(|e| op("writing metrics", e))?;
            trainer.snapshot_appearance()?;
            export_checkpoint(&trainer.state, &a.out)?;
        }
    }
    log_file.flush().map_err(|e| op("writing metrics", e))?;
    trainer.snapshot_appearance()?;
    export_checkpoint(&trainer.state, &a.out)?;
    log::info!("checkpoint at step {} written to {}", trainer.state.step, a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub yaw: f64,
    pub pitch: f64,
    pub radius: f64,
    pub resolution: usize,
    pub coarse_only: bool,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            yaw: 0.0,
            pitch: 0.0,
            radius: facefield::camera::DEFAULT_RADIUS,
            resolution: 128,
            coarse_only: false,
        }
    }
}

impl CameraConfig {
    fn camera(&self) -> Result<Camera, CliError> {
        Camera::orbit(self.yaw, self.pitch, self.radius, self.resolution, self.resolution)
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    fn settings(&self, model: &Model) -> RenderSettings {
        RenderSettings { coarse_only: self.coarse_only, ..model.render_settings() }
    }
}

fn camera_overrides(o: &mut Overrides, c: &CameraArgs) {
    o.opt("camera.yaw", c.yaw);
    o.opt("camera.pitch", c.pitch);
    o.opt("camera.radius", c.radius);
    o.opt("camera.resolution", c.resolution);
    if c.coarse_only {
        o.set("camera.coarse_only", true);
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderRun {
    pub subject: usize,
    pub expression: usize,
    pub codes: Option<PathBuf>,
    pub camera: CameraConfig,
}

/// Reads codes from a bare code file or any JSON object with a `codes` field.
fn read_codes(path: &Path) -> Result<FaceCodes<f32>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| op(&format!("reading {}", path.display()), e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| op(&format!("parsing {}", path.display()), e))?;
    let inner = v.get("codes").cloned().unwrap_or(v);
    serde_json::from_value(inner).map_err(|e| op(&format!("parsing codes in {}", path.display()), e))
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}

pub fn render(a: RenderArgs, argv: &[String]) -> Result<(), CliError> {
    let mut o = flags(&a.common)?;
    o.opt("subject", a.subject);
    o.opt("expression", a.expression);
    o.opt("codes", a.codes.as_ref());
    camera_overrides(&mut o, &a.camera);
    let run: RenderRun = resolve(&RenderRun::default(), a.common.config.as_deref(), o)?;
    let model = load_model(&a.checkpoint)?;
    let codes = match &run.codes {
        Some(p) => read_codes(p)?,
        None => model.codes(run.subject, run.expression).map_err(|e| CliError::Usage(e.to_string()))?,
    };
    let img = model.render(&codes, &run.camera.camera()?, &run.camera.settings(&model))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| op("creating output directory", e))?;
    }
    img.write_png(&a.out)?;
    write_run(&sidecar(&a.out), "render", argv, &run)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitRun {
    pub fit: FitOptions,
    pub align: AlignOptions,
    pub init_std: f64,
    pub init_seed: u64,
}

impl Default for FitRun {
    fn default() -> Self {
        Self { fit: FitOptions::default(), align: AlignOptions::default(), init_std: 0.3, init_seed: 0 }
    }
}

fn read_target(a: &FitArgs) -> Result<FitTarget, CliError> {
    let image = Image::read_png(&a.image)?;
    let mask = Mask::read_png(&a.mask)?;
    let text = std::fs::read_to_string(&a.landmarks).map_err(|e| op("reading landmarks", e))?;
    let lm: Vec<[f64; 2]> = serde_json::from_str(&text).map_err(|e| op("parsing landmarks", e))?;
    FitTarget::new(image, mask, lm).map_err(|e| op("invalid fit target", e))
}

pub fn fit(a: FitArgs, argv: &[String]) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint)?;
    let mut defaults = FitRun::default();
    defaults.fit.render = model.render_settings();
    let mut o = flags(&a.common)?;
    o.opt("fit.iters", a.iters);
    o.opt("fit.seed", a.seed);
    o.opt("init_seed", a.seed);
    let run: FitRun = resolve(&defaults, a.common.config.as_deref(), o)?;
    run.fit.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let target = read_target(&a)?;
    std::fs::create_dir_all(&a.out).map_err(|e| op("creating output directory", e))?;
    write_run(&a.out.join(RUN_FILE), "fit", argv, &run)?;

    let outcome = align_landmarks(&target, &landmarks_for(&[], 0), &run.align).and_then(|view| {
        let neutral = model.bank.expression.first().cloned().unwrap_or_default();
        let init = random_init(model.config.field.shape_dim, neutral, run.init_std, run.init_seed)?;
        fit_codes(&target, &model.weights, &view, init, &run.fit)
    });
    let result = match outcome {
        Ok(r) => r,
        Err(e) => {
            write_json(&a.out.join("diagnostic.json"), &json!({ "error": e.to_string() }))?;
            return Err(e.into());
        }
    };
    let (w, h) = (target.image.width, target.image.height);
    let cam = result.view.camera(w, h)?;
    model.render(&result.codes, &cam, &run.fit.render)?.write_png(&a.out.join("fitted.png"))?;
    let mut report = serde_json::to_value(&result).map_err(|e| op("serializing", e))?;
    report["psnr"] = json!(psnr_from_mse(result.error));
    write_json(&a.out.join("fit.json"), &report)?;
    log::info!("fit error {:.3e} ({:.2} dB)", result.error, psnr_from_mse(result.error));
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MorphRun {
    pub mode: MorphMode,
    pub from: usize,
    pub to: usize,
    pub expression: usize,
    pub steps: usize,
    pub dims: Vec<CodeKind>,
    pub keys: Vec<usize>,
    pub yaw_end: Option<f64>,
    pub camera: CameraConfig,
}

impl Default for MorphRun {
    fn default() -> Self {
        Self {
            mode: MorphMode::Interpolate,
            from: 0,
            to: 1,
            expression: 0,
            steps: 10,
            dims: vec![CodeKind::Shape, CodeKind::Appearance, CodeKind::Expression],
            keys: vec![0],
            yaw_end: None,
            camera: CameraConfig::default(),
        }
    }
}

pub fn morph(a: MorphArgs, argv: &[String]) -> Result<(), CliError> {
    let mut o = flags(&a.common)?;
    o.set("mode", a.mode);
    o.opt("from", a.from);
    o.opt("to", a.to);
    o.opt("steps", a.steps);
    o.opt("dims", a.dims.as_ref());
    o.opt("keys", a.keys.as_ref());
    o.opt("yaw_end", a.yaw_end);
    camera_overrides(&mut o, &a.camera);
    let run: MorphRun = resolve(&MorphRun::default(), a.common.config.as_deref(), o)?;
    if run.steps == 0 {
        return Err(CliError::Usage("steps must be positive".into()));
    }
    let model = load_model(&a.checkpoint)?;
    let settings = run.camera.settings(&model);
    let cam = run.camera.camera()?;
    let bank = |s: usize, e: usize| model.codes(s, e).map_err(|e| CliError::Usage(e.to_string()));
    let frames = match run.mode {
        MorphMode::Interpolate => {
            let (x, y) = (bank(run.from, run.expression)?, bank(run.to, run.expression)?);
            (0..=run.steps)
                .map(|i| {
                    let c = interpolate(&x, &y, i as f64 / run.steps as f64, &run.dims)?;
                    model.render(&c, &cam, &settings)
                })
                .collect::<facefield::Result<Vec<Image>>>()?
        }
        MorphMode::Swap => {
            let which = *run.dims.first().ok_or_else(|| CliError::Usage("swap needs one code component".into()))?;
            let (x, y) = (bank(run.from, run.expression)?, bank(run.to, run.expression)?);
            let swapped = swap_attribute(&x, &y, which)?;
            [x, y, swapped]
                .iter()
                .map(|c| model.render(c, &cam, &settings))
                .collect::<facefield::Result<Vec<Image>>>()?
        }
        MorphMode::Track => {
            let base = bank(run.from, run.expression)?;
            let keys = run.keys.iter().map(|&k| bank(run.from, k).map(|c| c.eps)).collect::<Result<Vec<_>, _>>()?;
            let track = expression_track(&keys, run.steps)?;
            let cams = match run.yaw_end {
                Some(end) => {
                    let n = track.len().max(2);
                    (0..n)
                        .map(|i| {
                            let t = i as f64 / (n - 1) as f64;
                            let yaw = (1.0 - t) * run.camera.yaw + t * end;
                            CameraConfig { yaw, ..run.camera.clone() }.camera()
                        })
                        .collect::<Result<Vec<_>, _>>()?
                }
                None => vec![cam],
            };
            rig_sequence(&model.weights, &base.beta, &base.alpha, &track, &cams, &settings)?
        }
    };
    let index = write_frames(&a.out, &frames, serde_json::to_value(&run).map_err(|e| op("serializing", e))?)?;
    write_run(&a.out.join(RUN_FILE), "morph", argv, &run)?;
    log::info!("wrote {} frames to {}", index.frames.len(), a.out.display());
    Ok(())
}

fn recorded_data_dir(checkpoint: &Path) -> Result<PathBuf, CliError> {
    let path = checkpoint.join(RUN_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| CliError::Usage(format!("no --data given and no {} to find the dataset", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| op("parsing run record", e))?;
    v["config"]["data"]
        .as_str()
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage(format!("{} does not record a dataset", path.display())))
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let data_dir = match &a.data {
        Some(d) => d.clone(),
        None => recorded_data_dir(&a.checkpoint)?,
    };
    let model = load_model(&a.checkpoint)?;
    let data = Dataset::load(&data_dir).map_err(|e| op(&format!("loading dataset {}", data_dir.display()), e))?;
    let indices = match a.split {
        SplitName::Train => data.train_indices(),
        SplitName::Test => data.test_indices(),
        SplitName::All => (0..data.samples.len()).collect(),
    };
    if indices.is_empty() {
        return Err(CliError::Op(format!("the {:?} split is empty", a.split).to_lowercase()));
    }
    let settings = RenderSettings { coarse_only: a.coarse_only, ..model.render_settings() };
    let mut scores = Vec::with_capacity(indices.len());
    for i in indices {
        let s = &data.samples[i];
        let codes = model.codes(s.subject, s.expression)?;
        let img = model.render(&codes, data.camera(s.view), &settings)?;
        scores.push(MetricReport::score(image_stem(s.subject, s.expression, s.view), &img, &s.image)?);
    }
    let report = MetricReport::from_scores(scores);
    eprintln!(
        "PSNR {:.2} ± {:.2}  SSIM {:.3} ± {:.3}  ({} images)",
        report.psnr.mean,
        report.psnr.std,
        report.ssim.mean,
        report.ssim.std,
        report.images.len()
    );
    match &a.out {
        Some(p) => write_json(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| op("serializing", e))?);
            Ok(())
        }
    }
}

pub fn serve(a: ServeArgs) -> Result<(), CliError> {
    read_manifest(&a.checkpoint)?;
    let state = AppState::from_checkpoint(a.checkpoint.clone(), a.fit_workers.max(1))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| op("starting runtime", e))?;
    rt.block_on(facefield_service::serve(state, std::net::SocketAddr::new(a.host, a.port)))
        .map_err(|e| op("serving", e))
}
