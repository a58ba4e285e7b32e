//! The `hvr` command line: voxelize meshes, build priors, generate synthetic
//! data, train, evaluate, and render heatmaps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diffcore::Rng;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EpisodePrediction, EvalOptions};
use crate::grid::GridSpec;
use crate::location_prior::{decode_locd, encode_locd, make_prior, parse_track, LocationDistribution, DEFAULT_SIGMA};
use crate::mesh_env::io::encode_descriptor;
use crate::mesh_env::{
    build_affordance, build_ground_plane, build_hvr, build_semvoxel, count_outside, parse_mesh, EnvDescriptor,
};
use crate::model::{env_input_channels, infer, prepare_env, train, ModelConfig, ModelParams, TrainConfig, Variant};
use crate::synthgen::{self, generate_split, load_dataset, save_split, Dataset, SplitMode, SynthConfig};

/// Environment variable that overrides every `--seed` flag.
pub const SEED_ENV: &str = "HVR_SEED";

#[derive(Debug, Parser)]
#[command(name = "hvr", version, about = "Action recognition and 3D localization over hierarchical voxel maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize a labeled mesh into an ENVD descriptor file.
    Voxelize(VoxelizeArgs),
    /// Build a location prior (LOCD) from a camera track.
    Prior(PriorArgs),
    /// Generate a synthetic world and train/test episodes.
    Synth(SynthArgs),
    /// Train a model on a synthetic dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test episodes of a dataset.
    Eval(EvalArgs),
    /// Render a LOCD heatmap as a top-down max projection (ASCII PGM).
    Render(RenderArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Parent voxel counts along x, y, z.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [28, 28, 8])]
    pub dims: Vec<usize>,
    /// Child voxels per parent along each axis (M).
    #[arg(long, default_value_t = 4)]
    pub child_res: usize,
    /// Grid origin in meters.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_hyphen_values = true, default_values_t = [0.0, 0.0, 0.0])]
    pub origin: Vec<f64>,
    /// Grid extents in meters.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [2.8, 2.8, 1.6])]
    pub extents: Vec<f64>,
}

impl GridArgs {
    pub fn to_grid(&self) -> Result<GridSpec> {
        GridSpec::new(triple(&self.origin)?, triple(&self.extents)?, triple(&self.dims)?, self.child_res)
    }
}

fn triple<T: Copy>(v: &[T]) -> Result<[T; 3]> {
    v.try_into()
        .map_err(|_| Error::Invalid(format!("expected three values, got {}", v.len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    Hvr,
    Semvoxel,
    GroundPlane,
    Affordance,
}

#[derive(Debug, Args)]
pub struct VoxelizeArgs {
    /// Input mesh (text format).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Synthetic dataset whose training episodes define an affordance map.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = KindArg::Hvr)]
    pub kind: KindArg,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    #[arg(long)]
    pub track: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Gaussian width in parent voxels.
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    /// Verify that the written distribution sums to one.
    #[arg(long)]
    pub check: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Object classes including the empty class.
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub actions: usize,
    #[arg(long, default_value_t = 6)]
    pub objects: usize,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 500)]
    pub test: usize,
    #[arg(long, default_value_t = 0.1)]
    pub obs_noise: f64,
    /// Fraction of actions separable only through the environment.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Fraction of training episodes with no camera track.
    #[arg(long, default_value_t = 0.0)]
    pub p_drop: f64,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value_t = 3)]
    pub key_frames: usize,
    #[arg(long, default_value_t = 0.5)]
    pub prior_sigma: f64,
    /// Pooling from the parent grid to the location grid.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [1, 1, 1])]
    pub pool: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub cue_radius: usize,
    #[arg(long, default_value_t = 1)]
    pub decoys: usize,
    #[arg(long, default_value = "seen")]
    pub split: SplitMode,
    #[arg(long)]
    pub out: PathBuf,
}

impl SynthArgs {
    pub fn to_config(&self, seed: u64) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            seed,
            grid: self.grid.to_grid()?,
            num_classes: self.classes,
            num_actions: self.actions,
            num_objects: self.objects,
            train_episodes: self.train,
            test_episodes: self.test,
            obs_noise: self.obs_noise,
            rho: self.rho,
            p_drop: self.p_drop,
            frames: self.frames,
            key_frames: self.key_frames,
            prior_sigma: self.prior_sigma,
            env_pool: triple(&self.pool)?,
            cue_radius: self.cue_radius,
            decoys: self.decoys,
            split: self.split,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Random,
    Zeros,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write; the model description goes next to it as
    /// `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "full")]
    pub variant: Variant,
    #[arg(long, value_enum, default_value_t = KindArg::Hvr)]
    pub descriptor: KindArg,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    pub init: InitArg,
    #[arg(long, default_value_t = 4)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Keep the learning rate constant instead of cosine decay.
    #[arg(long)]
    pub no_cosine: bool,
    #[arg(long, default_value_t = 8)]
    pub c_phi: usize,
    #[arg(long, default_value_t = 8)]
    pub c_psi: usize,
    /// Gumbel-Softmax temperature.
    #[arg(long, default_value_t = 2.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_kl: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the per-step log to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Print every n-th step to stdout.
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Per-episode predictions as CSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Binarization threshold; defaults to the uniform density of the
    /// downsampled grid.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Write the predicted location map of this test episode ...
    #[arg(long, requires = "heatmap")]
    pub heatmap_episode: Option<usize>,
    /// ... to this LOCD file.
    #[arg(long, requires = "heatmap_episode")]
    pub heatmap: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub locd: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// What `train` stores next to a checkpoint so `eval` can rebuild the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub model: ModelConfig,
    pub descriptor: KindArg,
    pub train: TrainConfig,
}

/// Exit status for a failed command: 2 when training diverged, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFinite { .. } => 2,
        _ => 1,
    }
}

/// `HVR_SEED` wins over the flag when set.
pub fn resolve_seed(flag: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Voxelize(a) => cmd_voxelize(&a, out),
        Command::Prior(a) => cmd_prior(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Render(a) => cmd_render(&a, out),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn open_reader(path: &Path) -> Result<std::io::BufReader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::Invalid(format!("cannot open {}: {e}", path.display())))?;
    Ok(std::io::BufReader::new(f))
}

pub fn cmd_voxelize(a: &VoxelizeArgs, out: &mut dyn Write) -> Result<()> {
    let grid = a.grid.to_grid()?;
    let (desc, outside) = if a.kind == KindArg::Affordance {
        let dir = a
            .data
            .as_ref()
            .ok_or_else(|| Error::Invalid("--kind affordance needs --data".into()))?;
        let data = load_dataset(dir)?;
        let (d, skipped) = build_affordance(&data.train, &grid, data.config.num_actions)?;
        (d, skipped)
    } else {
        let path = a
            .mesh
            .as_ref()
            .ok_or_else(|| Error::Invalid("--mesh is required for this kind".into()))?;
        let mesh = parse_mesh(open_reader(path)?)?;
        let outside = count_outside(&mesh, &grid);
        let d = match a.kind {
            KindArg::Hvr => build_hvr(&mesh, &grid)?,
            KindArg::Semvoxel => build_semvoxel(&mesh, &grid)?,
            KindArg::GroundPlane => build_ground_plane(&build_semvoxel(&mesh, &grid)?)?,
            KindArg::Affordance => unreachable!(),
        };
        (d, outside)
    };
    write_file(&a.out, encode_descriptor(&desc))?;
    let dims: Vec<String> = desc.dims.iter().map(|d| d.to_string()).collect();
    writeln!(out, "dims {}", dims.join(" "))?;
    writeln!(out, "non_empty {}", desc.non_empty_count())?;
    if a.kind == KindArg::Affordance {
        writeln!(out, "skipped_episodes {outside}")?;
    } else {
        writeln!(out, "outside {outside}")?;
    }
    Ok(())
}

pub fn cmd_prior(a: &PriorArgs, out: &mut dyn Write) -> Result<()> {
    let grid = a.grid.to_grid()?;
    let track = parse_track(open_reader(&a.track)?)?;
    let prior = make_prior(&track, &grid, a.sigma)?;
    let bytes = encode_locd(&prior.dist);
    write_file(&a.out, &bytes)?;
    writeln!(out, "key_frames {}", track.key_frames.len())?;
    writeln!(out, "skipped {}", prior.skipped)?;
    writeln!(out, "uniform {}", track.is_empty() || prior.uniform_fallback)?;
    if a.check {
        let back = decode_locd(&fs::read(&a.out)?)?;
        let total = back.total();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("prior sums to {total}, not 1")));
        }
        writeln!(out, "check ok sum={total:.12}")?;
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.to_config(resolve_seed(a.seed)?)?;
    let split = generate_split(&cfg)?;
    save_split(&a.out, &cfg, &split)?;
    writeln!(out, "seed {}", cfg.seed)?;
    writeln!(out, "objects {}", split.world.placements.len())?;
    writeln!(out, "vertices {}", split.world.mesh.vertices.len())?;
    writeln!(out, "train {}", split.train.len())?;
    writeln!(out, "test {}", split.test.len())?;
    Ok(())
}

/// Descriptor of the requested kind for the train (`test = false`) or test
/// world of a dataset.
fn dataset_descriptor(dir: &Path, data: &Dataset, kind: KindArg, test: bool) -> Result<EnvDescriptor> {
    let grid = data.config.grid;
    let mesh = || -> Result<_> {
        let name = if test && dir.join(synthgen::TEST_WORLD_FILE).exists() {
            synthgen::TEST_WORLD_FILE
        } else {
            synthgen::WORLD_FILE
        };
        synthgen::load_world_mesh(&dir.join(name))
    };
    Ok(match kind {
        KindArg::Hvr => {
            if test {
                data.test_env.clone()
            } else {
                data.env.clone()
            }
        }
        KindArg::Semvoxel => build_semvoxel(&mesh()?, &grid)?,
        KindArg::GroundPlane => build_ground_plane(&build_semvoxel(&mesh()?, &grid)?)?,
        KindArg::Affordance => build_affordance(&data.train, &grid, data.config.num_actions)?.0,
    })
}

fn card_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let desc = dataset_descriptor(&a.data, &data, a.descriptor, false)?;
    let mut cfg = data.config.model_config(a.c_phi, a.c_psi, a.theta, a.lambda_kl, a.variant);
    cfg.env_channels = env_input_channels(&desc);
    cfg.validate()?;
    let env = prepare_env(&desc, &cfg)?;
    let tcfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        cosine: !a.no_cosine,
        seed: resolve_seed(a.seed)?,
    };
    let mut params = match a.init {
        InitArg::Random => ModelParams::init(&cfg, &mut Rng::new(tcfg.seed).fork(0)),
        InitArg::Zeros => ModelParams::zeros(&cfg),
    };

    let mut log_text = String::new();
    let every = a.log_every.max(1);
    let mut io_err = None;
    let result = if tcfg.epochs == 0 {
        Ok(Default::default())
    } else {
        train(&data.train, &env, &mut params, &cfg, &tcfg, |rec| {
            let line = rec.to_line();
            if rec.step % every == 0 {
                if let Err(e) = writeln!(out, "{line}") {
                    io_err.get_or_insert(e);
                }
            }
            log_text.push_str(&line);
            log_text.push('\n');
        })
    };
    if let Some(path) = &a.log {
        write_file(path, &log_text)?;
    }
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let log = result?;
    write_file(&a.out, params.to_checkpoint())?;
    let card = ModelCard {
        model: cfg,
        descriptor: a.descriptor,
        train: tcfg,
    };
    write_file(&card_path(&a.out), serde_json::to_string_pretty(&card)? + "\n")?;
    if let Some(last) = log.records.last() {
        writeln!(out, "final {}", last.to_line())?;
    }
    writeln!(out, "checkpoint {}", a.out.display())?;
    Ok(())
}

pub fn load_model(checkpoint: &Path) -> Result<(ModelCard, ModelParams)> {
    let card: ModelCard = serde_json::from_slice(&fs::read(card_path(checkpoint))?)?;
    card.model.validate()?;
    let params = ModelParams::from_checkpoint(&fs::read(checkpoint)?, &card.model)?;
    Ok((card, params))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (card, params) = load_model(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    let desc = dataset_descriptor(&a.data, &data, card.descriptor, true)?;
    let env = prepare_env(&desc, &card.model)?;
    let mut opts = EvalOptions::for_model(&card.model);
    opts.tau = a.tau;
    opts.workers = a.workers.max(1);
    let (report, preds) = evaluate(&params, &card.model, &data.test, &env, &opts)?;
    let text = report.to_text();
    write_file(&a.report, &text)?;
    out.write_all(text.as_bytes())?;
    if let Some(path) = &a.predictions {
        let mut csv = String::from(EpisodePrediction::csv_header());
        csv.push('\n');
        for p in &preds {
            csv.push_str(&p.to_csv());
            csv.push('\n');
        }
        write_file(path, csv)?;
    }
    if let (Some(i), Some(path)) = (a.heatmap_episode, &a.heatmap) {
        let ep = data
            .test
            .get(i)
            .ok_or_else(|| Error::Invalid(format!("test split has no episode {i}")))?;
        let inf = infer(ep, &env, &params, &card.model)?;
        write_file(path, encode_locd(&inf.location))?;
    }
    Ok(())
}

/// Top-down maximum projection as a plain PGM: one row per y (ascending),
/// one column per x, scaled so the largest cell is 255.
pub fn render_pgm(d: &LocationDistribution) -> String {
    let [nx, ny, nz] = d.dims;
    let mut proj = vec![0.0f64; nx * ny];
    for x in 0..nx {
        for y in 0..ny {
            proj[y * nx + x] = (0..nz)
                .map(|z| d.probs[crate::location_prior::flat(d.dims, [x, y, z])])
                .fold(0.0, f64::max);
        }
    }
    let peak = proj.iter().cloned().fold(0.0, f64::max);
    let mut s = format!("P2\n{nx} {ny}\n255\n");
    for y in 0..ny {
        let row: Vec<String> = (0..nx)
            .map(|x| {
                let v = if peak > 0.0 { proj[y * nx + x] / peak } else { 0.0 };
                ((v * 255.0).round() as u32).min(255).to_string()
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn cmd_render(a: &RenderArgs, out: &mut dyn Write) -> Result<()> {
    let d = decode_locd(&fs::read(&a.locd)?)?;
    write_file(&a.out, render_pgm(&d))?;
    writeln!(out, "image {} {}", d.dims[0], d.dims[1])?;
    Ok(())
}
