//! Procedural worlds and action episodes where the environment is needed to
//! tell actions apart.
//!
//! Actions come in confusable pairs. Both members of a pair produce the same
//! observation pattern: their template channel is lit over the whole volume,
//! and a presence channel carries a blob around the actor's floor column,
//! constant along height. What differs is where they happen:
//! each action occurs on top of objects of its own class. An observation
//! therefore says *where* (in the plane) but not *what is there*; only the
//! environment at that location separates the pair.
//!
//! Decoy blobs over empty floor make the observation ambiguous about
//! location as well: the actor is at one of the lit columns, and only the
//! environment (an object surface under the actor) says which.
//!
//! Blobs are kept away from the grid border and from each other by the blob
//! radius plus the video encoder's receptive radius, so any
//! translation-invariant video feature sees the same pattern for both
//! members of a pair.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt::{Reader, Writer};
use crate::diffcore::{Rng, Tensor};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::location_prior::{
    downsample_distribution, flat, make_prior, parse_track, write_track, CameraTrack, KeyFrame, LocationDistribution,
};
use crate::mesh_env::io::{decode_descriptor, encode_descriptor, read_block, write_block, OBS_KIND};
use crate::mesh_env::{build_hvr, parse_mesh_str, write_mesh, EnvDescriptor, SemanticMesh, Vertex};
use crate::model::{EpisodeClip, ModelConfig, Variant};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
pub const MIN_VERTICES_PER_OBJECT: usize = 50;

const WORLD_STREAM: u64 = 1;
const TEST_WORLD_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const TEST_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Train and test episodes share one world.
    Seen,
    /// Test episodes come from a second, independently generated world.
    Unseen,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(SplitMode::Seen),
            "unseen" => Ok(SplitMode::Unseen),
            _ => Err(Error::Invalid(format!("unknown split mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub grid: GridSpec,
    /// Object classes including the reserved empty class 0.
    pub num_classes: usize,
    pub num_actions: usize,
    pub num_objects: usize,
    pub train_episodes: usize,
    pub test_episodes: usize,
    /// Standard deviation of the per-frame Gaussian observation noise.
    pub obs_noise: f64,
    /// Fraction of action classes that are only separable through the
    /// environment.
    pub rho: f64,
    /// Fraction of training episodes whose camera track is dropped.
    pub p_drop: f64,
    pub frames: usize,
    pub key_frames: usize,
    /// Gaussian width of the location prior, in parent voxels.
    pub prior_sigma: f64,
    /// Pooling from the parent grid to the location grid.
    pub env_pool: [usize; 3],
    /// Radius of each presence blob, in location cells.
    pub cue_radius: usize,
    /// Presence blobs shown over empty floor in addition to the actor's.
    pub decoys: usize,
    pub split: SplitMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: GridSpec {
                origin: [0.0; 3],
                extents: [1.2, 1.2, 0.4],
                dims: [12, 12, 4],
                child_res: 2,
            },
            num_classes: 5,
            num_actions: 8,
            num_objects: 6,
            train_episodes: 2000,
            test_episodes: 500,
            obs_noise: 0.1,
            rho: 1.0,
            p_drop: 0.0,
            frames: 4,
            key_frames: 3,
            prior_sigma: 0.5,
            env_pool: [1, 1, 1],
            cue_radius: 0,
            decoys: 1,
            split: SplitMode::Seen,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(0.0..=1.0).contains(&self.rho) || !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::Invalid("rho and p_drop must lie in [0, 1]".into()));
        }
        if self.num_actions < 2 {
            return Err(Error::Invalid("need at least two actions".into()));
        }
        if self.rho > 0.0 && self.num_actions % 2 != 0 {
            return Err(Error::Invalid("confusable pairs need an even number of actions".into()));
        }
        if self.num_classes < 3 {
            return Err(Error::Invalid("need at least two object classes besides empty".into()));
        }
        if self.num_objects < self.required_object_classes() {
            return Err(Error::Invalid(format!(
                "{} objects cannot cover the {} object classes actions occur at",
                self.num_objects,
                self.required_object_classes()
            )));
        }
        if self.frames == 0 || self.key_frames == 0 {
            return Err(Error::Invalid("frames and key frames must be positive".into()));
        }
        if !(self.obs_noise >= 0.0 && self.obs_noise.is_finite()) {
            return Err(Error::Invalid("observation noise must be finite and >= 0".into()));
        }
        if !(self.prior_sigma > 0.0) {
            return Err(Error::Invalid("prior_sigma must be positive".into()));
        }
        if (0..3).any(|a| self.env_pool[a] == 0 || self.grid.dims[a] % self.env_pool[a] != 0) {
            return Err(Error::Invalid(format!(
                "pool factors {:?} must divide grid dims {:?}",
                self.env_pool, self.grid.dims
            )));
        }
        if self.grid.dims[2] < 2 {
            return Err(Error::Invalid("grid needs at least two layers so actions can sit on objects".into()));
        }
        Ok(())
    }

    pub fn loc_dims(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.grid.dims[a] / self.env_pool[a])
    }

    /// Observation channels: one per action template plus the presence
    /// channel.
    pub fn obs_channels(&self) -> usize {
        self.num_actions + 1
    }

    /// Number of confusable action pairs; actions `2k` and `2k+1` for
    /// `k < pairs` share a template.
    pub fn num_pairs(&self) -> usize {
        ((self.rho * self.num_actions as f64 / 2.0).round() as usize).min(self.num_actions / 2)
    }

    /// Observation template (channel) of an action.
    pub fn template_of(&self, action: usize) -> usize {
        if action < 2 * self.num_pairs() {
            action & !1
        } else {
            action
        }
    }

    /// Object class an action takes place on.
    pub fn object_class_of(&self, action: usize) -> u32 {
        1 + (action % (self.num_classes - 1)) as u32
    }

    fn required_object_classes(&self) -> usize {
        self.num_actions.min(self.num_classes - 1)
    }

    /// Location cells kept clear of presence blobs along each horizontal
    /// border.
    fn loc_margin(&self) -> usize {
        self.cue_radius + 1
    }

    /// Parent voxels kept free of objects along each horizontal border.
    fn border_margin(&self) -> [usize; 2] {
        [self.loc_margin() * self.env_pool[0], self.loc_margin() * self.env_pool[1]]
    }

    /// Smallest horizontal (Chebyshev) distance between blob centres at which
    /// no video feature sees both blobs.
    fn blob_separation(&self) -> usize {
        2 * self.cue_radius + 3
    }

    /// Model configuration matching this generator's grid, observation and
    /// HVR channel layout.
    pub fn model_config(&self, c_phi: usize, c_psi: usize, theta: f64, lambda_kl: f64, variant: Variant) -> ModelConfig {
        ModelConfig {
            loc_dims: self.loc_dims(),
            env_pool: self.env_pool,
            obs_channels: self.obs_channels(),
            env_channels: self.grid.children_per_parent() * self.num_classes,
            c_phi,
            c_psi,
            theta,
            num_actions: self.num_actions,
            lambda_kl,
            variant,
        }
    }

    /// Location prior of a track on the location grid.
    pub fn prior_for(&self, track: &CameraTrack) -> Result<LocationDistribution> {
        let prior = make_prior(track, &self.grid, self.prior_sigma)?;
        downsample_distribution(&prior.dist, self.env_pool)
    }
}

/// Axis-aligned object box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub class: u32,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Placement {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub mesh: SemanticMesh,
    pub placements: Vec<Placement>,
}

/// Generates the world for `config.seed`.
pub fn generate_world(config: &SynthConfig) -> Result<SynthWorld> {
    generate_world_with(config, &mut Rng::new(config.seed).fork(WORLD_STREAM))
}

/// Places `num_objects` boxes on the parent lattice with disjoint, separated
/// footprints and fills each with uniformly sampled labeled vertices.
pub fn generate_world_with(config: &SynthConfig, rng: &mut Rng) -> Result<SynthWorld> {
    config.validate()?;
    let grid = &config.grid;
    let [nx, ny, nz] = grid.dims;
    let margin = config.border_margin();
    let span = [nx.saturating_sub(2 * margin[0]), ny.saturating_sub(2 * margin[1])];
    let size_lo = [(nx / 12).max(1), (ny / 12).max(1)];
    let size_hi = [(nx / 6).max(size_lo[0]), (ny / 6).max(size_lo[1])];

    // Footprints in parent cells: [x0, x1) × [y0, y1), plus height in cells.
    let mut boxes: Vec<([usize; 2], [usize; 2], usize)> = Vec::new();
    let mut attempts = 0;
    while boxes.len() < config.num_objects {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::Placement {
                placed: boxes.len(),
                requested: config.num_objects,
                attempts,
            });
        }
        attempts += 1;
        let size = [
            size_lo[0] + rng.below(size_hi[0] - size_lo[0] + 1),
            size_lo[1] + rng.below(size_hi[1] - size_lo[1] + 1),
        ];
        if size[0] > span[0] || size[1] > span[1] {
            continue;
        }
        let lo = [
            margin[0] + rng.below(span[0] - size[0] + 1),
            margin[1] + rng.below(span[1] - size[1] + 1),
        ];
        let hi = [lo[0] + size[0], lo[1] + size[1]];
        let clear = boxes.iter().all(|(blo, bhi, _)| {
            // at least one empty column between footprints
            lo[0] > bhi[0] || blo[0] > hi[0] || lo[1] > bhi[1] || blo[1] > hi[1]
        });
        if clear {
            boxes.push((lo, hi, 1 + rng.below(nz - 1)));
        }
    }

    let required = config.required_object_classes();
    let mut classes: Vec<u32> = (1..=required as u32).collect();
    rng.shuffle(&mut classes);
    while classes.len() < config.num_objects {
        classes.push(1 + rng.below(config.num_classes - 1) as u32);
    }

    let ps = grid.parent_size();
    let inset: [f64; 3] = std::array::from_fn(|a| 0.01 * ps[a]);
    let mut placements = Vec::with_capacity(boxes.len());
    let mut vertices = Vec::new();
    for ((lo, hi, height), &class) in boxes.iter().zip(&classes) {
        let p = Placement {
            class,
            lo: [
                grid.origin[0] + lo[0] as f64 * ps[0] + inset[0],
                grid.origin[1] + lo[1] as f64 * ps[1] + inset[1],
                grid.origin[2] + inset[2],
            ],
            hi: [
                grid.origin[0] + hi[0] as f64 * ps[0] - inset[0],
                grid.origin[1] + hi[1] as f64 * ps[1] - inset[1],
                grid.origin[2] + *height as f64 * ps[2] - inset[2],
            ],
        };
        let children = (hi[0] - lo[0]) * (hi[1] - lo[1]) * height * grid.children_per_parent();
        let count = MIN_VERTICES_PER_OBJECT.max(2 * children);
        for _ in 0..count {
            let pos = std::array::from_fn(|a| rng.range(p.lo[a], p.hi[a]));
            vertices.push(Vertex { pos, label: class });
        }
        placements.push(p);
    }
    let mesh = SemanticMesh::new(vertices, Vec::new(), config.num_classes)?;
    Ok(SynthWorld { mesh, placements })
}

/// A label sequence with every action equally often (up to the remainder),
/// in random order.
pub fn balanced_labels(count: usize, num_actions: usize, rng: &mut Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..count).map(|i| i % num_actions).collect();
    rng.shuffle(&mut labels);
    labels
}

/// Generates one clip of `action` in `world`. With probability `drop_rate`
/// the camera track is dropped and the prior is uniform.
pub fn generate_episode(
    world: &SynthWorld,
    config: &SynthConfig,
    action: usize,
    drop_rate: f64,
    rng: &mut Rng,
) -> Result<EpisodeClip> {
    if action >= config.num_actions {
        return Err(Error::Invalid(format!("action {action} out of range")));
    }
    let class = config.object_class_of(action);
    let sites: Vec<&Placement> = world.placements.iter().filter(|p| p.class == class).collect();
    if sites.is_empty() {
        return Err(Error::Invalid(format!("world has no object of class {class}")));
    }
    let site = sites[rng.below(sites.len())];
    let grid = &config.grid;
    let ps = grid.parent_size();
    let position = [
        rng.range(site.lo[0], site.hi[0]),
        rng.range(site.lo[1], site.hi[1]),
        site.hi[2] + 0.5 * ps[2],
    ];

    let track = if rng.bernoulli(drop_rate) {
        CameraTrack::default()
    } else {
        // registration jitter stays inside the actor's voxel
        let cell = grid
            .parent_of(position)
            .ok_or_else(|| Error::Invalid("episode position outside the grid".into()))?;
        let frames = (0..config.key_frames)
            .map(|k| KeyFrame {
                frame: (k * 8) as u32,
                position: std::array::from_fn(|a| {
                    let lo = grid.origin[a] + cell[a] as f64 * ps[a];
                    (position[a] + 0.1 * ps[a] * rng.normal()).clamp(lo + 1e-6 * ps[a], lo + (1.0 - 1e-6) * ps[a])
                }),
            })
            .collect();
        CameraTrack::new(frames)?
    };
    let q = config.prior_for(&track)?;
    let actor = loc_column(config, position)?;
    let mut centres = vec![actor];
    for _ in 0..config.decoys {
        let free = decoy_sites(world, config, &centres);
        if free.is_empty() {
            return Err(Error::Invalid("no free floor left for a decoy blob".into()));
        }
        centres.push(free[rng.below(free.len())]);
    }
    let obs = render_observation(config, action, &centres, rng)?;
    Ok(EpisodeClip {
        obs,
        label: action,
        q,
        track,
        true_position: Some(position),
    })
}

fn loc_column(config: &SynthConfig, position: [f64; 3]) -> Result<[usize; 2]> {
    let parent = config
        .grid
        .parent_of(position)
        .ok_or_else(|| Error::Invalid("episode position outside the grid".into()))?;
    Ok([parent[0] / config.env_pool[0], parent[1] / config.env_pool[1]])
}

/// Location columns away from the border, clear of every object footprint,
/// and far enough from every existing blob centre.
fn decoy_sites(world: &SynthWorld, config: &SynthConfig, taken: &[[usize; 2]]) -> Vec<[usize; 2]> {
    let dims = config.loc_dims();
    let m = config.loc_margin();
    let sep = config.blob_separation();
    let g = &config.grid;
    let ps = g.parent_size();
    let mut out = Vec::new();
    for x in m..dims[0].saturating_sub(m) {
        for y in m..dims[1].saturating_sub(m) {
            if taken.iter().any(|c| c[0].abs_diff(x).max(c[1].abs_diff(y)) < sep) {
                continue;
            }
            let lo = [
                g.origin[0] + (x * config.env_pool[0]) as f64 * ps[0],
                g.origin[1] + (y * config.env_pool[1]) as f64 * ps[1],
            ];
            let hi = [
                lo[0] + config.env_pool[0] as f64 * ps[0],
                lo[1] + config.env_pool[1] as f64 * ps[1],
            ];
            let covered = world
                .placements
                .iter()
                .any(|p| p.lo[0] < hi[0] && lo[0] < p.hi[0] && p.lo[1] < hi[1] && lo[1] < p.hi[1]);
            if !covered {
                out.push([x, y]);
            }
        }
    }
    out
}

/// T frames of the action's template plus presence blobs at `centres`
/// (actor first, then decoys), constant along height, each frame with
/// independent Gaussian noise.
fn render_observation(config: &SynthConfig, action: usize, centres: &[[usize; 2]], rng: &mut Rng) -> Result<Tensor> {
    let dims = config.loc_dims();
    let channels = config.obs_channels();
    let template = config.template_of(action);
    let radius = config.cue_radius as i64;
    let b2 = (0.5 * radius.max(1) as f64).powi(2) * 2.0;

    let cells = dims.iter().product::<usize>();
    let presence = channels - 1;
    let mut base = vec![0.0; cells * channels];
    for cell in 0..cells {
        base[cell * channels + template] = 1.0;
    }
    for centre in centres {
        for dx in -radius..=radius {
            for dy in -radius..=radius {
                let (x, y) = (centre[0] as i64 + dx, centre[1] as i64 + dy);
                if x < 0 || y < 0 || x >= dims[0] as i64 || y >= dims[1] as i64 {
                    continue;
                }
                let v = (-((dx * dx + dy * dy) as f64) / b2).exp();
                for z in 0..dims[2] {
                    base[flat(dims, [x as usize, y as usize, z]) * channels + presence] = v;
                }
            }
        }
    }
    let mut data = Vec::with_capacity(config.frames * base.len());
    for _ in 0..config.frames {
        data.extend(base.iter().map(|&v| v + config.obs_noise * rng.normal()));
    }
    Tensor::new(vec![config.frames, dims[0], dims[1], dims[2], channels], data)
}

/// Train/test episodes with their worlds and HVR descriptors.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Vec<EpisodeClip>,
    pub test: Vec<EpisodeClip>,
    pub world: SynthWorld,
    /// Present in unseen mode only.
    pub test_world: Option<SynthWorld>,
    pub env: EnvDescriptor,
    pub test_env: EnvDescriptor,
}

pub fn generate_split(config: &SynthConfig) -> Result<SplitData> {
    config.validate()?;
    let root = Rng::new(config.seed);
    let world = generate_world_with(config, &mut root.fork(WORLD_STREAM))?;
    let test_world = match config.split {
        SplitMode::Seen => None,
        SplitMode::Unseen => Some(generate_world_with(config, &mut root.fork(TEST_WORLD_STREAM))?),
    };
    let env = build_hvr(&world.mesh, &config.grid)?;
    let test_env = match &test_world {
        Some(w) => build_hvr(&w.mesh, &config.grid)?,
        None => env.clone(),
    };
    let episodes = |w: &SynthWorld, count: usize, drop: f64, stream: u64| -> Result<Vec<EpisodeClip>> {
        let mut rng = root.fork(stream);
        balanced_labels(count, config.num_actions, &mut rng)
            .into_iter()
            .enumerate()
            .map(|(i, y)| generate_episode(w, config, y, drop, &mut rng.fork(i as u64)))
            .collect()
    };
    let train = episodes(&world, config.train_episodes, config.p_drop, TRAIN_STREAM)?;
    let test = episodes(test_world.as_ref().unwrap_or(&world), config.test_episodes, 0.0, TEST_STREAM)?;
    Ok(SplitData {
        train,
        test,
        world,
        test_world,
        env,
        test_env,
    })
}

/// Serializes episodes as concatenated records: an `episode N=<n>` header, a
/// `label` line, the camera track, a `pos` line, then an `obs` line followed
/// by a binary `ENVD` block holding the observation tensor.
pub fn encode_episodes(episodes: &[EpisodeClip], num_actions: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for ep in episodes {
        let mut text = format!("episode N={num_actions}\nlabel {}\n", ep.label);
        text.push_str(&write_track(&ep.track));
        match ep.true_position {
            Some(p) => text.push_str(&format!("pos {:?} {:?} {:?}\n", p[0], p[1], p[2])),
            None => text.push_str("pos none\n"),
        }
        text.push_str("obs\n");
        out.extend_from_slice(text.as_bytes());
        let mut w = Writer::new();
        write_block(&mut w, OBS_KIND, &ep.obs.dims, &ep.obs.data);
        out.extend(w.finish());
        out.push(b'\n');
    }
    out
}

/// Parses [`encode_episodes`] output, rebuilding each prior from its track.
pub fn decode_episodes(bytes: &[u8], config: &SynthConfig) -> Result<Vec<EpisodeClip>> {
    let mut episodes = Vec::new();
    let mut pos = 0;
    let mut lineno = 0;
    let mut next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let rest = &bytes[*pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: "unterminated line".into(),
        })?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: "line is not UTF-8".into(),
        })?;
        *pos += end + 1;
        lineno += 1;
        Ok((lineno, line.trim().to_string()))
    };
    let bad = |line: usize, msg: String| Error::Parse { line, msg };

    while pos < bytes.len() {
        let (ln, header) = next_line(&mut pos)?;
        let n = header
            .strip_prefix("episode N=")
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| bad(ln, format!("expected `episode N=<int>`, found {header:?}")))?;
        if n != config.num_actions {
            return Err(bad(ln, format!("file has N={n}, config has {}", config.num_actions)));
        }
        let (ln, label_line) = next_line(&mut pos)?;
        let label = label_line
            .strip_prefix("label ")
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&y| y < n)
            .ok_or_else(|| bad(ln, format!("bad label line {label_line:?}")))?;

        let mut track_text = String::new();
        let position = loop {
            let (ln, line) = next_line(&mut pos)?;
            if let Some(rest) = line.strip_prefix("pos ") {
                if rest == "none" {
                    break None;
                }
                let v: Vec<f64> = rest
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad(ln, format!("bad position {rest:?}")))?;
                if v.len() != 3 {
                    return Err(bad(ln, "position needs three coordinates".into()));
                }
                break Some([v[0], v[1], v[2]]);
            }
            track_text.push_str(&line);
            track_text.push('\n');
        };
        let track = parse_track(std::io::Cursor::new(track_text.as_bytes()))?;

        let (ln, line) = next_line(&mut pos)?;
        if line != "obs" {
            return Err(bad(ln, format!("expected `obs`, found {line:?}")));
        }
        let mut r = Reader::new(&bytes[pos..]);
        let block = read_block(&mut r)?;
        pos += r.position();
        if block.kind != OBS_KIND || block.dims.len() != 5 {
            return Err(Error::Format("observation block must be a rank-5 obs tensor".into()));
        }
        if bytes.get(pos) != Some(&b'\n') {
            return Err(Error::Format("missing record terminator after observation".into()));
        }
        pos += 1;
        episodes.push(EpisodeClip {
            obs: Tensor::new(block.dims, block.values)?,
            label,
            q: config.prior_for(&track)?,
            track,
            true_position: position,
        });
    }
    Ok(episodes)
}

pub const CONFIG_FILE: &str = "synth.json";
pub const TRAIN_FILE: &str = "train.episodes";
pub const TEST_FILE: &str = "test.episodes";
pub const WORLD_FILE: &str = "world.mesh";
pub const TEST_WORLD_FILE: &str = "test_world.mesh";
pub const ENV_FILE: &str = "env.envd";
pub const TEST_ENV_FILE: &str = "test_env.envd";

/// Writes a generated split into `dir`, creating it if needed.
pub fn save_split(dir: &Path, config: &SynthConfig, split: &SplitData) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(config)? + "\n")?;
    fs::write(dir.join(WORLD_FILE), write_mesh(&split.world.mesh))?;
    fs::write(dir.join(ENV_FILE), encode_descriptor(&split.env))?;
    if let Some(w) = &split.test_world {
        fs::write(dir.join(TEST_WORLD_FILE), write_mesh(&w.mesh))?;
        fs::write(dir.join(TEST_ENV_FILE), encode_descriptor(&split.test_env))?;
    }
    fs::write(dir.join(TRAIN_FILE), encode_episodes(&split.train, config.num_actions))?;
    fs::write(dir.join(TEST_FILE), encode_episodes(&split.test, config.num_actions))?;
    Ok(())
}

/// A split read back from disk. Worlds are not needed downstream and are not
/// reloaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SynthConfig,
    pub train: Vec<EpisodeClip>,
    pub test: Vec<EpisodeClip>,
    pub env: EnvDescriptor,
    pub test_env: EnvDescriptor,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let config: SynthConfig = serde_json::from_slice(&fs::read(dir.join(CONFIG_FILE))?)?;
    config.validate()?;
    let decode_env = |name: &str| -> Result<EnvDescriptor> {
        decode_descriptor(&fs::read(dir.join(name))?, config.grid, config.num_classes)
    };
    let env = decode_env(ENV_FILE)?;
    let test_env = if dir.join(TEST_ENV_FILE).exists() {
        decode_env(TEST_ENV_FILE)?
    } else {
        env.clone()
    };
    let train = decode_episodes(&fs::read(dir.join(TRAIN_FILE))?, &config)?;
    let test = decode_episodes(&fs::read(dir.join(TEST_FILE))?, &config)?;
    Ok(Dataset {
        config,
        train,
        test,
        env,
        test_env,
    })
}

/// Reads a mesh written by [`save_split`].
pub fn load_world_mesh(path: &Path) -> Result<SemanticMesh> {
    let text = fs::read_to_string(path)?;
    parse_mesh_str(&text)
}
