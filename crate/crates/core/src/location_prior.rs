//! Location distributions over the parent grid and the camera-pose prior
//! used to supervise them.

use std::fmt::Write as _;
use std::io::BufRead;

use crate::binfmt::{read_dims, Reader, Writer};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const LOCD_MAGIC: &[u8; 4] = b"LOCD";

/// Default Gaussian width, in parent voxels.
pub const DEFAULT_SIGMA: f64 = 1.0;

/// A probability distribution over a W×D×H grid, stored row-major with the
/// last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationDistribution {
    pub dims: [usize; 3],
    pub probs: Vec<f64>,
}

impl LocationDistribution {
    pub fn new(dims: [usize; 3], probs: Vec<f64>) -> Result<Self> {
        if probs.len() != dims.iter().product::<usize>() || probs.is_empty() {
            return Err(Error::Shape(format!(
                "{} values for location dims {dims:?}",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Invalid("location probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("location probabilities sum to {total}")));
        }
        Ok(Self { dims, probs })
    }

    pub fn uniform(dims: [usize; 3]) -> Self {
        let n: usize = dims.iter().product();
        Self {
            dims,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn one_hot(dims: [usize; 3], cell: [usize; 3]) -> Self {
        let mut probs = vec![0.0; dims.iter().product()];
        probs[flat(dims, cell)] = 1.0;
        Self { dims, probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Index of the most probable cell (first on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        unflatten(self.dims, idx)
    }
}

pub fn flat(dims: [usize; 3], c: [usize; 3]) -> usize {
    (c[0] * dims[1] + c[1]) * dims[2] + c[2]
}

pub fn unflatten(dims: [usize; 3], idx: usize) -> [usize; 3] {
    [idx / (dims[1] * dims[2]), (idx / dims[2]) % dims[1], idx % dims[2]]
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyFrame {
    pub frame: u32,
    pub position: [f64; 3],
}

/// Registered key-frame camera positions of one clip. May be empty when
/// registration failed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraTrack {
    pub key_frames: Vec<KeyFrame>,
}

impl CameraTrack {
    pub fn new(key_frames: Vec<KeyFrame>) -> Result<Self> {
        for w in key_frames.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(Error::Invalid(format!(
                    "key frame indices must increase strictly ({} then {})",
                    w[0].frame, w[1].frame
                )));
            }
        }
        if key_frames.iter().any(|k| k.position.iter().any(|c| !c.is_finite())) {
            return Err(Error::Invalid("key frame position is not finite".into()));
        }
        Ok(Self { key_frames })
    }

    pub fn is_empty(&self) -> bool {
        self.key_frames.is_empty()
    }
}

/// Result of [`make_prior`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub dist: LocationDistribution,
    /// Key frames dropped because they fell outside the grid.
    pub skipped: usize,
    /// True when the track had key frames but all were skipped.
    pub uniform_fallback: bool,
}

/// Builds the location prior for a clip: key-frame voxels are averaged into a
/// single map, smoothed by a truncated isotropic Gaussian with zero padding,
/// and renormalized once. An empty track gives the uniform distribution.
pub fn make_prior(track: &CameraTrack, grid: &GridSpec, sigma: f64) -> Result<Prior> {
    grid.validate()?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    let dims = grid.dims;
    let cells: Vec<[usize; 3]> = track
        .key_frames
        .iter()
        .filter_map(|k| grid.parent_of(k.position))
        .collect();
    let skipped = track.key_frames.len() - cells.len();
    if cells.is_empty() {
        return Ok(Prior {
            dist: LocationDistribution::uniform(dims),
            skipped,
            uniform_fallback: !track.is_empty(),
        });
    }

    let weight = 1.0 / cells.len() as f64;
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel = gaussian_offsets(sigma, radius);
    let mut probs = vec![0.0; grid.num_parents()];
    for c in &cells {
        for &(off, k) in &kernel {
            let Some(t) = offset_cell(dims, *c, off) else { continue };
            probs[flat(dims, t)] += weight * k;
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(Prior {
        dist: LocationDistribution { dims, probs },
        skipped,
        uniform_fallback: false,
    })
}

/// Kernel taps within the sphere of the given radius, unnormalized.
fn gaussian_offsets(sigma: f64, radius: i64) -> Vec<([i64; 3], f64)> {
    let mut taps = Vec::new();
    let r2 = radius * radius;
    for dx in -radius..=radius {
        for dy in -radius..=radius {
            for dz in -radius..=radius {
                let d2 = dx * dx + dy * dy + dz * dz;
                if d2 <= r2 {
                    taps.push(([dx, dy, dz], (-(d2 as f64) / (2.0 * sigma * sigma)).exp()));
                }
            }
        }
    }
    taps
}

fn offset_cell(dims: [usize; 3], c: [usize; 3], off: [i64; 3]) -> Option<[usize; 3]> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let v = c[a] as i64 + off[a];
        if v < 0 || v >= dims[a] as i64 {
            return None;
        }
        out[a] = v as usize;
    }
    Some(out)
}

/// Sum-pools a distribution over non-overlapping blocks.
pub fn downsample_distribution(d: &LocationDistribution, factors: [usize; 3]) -> Result<LocationDistribution> {
    let probs = sum_pool(&d.probs, d.dims, factors)?;
    let dims = std::array::from_fn(|a| d.dims[a] / factors[a]);
    Ok(LocationDistribution { dims, probs })
}

/// Sum-pools a W×D×H grid of values by integer factors.
pub fn sum_pool(values: &[f64], dims: [usize; 3], factors: [usize; 3]) -> Result<Vec<f64>> {
    for a in 0..3 {
        if factors[a] == 0 || dims[a] % factors[a] != 0 {
            return Err(Error::Shape(format!(
                "pool factors {factors:?} do not divide dims {dims:?}"
            )));
        }
    }
    let out_dims: [usize; 3] = std::array::from_fn(|a| dims[a] / factors[a]);
    let mut out = vec![0.0; out_dims.iter().product()];
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let o = flat(out_dims, [x / factors[0], y / factors[1], z / factors[2]]);
                out[o] += values[flat(dims, [x, y, z])];
            }
        }
    }
    Ok(out)
}

pub fn parse_track<R: BufRead>(reader: R) -> Result<CameraTrack> {
    let mut seen_header = false;
    let mut frames = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match toks[0] {
            "track" if toks.len() == 1 && !seen_header => seen_header = true,
            "k" if seen_header => {
                if toks.len() != 5 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "expected `k <frame> <x> <y> <z>`".into(),
                    });
                }
                let frame = toks[1].parse::<u32>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad frame index {:?}", toks[1]),
                })?;
                let mut position = [0.0; 3];
                for a in 0..3 {
                    position[a] = toks[2 + a].parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad coordinate {:?}", toks[2 + a]),
                    })?;
                }
                if let Some(last) = frames.last().map(|k: &KeyFrame| k.frame) {
                    if frame <= last {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: format!("frame {frame} does not follow {last}"),
                        });
                    }
                }
                if position.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "non-finite coordinate".into(),
                    });
                }
                frames.push(KeyFrame { frame, position });
            }
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("unexpected record {other:?}"),
                })
            }
        }
    }
    if !seen_header {
        return Err(Error::Parse {
            line: 0,
            msg: "missing track header".into(),
        });
    }
    CameraTrack::new(frames)
}

pub fn write_track(track: &CameraTrack) -> String {
    let mut out = String::from("track\n");
    for k in &track.key_frames {
        let p = k.position;
        writeln!(out, "k {} {:?} {:?} {:?}", k.frame, p[0], p[1], p[2]).unwrap();
    }
    out
}

pub fn encode_locd(d: &LocationDistribution) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(LOCD_MAGIC);
    for &n in &d.dims {
        w.len_u32(n);
    }
    w.f64s(&d.probs);
    w.finish()
}

pub fn decode_locd(bytes: &[u8]) -> Result<LocationDistribution> {
    let mut r = Reader::new(bytes);
    r.magic(LOCD_MAGIC)?;
    let (dims, count) = read_dims(&mut r, 3)?;
    let probs = r.f64s(count)?;
    r.finish()?;
    LocationDistribution::new([dims[0], dims[1], dims[2]], probs)
}
