//! Labeled vertex clouds and their line-oriented text format.
//!
//! ```text
//! mesh C=4
//! # comment
//! v 0.1 0.2 0.3 2
//! f 0 1 2
//! ```

use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub pos: [f64; 3],
    pub label: u32,
}

/// A mesh whose vertices carry object-class labels. Class 0 is reserved for
/// empty space and never appears on a vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMesh {
    pub vertices: Vec<Vertex>,
    pub faces: Vec<[usize; 3]>,
    pub num_classes: usize,
}

impl SemanticMesh {
    pub fn new(vertices: Vec<Vertex>, faces: Vec<[usize; 3]>, num_classes: usize) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            num_classes,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Invalid(format!(
                "num_classes must be >= 2 (class 0 is empty), got {}",
                self.num_classes
            )));
        }
        if self.vertices.is_empty() {
            return Err(Error::Invalid("mesh has zero vertices".into()));
        }
        for (i, v) in self.vertices.iter().enumerate() {
            check_label(v.label, self.num_classes).map_err(|msg| Error::Invalid(format!("vertex {i}: {msg}")))?;
            if v.pos.iter().any(|c| !c.is_finite()) {
                return Err(Error::Invalid(format!("vertex {i}: non-finite coordinate")));
            }
        }
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&k| k >= self.vertices.len()) {
                return Err(Error::Invalid(format!("face {i}: vertex index out of range")));
            }
        }
        Ok(())
    }

    pub fn translated(&self, offset: [f64; 3]) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|v| Vertex {
                pos: std::array::from_fn(|a| v.pos[a] + offset[a]),
                label: v.label,
            })
            .collect();
        Self {
            vertices,
            faces: self.faces.clone(),
            num_classes: self.num_classes,
        }
    }
}

fn check_label(label: u32, num_classes: usize) -> std::result::Result<(), String> {
    if label == 0 {
        return Err("label 0 is reserved for empty space".into());
    }
    if label as usize >= num_classes {
        return Err(format!("label {label} out of range [1, {num_classes})"));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} from {tok:?}"),
    })
}

/// Parses the text mesh format. The `mesh C=<int>` header must precede any
/// vertex or face record.
pub fn parse_mesh<R: BufRead>(reader: R) -> Result<SemanticMesh> {
    let mut num_classes: Option<usize> = None;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        let kind = toks.next().unwrap();
        match kind {
            "mesh" => {
                if num_classes.is_some() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "duplicate mesh header".into(),
                    });
                }
                let tok = toks.next().ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: "missing C=<int>".into(),
                })?;
                let c = tok.strip_prefix("C=").ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!("expected C=<int>, got {tok:?}"),
                })?;
                let c: usize = parse_field(Some(c), lineno, "class count")?;
                if c < 2 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("class count must be >= 2, got {c}"),
                    });
                }
                num_classes = Some(c);
            }
            "v" | "f" => {
                let c = num_classes.ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: "record before mesh header".into(),
                })?;
                if kind == "v" {
                    let x: f64 = parse_field(toks.next(), lineno, "x")?;
                    let y: f64 = parse_field(toks.next(), lineno, "y")?;
                    let z: f64 = parse_field(toks.next(), lineno, "z")?;
                    let label: u32 = parse_field(toks.next(), lineno, "label")?;
                    if ![x, y, z].iter().all(|v| v.is_finite()) {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: "non-finite coordinate".into(),
                        });
                    }
                    check_label(label, c).map_err(|msg| Error::Parse { line: lineno, msg })?;
                    vertices.push(Vertex { pos: [x, y, z], label });
                } else {
                    let i: usize = parse_field(toks.next(), lineno, "vertex index")?;
                    let j: usize = parse_field(toks.next(), lineno, "vertex index")?;
                    let k: usize = parse_field(toks.next(), lineno, "vertex index")?;
                    faces.push([i, j, k]);
                }
                if let Some(extra) = toks.next() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unexpected trailing token {extra:?}"),
                    });
                }
            }
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("unknown record type {other:?}"),
                })
            }
        }
    }

    let num_classes = num_classes.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "missing mesh header".into(),
    })?;
    SemanticMesh::new(vertices, faces, num_classes)
}

pub fn parse_mesh_str(text: &str) -> Result<SemanticMesh> {
    parse_mesh(text.as_bytes())
}

/// Serializes a mesh. Coordinates use Rust's shortest round-trip float
/// formatting so `parse_mesh(write_mesh(m)) == m`.
pub fn write_mesh(mesh: &SemanticMesh) -> String {
    let mut out = String::new();
    writeln!(out, "mesh C={}", mesh.num_classes).unwrap();
    for v in &mesh.vertices {
        writeln!(out, "v {:?} {:?} {:?} {}", v.pos[0], v.pos[1], v.pos[2], v.label).unwrap();
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    out
}
