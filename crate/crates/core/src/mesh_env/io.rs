//! `ENVD` binary descriptor files: magic, u8 kind, u32 rank, u32 dims, then
//! little-endian f64 values.

use super::descriptor::{DescriptorKind, EnvDescriptor};
use crate::binfmt::{read_dims, Reader, Writer};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const MAGIC: &[u8; 4] = b"ENVD";

/// Kind byte used when the block carries an observation tensor instead of a
/// descriptor.
pub const OBS_KIND: u8 = 0xFF;

/// A decoded `ENVD` block before it is attached to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBlock {
    pub kind: u8,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn write_block(w: &mut Writer, kind: u8, dims: &[usize], values: &[f64]) {
    debug_assert_eq!(dims.iter().product::<usize>(), values.len());
    w.bytes(MAGIC).u8(kind).len_u32(dims.len());
    for &d in dims {
        w.len_u32(d);
    }
    w.f64s(values);
}

pub fn read_block(r: &mut Reader<'_>) -> Result<RawBlock> {
    r.magic(MAGIC)?;
    let kind = r.u8()?;
    let rank = r.u32()? as usize;
    let (dims, count) = read_dims(r, rank)?;
    let values = r.f64s(count)?;
    Ok(RawBlock { kind, dims, values })
}

pub fn encode_descriptor(d: &EnvDescriptor) -> Vec<u8> {
    let mut w = Writer::new();
    write_block(&mut w, d.kind.code(), &d.dims, &d.data);
    w.finish()
}

/// Decodes a descriptor file. The format carries no grid geometry or class
/// count, so both come from the caller.
pub fn decode_descriptor(bytes: &[u8], grid: GridSpec, num_classes: usize) -> Result<EnvDescriptor> {
    let mut r = Reader::new(bytes);
    let block = read_block(&mut r)?;
    r.finish()?;
    let kind = DescriptorKind::from_code(block.kind)
        .ok_or_else(|| Error::Format(format!("unknown descriptor kind {}", block.kind)))?;
    EnvDescriptor::from_raw(grid, kind, num_classes, block.dims, block.values)
}
