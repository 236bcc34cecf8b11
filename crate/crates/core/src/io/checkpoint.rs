//! `AVSC` model checkpoints.
//!
//! ```text
//! "AVSC" | u8 version=1 | u32 d | u32 heads
//! u32 n_video + n_video × (u16 len + name | u32 dim)
//! u32 n_text  + n_text  × (u16 len + name | u32 dim)
//! u64 n_params | n_params × f64
//! ```
//! Parameters follow [`LaffModel::params`] order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::bytes::{put_string, Reader};
use crate::laff::{LaffModel, SpaceSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVSC";
pub const CHECKPOINT_VERSION: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{what} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &LaffModel) -> Result<Vec<u8>> {
    let params = model.params();
    let mut out = Vec::with_capacity(64 + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    put_u32(&mut out, model.d(), "d")?;
    put_u32(&mut out, model.num_heads(), "head count")?;
    for spaces in [model.video_spaces(), model.text_spaces()] {
        put_u32(&mut out, spaces.len(), "space count")?;
        for s in spaces {
            put_string(&mut out, &s.name, "space name")?;
            put_u32(&mut out, s.dim, "space dimension")?;
        }
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

fn read_spaces(r: &mut Reader<'_>, what: &str) -> Result<Vec<SpaceSpec>> {
    let n = r.u32(what)?;
    (0..n)
        .map(|_| {
            let name = r.string("space name")?;
            let at = r.offset();
            let dim = r.u32("space dimension")? as usize;
            if dim == 0 {
                return Err(r.error(at, format!("space `{name}` has dimension 0")));
            }
            Ok(SpaceSpec::new(name, dim))
        })
        .collect()
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<LaffModel> {
    let mut r = Reader::new(path, bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let shape_at = r.offset();
    let d = r.u32("d")? as usize;
    let h = r.u32("head count")? as usize;
    let video = read_spaces(&mut r, "video space count")?;
    let text = read_spaces(&mut r, "text space count")?;
    let mut model =
        LaffModel::new(&video, &text, d, h, 0).map_err(|e| r.error(shape_at, format!("invalid shape: {e}")))?;
    if model.video_spaces() != video.as_slice() || model.text_spaces() != text.as_slice() {
        return Err(r.error(shape_at, "space lists are not sorted and unique"));
    }
    let count_at = r.offset();
    let n = r.u64("parameter count")?;
    if n != model.num_params() as u64 {
        return Err(r.error(
            count_at,
            format!("{n} parameters stored, shape implies {}", model.num_params()),
        ));
    }
    let raw = r.take(8 * model.num_params(), "parameters")?;
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    r.finish()?;
    model.set_params(&params)?;
    Ok(model)
}

pub fn save_checkpoint(model: &LaffModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<LaffModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}
