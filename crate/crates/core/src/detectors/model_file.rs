//! Model file layout (little-endian):
//!
//! ```text
//! magic "KPCM", version u16, method u8
//! seed u64, feature_dim u64, n_train u64
//! then, each behind a presence byte (0 or 1):
//!   clip        percentile f64, thresholds (u64 length + f64s)
//!   temperature f64
//!   map         kind u8 and payload, then the kernel block
//!   landmarks   u64 length + u64 training-row indices
//!   subspace    mean, projection, spectrum, q, evr, residual flag
//!   knn bank    rows u64, cols u64, f64s
//! ```

use std::path::Path;

use super::{ClipThresholds, DetectorModel, Method};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::maps::ApproxMap;
use crate::subspace::SubspaceModel;

pub const MODEL_MAGIC: &[u8; 4] = b"KPCM";
pub const MODEL_VERSION: u16 = 1;

fn optional<T>(w: &mut ByteWriter, value: Option<&T>, mut write: impl FnMut(&mut ByteWriter, &T)) {
    match value {
        Some(v) => {
            w.u8(1);
            write(w, v);
        }
        None => w.u8(0),
    }
}

fn read_optional<'a, T>(
    r: &mut ByteReader<'a>,
    what: &str,
    read: impl FnOnce(&mut ByteReader<'a>) -> Result<T>,
) -> Result<Option<T>> {
    match r.u8()? {
        0 => Ok(None),
        1 => read(r).map(Some),
        other => Err(Error::Format(format!("bad presence flag {other} for {what}"))),
    }
}

pub fn encode_model(model: &DetectorModel) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MODEL_MAGIC);
    w.u16(MODEL_VERSION);
    w.u8(model.method.code());
    w.u64(model.seed);
    w.usize(model.feature_dim);
    w.usize(model.n_train);
    optional(&mut w, model.clip.as_ref(), |w, c| {
        w.f64(c.percentile);
        w.f64s(&c.thresholds);
    });
    optional(&mut w, model.temperature.as_ref(), |w, t| w.f64(*t));
    optional(&mut w, model.map.as_ref(), |w, m| m.write_to(w));
    optional(&mut w, model.landmark_indices.as_ref(), |w, idx| w.usizes(idx));
    optional(&mut w, model.subspace.as_ref(), |w, s| s.write_to(w));
    optional(&mut w, model.knn_bank.as_ref(), |w, b| w.matrix(b));
    w.into_bytes()
}

pub fn decode_model(bytes: &[u8]) -> Result<DetectorModel> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let method = Method::from_code(r.u8()?)?;
    let seed = r.u64()?;
    let feature_dim = r.usize()?;
    let n_train = r.usize()?;
    let clip = read_optional(&mut r, "clip thresholds", |r| {
        Ok(ClipThresholds {
            percentile: r.f64()?,
            thresholds: r.f64s()?,
        })
    })?;
    let temperature = read_optional(&mut r, "temperature", |r| r.f64())?;
    let map = read_optional(&mut r, "map", ApproxMap::read_from)?;
    let landmark_indices = read_optional(&mut r, "landmarks", |r| r.usizes())?;
    let subspace = read_optional(&mut r, "subspace", SubspaceModel::read_from)?;
    let knn_bank = read_optional(&mut r, "neighbour bank", |r| r.matrix())?;
    r.finish()?;
    let model = DetectorModel {
        method,
        seed,
        feature_dim,
        n_train,
        clip,
        temperature,
        map,
        landmark_indices,
        subspace,
        knn_bank,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &DetectorModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<DetectorModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| e.context(path.display().to_string()))
}
