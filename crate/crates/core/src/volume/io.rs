//! Native volume format: `<name>.json` header plus `<name>.raw` little-endian
//! payload, and import of multi-page 16-bit TIFF stacks.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dims, Origin, Pitch, Volume};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub pitch_um: [f64; 3],
    pub dtype: Dtype,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
}

fn stem_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = base.clone().into_os_string();
    json.push(".json");
    let mut raw = base.into_os_string();
    raw.push(".raw");
    (PathBuf::from(json), PathBuf::from(raw))
}

/// Writes `v` as a 32-bit float payload. `path` may name the header, the
/// payload, or the common stem.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    save_volume_as(v, path, Dtype::F32)
}

pub fn save_volume_as(v: &Volume, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let (json_path, raw_path) = stem_paths(path.as_ref());
    let d = v.dims();
    let header = VolumeHeader {
        dims: d.as_array(),
        pitch_um: v.pitch().as_array(),
        dtype,
        order: "little".into(),
        origin: Some(v.origin()),
    };
    let mut payload = Vec::with_capacity(v.len() * dtype.width());
    match dtype {
        Dtype::F32 => {
            for &s in v.as_slice() {
                payload.extend_from_slice(&(s as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &s in v.as_slice() {
                payload.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let (json_path, raw_path) = stem_paths(path.as_ref());
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let malformed = |reason: String| Error::MalformedHeader {
        path: json_path.clone(),
        reason,
    };
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if header.order != "little" {
        return Err(malformed(format!("unsupported byte order {:?}", header.order)));
    }
    let dims = Dims::from(header.dims);
    dims.validate().map_err(|e| malformed(e.to_string()))?;
    let [px, py, pz] = header.pitch_um;
    let pitch = Pitch::new(px, py, pz).map_err(|e| malformed(e.to_string()))?;
    let n = dims.len();
    let expected = n
        .checked_mul(header.dtype.width())
        .ok_or_else(|| malformed("dims overflow".into()))?;

    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    if bytes.len() != expected {
        return Err(Error::TruncatedPayload {
            path: raw_path,
            expected,
            found: bytes.len(),
        });
    }
    let data: Vec<f64> = match header.dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    Ok(Volume::from_vec(dims, data)?
        .with_pitch(pitch)
        .with_origin(header.origin.unwrap_or_default()))
}

/// Reads a multi-page, single-channel, 16-bit unsigned TIFF; page `k` becomes
/// z-plane `k`.
pub fn import_tiff_stack(path: impl AsRef<Path>, pitch: Pitch) -> Result<Volume> {
    use tiff::decoder::{Decoder, DecodingResult};
    use tiff::ColorType;

    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let terr = |e: tiff::TiffError| Error::Tiff(format!("{}: {e}", path.display()));
    let mut decoder = Decoder::new(BufReader::new(file)).map_err(terr)?;

    let mut planes: Vec<Vec<f64>> = Vec::new();
    let mut size: Option<(u32, u32)> = None;
    loop {
        let (w, h) = decoder.dimensions().map_err(terr)?;
        match size {
            None => size = Some((w, h)),
            Some(s) if s != (w, h) => {
                return Err(Error::Tiff(format!(
                    "page {} is {w}x{h}, expected {}x{}",
                    planes.len(),
                    s.0,
                    s.1
                )))
            }
            _ => {}
        }
        let color = decoder.colortype().map_err(terr)?;
        if color != ColorType::Gray(16) {
            return Err(Error::Tiff(format!("expected 16-bit grayscale, got {color:?}")));
        }
        match decoder.read_image().map_err(terr)? {
            DecodingResult::U16(buf) => planes.push(buf.into_iter().map(f64::from).collect()),
            _ => return Err(Error::Tiff("unexpected sample format".into())),
        }
        if !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(terr)?;
    }

    let (w, h) = size.expect("at least one page");
    let dims = Dims::new(w as usize, h as usize, planes.len())?;
    let data = planes.concat();
    Ok(Volume::from_vec(dims, data)?.with_pitch(pitch))
}
