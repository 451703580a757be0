use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Row-major 2D image: `data[r * width + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2d {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image2d {
    pub fn get(&self, c: usize, r: usize) -> f64 {
        self.data[r * self.width + c]
    }

    /// Min-max normalised 8-bit samples. A constant image maps to all zeros.
    pub fn to_u8(&self) -> Vec<u8> {
        let lo = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        self.data
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let to_io = |e: png::EncodingError| {
            Error::io(path, std::io::Error::other(e.to_string()))
        };
        let mut writer = enc.write_header().map_err(to_io)?;
        writer.write_image_data(&self.to_u8()).map_err(to_io)?;
        writer.finish().map_err(to_io)?;
        Ok(())
    }
}

/// Maximum intensity projection along `axis`.
///
/// The projected image keeps the remaining axes in (x, y, z) order: projecting
/// along z gives an `nx × ny` image, along y `nx × nz`, along x `ny × nz`.
pub fn mip(v: &Volume, axis: Axis) -> Image2d {
    let d = v.dims();
    let (width, height) = match axis {
        Axis::Z => (d.nx, d.ny),
        Axis::Y => (d.nx, d.nz),
        Axis::X => (d.ny, d.nz),
    };
    let mut data = vec![f64::NEG_INFINITY; width * height];
    for k in 0..d.nz {
        for j in 0..d.ny {
            for i in 0..d.nx {
                let (c, r) = match axis {
                    Axis::Z => (i, j),
                    Axis::Y => (i, k),
                    Axis::X => (j, k),
                };
                let slot = &mut data[r * width + c];
                *slot = slot.max(v.get(i, j, k));
            }
        }
    }
    Image2d {
        width,
        height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_volume_projects_to_constant() {
        let v = Volume::filled(Dims::new(3, 4, 5).unwrap(), 2.5);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let img = mip(&v, axis);
            assert!(img.data.iter().all(|&p| p == 2.5));
            assert!(img.to_u8().iter().all(|&p| p == 0));
        }
    }

    #[test]
    fn hot_voxel_projects_to_hot_pixel() {
        let d = Dims::new(5, 6, 7).unwrap();
        let mut v = Volume::zeros(d);
        v.set(1, 4, 2, 9.0);
        let z = mip(&v, Axis::Z);
        assert_eq!((z.width, z.height), (5, 6));
        assert_eq!(z.get(1, 4), 9.0);
        assert_eq!(z.data.iter().filter(|&&p| p > 0.0).count(), 1);
        assert_eq!(mip(&v, Axis::Y).get(1, 2), 9.0);
        assert_eq!(mip(&v, Axis::X).get(4, 2), 9.0);
        let bytes = z.to_u8();
        assert_eq!(bytes[4 * 5 + 1], 255);
    }

    #[test]
    fn z_projection_matches_column_max() {
        let d = Dims::new(4, 4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = Volume::from_fn(d, |_, _, _| rng.random::<f64>());
        let img = mip(&v, Axis::Z);
        for j in 0..4 {
            for i in 0..4 {
                let mut m = f64::MIN;
                for k in 0..4 {
                    m = m.max(v.get(i, j, k));
                }
                assert_eq!(img.get(i, j), m);
            }
        }
    }

    #[test]
    fn argmax_positions_invariant_under_scaling() {
        let d = Dims::new(6, 5, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Volume::from_fn(d, |_, _, _| rng.random::<f64>());
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let a = mip(&v, axis).to_u8();
            let b = mip(&v.scaled(3.7), axis).to_u8();
            let pos = |img: &[u8]| img.iter().position(|&p| p == 255);
            assert_eq!(pos(&a), pos(&b));
        }
    }

    #[test]
    fn png_export_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::from_fn(Dims::new(4, 3, 2).unwrap(), |i, j, k| (i + j + k) as f64);
        let p = dir.path().join("m.png");
        mip(&v, Axis::Z).save_png(&p).unwrap();
        assert!(std::fs::metadata(&p).unwrap().len() > 0);
    }
}
