//! Dataset generation and loading, pixel-range conversion, and
//! checkpoint persistence.
//!
//! Pixels live in [-1, 1] internally and as 8-bit [0, 255] in files.
//! Checkpoints use the "GEC1" container: magic, JSON header, then
//! little-endian f64 parameter blobs in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeError, Result};
use crate::nn::{Network, NetworkSpec, Param};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageSetMeta {
    pub source: String,
    pub seed: u64,
    pub split: String,
}

/// A uniform-shape set of images in [-1, 1].
#[derive(Clone, Debug)]
pub struct ImageSet {
    pub images: Vec<Tensor>,
    pub meta: ImageSetMeta,
}

impl ImageSet {
    pub fn shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape.as_slice())
    }

    /// 90/5/5 train/validation/test split by seeded shuffle.
    pub fn split(&self, seed: u64) -> (ImageSet, ImageSet, ImageSet) {
        let mut idx: Vec<usize> = (0..self.images.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = n * 90 / 100;
        let n_val = n * 5 / 100;
        let pick = |range: &[usize], tag: &str| ImageSet {
            images: range.iter().map(|&i| self.images[i].clone()).collect(),
            meta: ImageSetMeta {
                source: self.meta.source.clone(),
                seed,
                split: tag.to_string(),
            },
        };
        (
            pick(&idx[..n_train], "train"),
            pick(&idx[n_train..n_train + n_val], "val"),
            pick(&idx[n_train + n_val..], "test"),
        )
    }
}

/// n grayscale size x size images: a per-image flat background level plus
/// 1..=max_blobs isotropic Gaussian bumps, clamped to [-1, 1]. The varying
/// background keeps any single constant image far from the bulk of the
/// distribution. Deterministic under seed.
pub fn gen_blobs_dataset(n: usize, size: usize, max_blobs: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let background: f64 = rng.gen_range(-0.9..0.0);
        let mut img = vec![background; size * size];
        let count = rng.gen_range(1..=max_blobs);
        for _ in 0..count {
            let cx: f64 = rng.gen_range(0.15 * size as f64..0.85 * size as f64);
            let cy: f64 = rng.gen_range(0.15 * size as f64..0.85 * size as f64);
            let width: f64 = rng.gen_range(size as f64 / 6.0..size as f64 / 3.0);
            let amp: f64 = rng.gen_range(0.6..1.6);
            let inv = 1.0 / (2.0 * width * width);
            for y in 0..size {
                for x in 0..size {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    img[y * size + x] += amp * (-(dx * dx + dy * dy) * inv).exp();
                }
            }
        }
        let data: Vec<f64> = img.iter().map(|&v| v.clamp(-1.0, 1.0)).collect();
        images.push(Tensor::new(vec![1, size, size], data).expect("shape consistent"));
    }
    ImageSet {
        images,
        meta: ImageSetMeta {
            source: format!("blobs(n={n},size={size},max_blobs={max_blobs})"),
            seed,
            split: "all".into(),
        },
    }
}

/// v in [-1,1] -> 8-bit, rounding, clamped.
pub fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn from_u8(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Write a [C,H,W] image in [-1,1] as an 8-bit gray or RGB PNG.
pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    if img.shape.len() != 3 {
        return Err(GeError::Shape(format!(
            "save_png expects [C,H,W], got {:?}",
            img.shape
        )));
    }
    let (c, h, w) = (img.shape[0], img.shape[1], img.shape[2]);
    let bytes: Vec<u8> = match c {
        1 => img.data.iter().map(|&v| to_u8(v)).collect(),
        3 => {
            let mut out = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..3 {
                        out.push(to_u8(img.data[(ch * h + y) * w + x]));
                    }
                }
            }
            out
        }
        _ => {
            return Err(GeError::Shape(format!(
                "save_png supports 1 or 3 channels, got {c}"
            )))
        }
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    match c {
        1 => image::GrayImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer sized above")
            .save(path)?,
        _ => image::RgbImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer sized above")
            .save(path)?,
    }
    Ok(())
}

/// Load one PNG as [channels,H,W] in [-1,1] without resizing.
pub fn load_png(path: &Path, channels: usize) -> Result<Tensor> {
    let img = image::open(path)?;
    decode_image(&img, channels)
}

fn decode_image(img: &image::DynamicImage, channels: usize) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let gray = img.to_luma8();
            let data = gray.as_raw().iter().map(|&v| from_u8(v)).collect();
            Tensor::new(vec![1, h, w], data)
        }
        3 => {
            let rgb = img.to_rgb8();
            let mut data = vec![0.0; 3 * h * w];
            for y in 0..h {
                for x in 0..w {
                    let p = rgb.get_pixel(x as u32, y as u32);
                    for ch in 0..3 {
                        data[(ch * h + y) * w + x] = from_u8(p.0[ch]);
                    }
                }
            }
            Tensor::new(vec![3, h, w], data)
        }
        _ => Err(GeError::Shape(format!(
            "load supports 1 or 3 channels, got {channels}"
        ))),
    }
}

/// Load every PNG under `path`, center-crop to square, resize to
/// `size`, and normalize to [-1,1]. Errors on an empty directory or an
/// undecodable file.
pub fn load_image_dir(path: &Path, size: usize, channels: usize) -> Result<ImageSet> {
    let mut files: Vec<_> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(GeError::Config(format!(
            "no PNG files found in {}",
            path.display()
        )));
    }
    let mut images = Vec::with_capacity(files.len());
    for file in &files {
        let img = image::open(file)
            .map_err(|e| GeError::Config(format!("cannot decode {}: {e}", file.display())))?;
        let (w, h) = (img.width(), img.height());
        let side = w.min(h);
        let cropped = img.crop_imm((w - side) / 2, (h - side) / 2, side, side);
        let resized = cropped.resize_exact(
            size as u32,
            size as u32,
            image::imageops::FilterType::Triangle,
        );
        images.push(decode_image(&resized, channels)?);
    }
    Ok(ImageSet {
        images,
        meta: ImageSetMeta {
            source: path.display().to_string(),
            seed: 0,
            split: "all".into(),
        },
    })
}

const MAGIC: &[u8; 4] = b"GEC1";

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: NetworkSpec,
    frozen: bool,
    params: Vec<ParamHeader>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Persist a network bit-exactly. Atomic: temp file then rename.
pub fn save_checkpoint(net: &Network, path: &Path, meta: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        spec: net.spec.clone(),
        frozen: net.frozen,
        params: net
            .params
            .iter()
            .map(|p| ParamHeader {
                name: p.name.clone(),
                shape: p.value.shape.clone(),
                trainable: p.trainable,
            })
            .collect(),
        meta,
    };
    let header_json = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&(header_json.len() as u64).to_le_bytes())?;
        f.write_all(&header_json)?;
        for p in &net.params {
            for v in &p.value.data {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)
        .map_err(|_| GeError::Format("file shorter than magic".into()))?;
    if &magic != MAGIC {
        return Err(GeError::Format(format!(
            "bad magic {:?}, expected GEC1",
            magic
        )));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)
        .map_err(|_| GeError::Format("truncated header length at offset 4".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)
        .map_err(|_| GeError::Format("truncated JSON header at offset 12".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| GeError::Format(format!("invalid JSON header: {e}")))?;

    let mut params = Vec::with_capacity(header.params.len());
    let mut offset = 12 + header_len;
    for ph in &header.params {
        let n: usize = ph.shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        f.read_exact(&mut buf).map_err(|_| {
            GeError::Format(format!(
                "truncated blob for tensor '{}' at offset {offset}",
                ph.name
            ))
        })?;
        offset += n * 8;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
            .collect();
        params.push(Param {
            name: ph.name.clone(),
            value: Tensor::new(ph.shape.clone(), data)?,
            trainable: ph.trainable,
        });
    }
    let net = Network {
        spec: header.spec,
        params,
        frozen: header.frozen,
    };
    net.spec.output_shape()?;
    Ok(net)
}

/// The JSON metadata block of a checkpoint, without loading blobs.
pub fn checkpoint_meta(path: &Path) -> Result<serde_json::Value> {
    let mut f = fs::File::open(path)?;
    let mut prefix = [0u8; 12];
    f.read_exact(&mut prefix)
        .map_err(|_| GeError::Format("file shorter than header prefix".into()))?;
    if &prefix[..4] != MAGIC {
        return Err(GeError::Format("bad magic, expected GEC1".into()));
    }
    let header_len = u64::from_le_bytes(prefix[4..12].try_into().expect("sized")) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)
        .map_err(|_| GeError::Format("truncated JSON header".into()))?;
    let header: serde_json::Value = serde_json::from_slice(&header_json)
        .map_err(|e| GeError::Format(format!("invalid JSON header: {e}")))?;
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_generator, EncoderVariant};
    use crate::tensor::Tape;

    #[test]
    fn blobs_deterministic_and_in_range() {
        let a = gen_blobs_dataset(10, 16, 3, 42);
        let b = gen_blobs_dataset(10, 16, 3, 42);
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.data, y.data);
        }
        for img in &a.images {
            assert!(img.data.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
        let c = gen_blobs_dataset(10, 16, 3, 43);
        assert!(a.images[0].data != c.images[0].data);
    }

    #[test]
    fn split_fractions() {
        let set = gen_blobs_dataset(100, 8, 2, 1);
        let (train, val, test) = set.split(7);
        assert_eq!(train.images.len(), 90);
        assert_eq!(val.images.len(), 5);
        assert_eq!(test.images.len(), 5);
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let set = gen_blobs_dataset(1, 16, 3, 5);
        let path = dir.path().join("img.png");
        save_png(&set.images[0], &path).unwrap();
        let back = load_png(&path, 1).unwrap();
        assert_eq!(back.shape, set.images[0].shape);
        for (a, b) in set.images[0].data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn load_empty_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_image_dir(dir.path(), 16, 1).is_err());
    }

    #[test]
    fn load_dir_normalizes_sizes() {
        let dir = tempfile::tempdir().unwrap();
        save_png(
            &gen_blobs_dataset(1, 16, 2, 1).images[0],
            &dir.path().join("a.png"),
        )
        .unwrap();
        save_png(
            &gen_blobs_dataset(1, 24, 2, 2).images[0],
            &dir.path().join("b.png"),
        )
        .unwrap();
        let set = load_image_dir(dir.path(), 16, 1).unwrap();
        assert_eq!(set.images.len(), 2);
        for img in &set.images {
            assert_eq!(img.shape, vec![1, 16, 16]);
        }
    }

    #[test]
    fn checkpoint_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = build_generator(4, 3, 4, (1, 8, 8), 77).unwrap();
        g.freeze();
        let path = dir.path().join("g.gec");
        save_checkpoint(&g, &path, serde_json::json!({"note": "test"})).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.frozen);
        let z = Tensor::from_vec(vec![0.1, -0.4, 0.9, 0.0]);
        let a = g.forward(&mut Tape::frozen(), &z).unwrap();
        let b = loaded.forward(&mut Tape::frozen(), &z).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn checkpoint_truncation_names_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let g = crate::nn::build_encoder(EncoderVariant::Ge1, 1, 2, 2, (1, 4, 4), 1).unwrap();
        let path = dir.path().join("g.gec");
        save_checkpoint(&g, &path, serde_json::Value::Null).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        match load_checkpoint(&path) {
            Err(GeError::Format(msg)) => assert!(msg.contains("l3.b"), "msg: {msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.gec");
        fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(GeError::Format(_))));
    }

    #[test]
    fn checkpoint_header_is_plain_json() {
        let dir = tempfile::tempdir().unwrap();
        let g = build_generator(4, 3, 4, (1, 8, 8), 3).unwrap();
        let path = dir.path().join("g.gec");
        save_checkpoint(&g, &path, serde_json::json!({"k": 1})).unwrap();
        let header = checkpoint_meta(&path).unwrap();
        assert_eq!(header["meta"]["k"], 1);
        assert!(header["spec"]["layers"].is_array());
    }
}
