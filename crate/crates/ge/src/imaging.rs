//! Degradation operators (how the corrupted image is produced) and the
//! solver-side adjustment operators inserted between generator and
//! encoder for each task.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{GeError, Result};
use crate::tensor::{Tape, Tensor};

/// Forward corruption operator.
#[derive(Clone, Debug)]
pub enum DegradationSpec {
    GaussianNoise { sigma: f64 },
    GaussianBlur { sigma: f64, size: usize },
    Downsample { factor: usize },
    Mask { mask: Tensor },
}

impl DegradationSpec {
    pub fn apply(&self, x: &Tensor, seed: u64) -> Result<Tensor> {
        match self {
            DegradationSpec::GaussianNoise { sigma } => apply_noise(x, *sigma, seed),
            DegradationSpec::GaussianBlur { sigma, size } => gaussian_blur(x, *sigma, *size),
            DegradationSpec::Downsample { factor } => downsample(x, *factor),
            DegradationSpec::Mask { mask } => mask_apply(x, mask),
        }
    }
}

/// Task-dependent map between the generator output and encoder input.
#[derive(Clone, Debug)]
pub enum AdjustmentOp {
    Identity,
    Mask { mask: Tensor },
    /// Integer-factor nearest/box resize, kept differentiable.
    Resize { target: (usize, usize) },
}

impl AdjustmentOp {
    /// Apply on a tape so the solver can differentiate through it.
    pub fn apply(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
        match self {
            AdjustmentOp::Identity => Ok(x.clone()),
            AdjustmentOp::Mask { mask } => tape.mul(x, mask),
            AdjustmentOp::Resize { target } => {
                if x.shape.len() != 3 {
                    return Err(GeError::Shape("resize expects [C,H,W]".into()));
                }
                let (h, w) = (x.shape[1], x.shape[2]);
                let (th, tw) = *target;
                if th >= h {
                    if th % h != 0 || tw % w != 0 || th / h != tw / w {
                        return Err(GeError::Shape(format!(
                            "no integer upsample factor from {h}x{w} to {th}x{tw}"
                        )));
                    }
                    tape.upsample_nearest(x, th / h)
                } else {
                    if h % th != 0 || w % tw != 0 || h / th != w / tw {
                        return Err(GeError::Shape(format!(
                            "no integer downsample factor from {h}x{w} to {th}x{tw}"
                        )));
                    }
                    tape.avgpool(x, h / th)
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Task {
    Denoise,
    Deblur,
    Inpaint { mask: Tensor },
    Superres { factor: usize },
}

/// Adjustment operator for each task. Super-resolution is identity
/// because the degraded input is bicubic-upsampled back to full
/// resolution before solving.
pub fn adjustment_for(task: &Task) -> AdjustmentOp {
    match task {
        Task::Denoise | Task::Deblur | Task::Superres { .. } => AdjustmentOp::Identity,
        Task::Inpaint { mask } => AdjustmentOp::Mask { mask: mask.clone() },
    }
}

/// x + eps with eps iid N(0, sigma^2). Output is not clipped.
pub fn apply_noise(x: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Err(GeError::Contract("noise sigma must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| GeError::Contract(e.to_string()))?;
    let data = x.data.iter().map(|v| v + normal.sample(&mut rng)).collect();
    Tensor::new(x.shape.clone(), data)
}

/// Normalized isotropic Gaussian kernel of odd `size`.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(GeError::Contract("blur kernel size must be odd".into()));
    }
    if sigma <= 0.0 {
        return Err(GeError::Contract("blur sigma must be > 0".into()));
    }
    let r = (size / 2) as isize;
    let mut k = Vec::with_capacity(size * size);
    for y in -r..=r {
        for x in -r..=r {
            k.push((-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    Ok(k)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Channelwise 2-D convolution with a normalized Gaussian kernel,
/// reflective boundary.
pub fn gaussian_blur(x: &Tensor, sigma: f64, size: usize) -> Result<Tensor> {
    if x.shape.len() != 3 {
        return Err(GeError::Shape("blur expects [C,H,W]".into()));
    }
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let kernel = gaussian_kernel(sigma, size)?;
    let r = (size / 2) as isize;
    let mut out = vec![0.0; x.data.len()];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let mut s = 0.0;
                for ky in -r..=r {
                    let iy = reflect(y as isize + ky, h);
                    for kx in -r..=r {
                        let ix = reflect(xx as isize + kx, w);
                        s += x.data[(ch * h + iy) * w + ix]
                            * kernel[((ky + r) * size as isize + kx + r) as usize];
                    }
                }
                out[(ch * h + y) * w + xx] = s;
            }
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Block-average downsampling by an integer factor.
pub fn downsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    Tape::frozen().avgpool(x, factor)
}

fn cubic_weight(t: f64) -> f64 {
    // Catmull-Rom style kernel, a = -0.5
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic interpolation by an integer factor, per channel, edge-clamped.
/// Output pixel (y, x) samples the input at (y/factor, x/factor), so the
/// input grid points are reproduced exactly.
pub fn bicubic_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if x.shape.len() != 3 {
        return Err(GeError::Shape("bicubic expects [C,H,W]".into()));
    }
    if factor < 2 {
        return Err(GeError::Contract("bicubic factor must be >= 2".into()));
    }
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (ho, wo) = (h * factor, w * factor);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            let sy = oy as f64 / factor as f64;
            let y0 = sy.floor() as isize;
            let fy = sy - y0 as f64;
            for ox in 0..wo {
                let sx = ox as f64 / factor as f64;
                let x0 = sx.floor() as isize;
                let fx = sx - x0 as f64;
                let mut s = 0.0;
                for dy in -1..=2isize {
                    let wy = cubic_weight(dy as f64 - fy);
                    if wy == 0.0 {
                        continue;
                    }
                    let iy = clamp(y0 + dy, h);
                    for dx in -1..=2isize {
                        let wx = cubic_weight(dx as f64 - fx);
                        if wx == 0.0 {
                            continue;
                        }
                        let ix = clamp(x0 + dx, w);
                        s += wy * wx * x.data[(ch * h + iy) * w + ix];
                    }
                }
                out[(ch * ho + oy) * wo + ox] = s;
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

/// Hadamard product with a binary mask of identical shape.
pub fn mask_apply(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if mask.shape != x.shape {
        return Err(GeError::Shape(format!(
            "mask shape {:?} does not match image shape {:?}",
            mask.shape, x.shape
        )));
    }
    Tape::frozen().mul(x, mask)
}

/// Binary mask with zeros inside the given rectangle, ones elsewhere,
/// replicated across channels.
pub fn rect_mask(
    shape: (usize, usize, usize),
    x0: usize,
    y0: usize,
    mw: usize,
    mh: usize,
) -> Result<Tensor> {
    let (c, h, w) = shape;
    if x0 + mw > w || y0 + mh > h {
        return Err(GeError::Contract(format!(
            "mask rect {mw}x{mh}+{x0}+{y0} outside {w}x{h} image"
        )));
    }
    let mut data = vec![1.0; c * h * w];
    for ch in 0..c {
        for y in y0..y0 + mh {
            for x in x0..x0 + mw {
                data[(ch * h + y) * w + x] = 0.0;
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}

/// Mask from a 1-bit-style PNG: white = keep, black = masked.
pub fn mask_from_png(path: &Path, shape: (usize, usize, usize)) -> Result<Tensor> {
    let (c, h, w) = shape;
    let img = crate::data::load_png(path, 1)?;
    if img.shape[1] != h || img.shape[2] != w {
        return Err(GeError::Shape(format!(
            "mask PNG is {}x{}, image is {w}x{h}",
            img.shape[2], img.shape[1]
        )));
    }
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..h * w {
            data[ch * h * w + i] = if img.data[i] > 0.0 { 1.0 } else { 0.0 };
        }
    }
    Tensor::new(vec![c, h, w], data)
}
