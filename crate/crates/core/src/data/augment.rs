//! Clip-level preprocessing and augmentation.
//!
//! Clips are `[C, T, N]` or `[C, T, N, M]` arrays with channels `(x, y, confidence)`.
//! Frames of all zeros mean "no detection" (padding or frame loss) and are left
//! untouched by geometric transforms.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MMFI_FRAMES: usize = 297;
pub const MMFI_JOINTS: usize = 17;
pub const MMFI_TARGET_FRAMES: usize = 300;

#[derive(Clone, Copy, Debug)]
struct Dims {
    c: usize,
    t: usize,
    n: usize,
    m: usize,
}

impl Dims {
    fn of(x: &Tensor<f32>) -> Result<Self> {
        match *x.shape() {
            [c, t, n] => Ok(Self { c, t, n, m: 1 }),
            [c, t, n, m] => Ok(Self { c, t, n, m }),
            ref s => Err(Error::dim(format!("expected a [C, T, N] or [C, T, N, M] clip, got {s:?}"))),
        }
    }

    fn shape_like(&self, x: &Tensor<f32>, t: usize, n: usize) -> Vec<usize> {
        if x.rank() == 3 {
            vec![self.c, t, n]
        } else {
            vec![self.c, t, n, self.m]
        }
    }

    fn idx(&self, c: usize, t: usize, n: usize, m: usize) -> usize {
        ((c * self.t + t) * self.n + n) * self.m + m
    }

    fn frame_len(&self) -> usize {
        self.n * self.m
    }
}

fn frame_is_zero(x: &Tensor<f32>, d: &Dims, t: usize) -> bool {
    (0..d.c).all(|c| {
        let base = d.idx(c, t, 0, 0);
        x.data()[base..base + d.frame_len()].iter().all(|&v| v == 0.0)
    })
}

/// `[3, 297, 17] -> [3, 300, 18]`: appends joint 17 as the midpoint of joints 0
/// and 7 in every frame, then zero-pads three trailing frames.
pub fn mmfi_preprocess(raw: &Tensor<f32>) -> Result<Tensor<f32>> {
    let d = Dims::of(raw)?;
    if d.t != MMFI_FRAMES || d.n != MMFI_JOINTS {
        return Err(Error::dim(format!(
            "expected {MMFI_FRAMES} frames of {MMFI_JOINTS} joints, got {:?}",
            raw.shape()
        )));
    }
    let out_d = Dims { t: MMFI_TARGET_FRAMES, n: MMFI_JOINTS + 1, ..d };
    let mut out = Tensor::zeros(&d.shape_like(raw, out_d.t, out_d.n));
    let src = raw.data();
    let dst = out.data_mut();
    for c in 0..d.c {
        for t in 0..d.t {
            for m in 0..d.m {
                for n in 0..d.n {
                    dst[out_d.idx(c, t, n, m)] = src[d.idx(c, t, n, m)];
                }
                dst[out_d.idx(c, t, MMFI_JOINTS, m)] = (src[d.idx(c, t, 0, m)] + src[d.idx(c, t, 7, m)]) / 2.0;
            }
        }
    }
    Ok(out)
}

/// Horizontal mirror: negates the x channel and exchanges left/right joints.
pub fn mirror_clip(clip: &Tensor<f32>, swap: &[(usize, usize)]) -> Result<Tensor<f32>> {
    let d = Dims::of(clip)?;
    let mut perm: Vec<usize> = (0..d.n).collect();
    for &(a, b) in swap {
        if a >= d.n || b >= d.n {
            return Err(Error::config(format!("swap pair ({a}, {b}) out of range for {} joints", d.n)));
        }
        perm.swap(a, b);
    }
    let src = clip.data();
    let mut out = clip.clone();
    let dst = out.data_mut();
    for c in 0..d.c {
        for t in 0..d.t {
            for n in 0..d.n {
                for m in 0..d.m {
                    let v = src[d.idx(c, t, perm[n], m)];
                    dst[d.idx(c, t, n, m)] = if c == 0 { -v } else { v };
                }
            }
        }
    }
    Ok(out)
}

fn slice_frames(x: &Tensor<f32>, d: &Dims, start: usize, len: usize) -> Tensor<f32> {
    let mut out = Tensor::zeros(&d.shape_like(x, len, d.n));
    let f = d.frame_len();
    for c in 0..d.c {
        let src = d.idx(c, start, 0, 0);
        let dst = c * len * f;
        out.data_mut()[dst..dst + len * f].copy_from_slice(&x.data()[src..src + len * f]);
    }
    out
}

/// Cuts `seq` into consecutive non-overlapping clips of `clip_len` frames and
/// appends the mirror image of each: `2 * T / clip_len` clips.
pub fn segment_and_mirror(seq: &Tensor<f32>, clip_len: usize, swap: &[(usize, usize)]) -> Result<Vec<Tensor<f32>>> {
    let d = Dims::of(seq)?;
    if clip_len == 0 || d.t % clip_len != 0 {
        return Err(Error::config(format!("clip length {clip_len} does not divide {} frames", d.t)));
    }
    let clips: Vec<Tensor<f32>> = (0..d.t / clip_len).map(|i| slice_frames(seq, &d, i * clip_len, clip_len)).collect();
    let mirrored = clips.iter().map(|c| mirror_clip(c, swap)).collect::<Result<Vec<_>>>()?;
    Ok(clips.into_iter().chain(mirrored).collect())
}

/// Zero-pads to `target` frames, splitting the padding between both ends with
/// the odd frame at the end.
pub fn pad_frames(clip: &Tensor<f32>, target: usize) -> Result<Tensor<f32>> {
    let d = Dims::of(clip)?;
    if target < d.t {
        return Err(Error::contract(format!("cannot pad {} frames to {target}", d.t)));
    }
    let lead = (target - d.t) / 2;
    let out_d = Dims { t: target, ..d };
    let mut out = Tensor::zeros(&d.shape_like(clip, target, d.n));
    let f = d.frame_len();
    for c in 0..d.c {
        let src = d.idx(c, 0, 0, 0);
        let dst = out_d.idx(c, lead, 0, 0);
        out.data_mut()[dst..dst + d.t * f].copy_from_slice(&clip.data()[src..src + d.t * f]);
    }
    Ok(out)
}

/// One planar rotation about the clip's centroid by an angle in
/// `±max_angle` radians, then one translation in `±max_shift` per axis.
/// Channel 2 and all-zero frames are unchanged.
pub fn random_rotate_translate(clip: &Tensor<f32>, rng: &mut Rng, max_angle: f64, max_shift: f64) -> Result<Tensor<f32>> {
    let d = Dims::of(clip)?;
    if d.c < 2 {
        return Err(Error::dim("rotation needs x and y channels"));
    }
    let angle = if max_angle > 0.0 { rng.random_range(-max_angle..=max_angle) } else { 0.0 };
    let (dx, dy) = if max_shift > 0.0 {
        (rng.random_range(-max_shift..=max_shift), rng.random_range(-max_shift..=max_shift))
    } else {
        (0.0, 0.0)
    };
    if angle == 0.0 && dx == 0.0 && dy == 0.0 {
        return Ok(clip.clone());
    }
    let live: Vec<usize> = (0..d.t).filter(|&t| !frame_is_zero(clip, &d, t)).collect();
    if live.is_empty() {
        return Ok(clip.clone());
    }
    let src = clip.data();
    let (mut cx, mut cy) = (0f64, 0f64);
    for &t in &live {
        for n in 0..d.n {
            for m in 0..d.m {
                cx += src[d.idx(0, t, n, m)] as f64;
                cy += src[d.idx(1, t, n, m)] as f64;
            }
        }
    }
    let count = (live.len() * d.frame_len()) as f64;
    cx /= count;
    cy /= count;
    let (sin, cos) = angle.sin_cos();
    let mut out = clip.clone();
    let dst = out.data_mut();
    for &t in &live {
        for n in 0..d.n {
            for m in 0..d.m {
                let (ix, iy) = (d.idx(0, t, n, m), d.idx(1, t, n, m));
                let (x, y) = (src[ix] as f64 - cx, src[iy] as f64 - cy);
                dst[ix] = (cos * x - sin * y + cx + dx) as f32;
                dst[iy] = (sin * x + cos * y + cy + dy) as f32;
            }
        }
    }
    Ok(out)
}

/// Zeroes bursts of frames. The time axis is tiled into `burst_len` blocks
/// starting at a random offset, and each block is dropped independently with
/// probability `drop_prob`, so every frame is lost with probability `drop_prob`.
pub fn inject_frame_loss(clip: &Tensor<f32>, drop_prob: f64, burst_len: usize, rng: &mut Rng) -> Result<Tensor<f32>> {
    if !(0.0..=1.0).contains(&drop_prob) {
        return Err(Error::config(format!("frame drop probability {drop_prob} outside [0, 1]")));
    }
    if burst_len == 0 {
        return Err(Error::config("burst length must be >= 1"));
    }
    let d = Dims::of(clip)?;
    if drop_prob == 0.0 {
        return Ok(clip.clone());
    }
    let offset = rng.random_range(0..burst_len);
    let mut out = clip.clone();
    let f = d.frame_len();
    // block b covers frames [b * burst_len - offset, (b + 1) * burst_len - offset)
    let blocks = (d.t + offset).div_ceil(burst_len);
    for b in 0..blocks {
        if !rng.random_bool(drop_prob) {
            continue;
        }
        let start = (b * burst_len).saturating_sub(offset);
        let end = ((b + 1) * burst_len - offset).min(d.t);
        for c in 0..d.c {
            let base = d.idx(c, start, 0, 0);
            out.data_mut()[base..base + (end - start) * f].fill(0.0);
        }
    }
    Ok(out)
}

/// Fraction of frames that are entirely zero.
pub fn zero_frame_fraction(clip: &Tensor<f32>) -> Result<f64> {
    let d = Dims::of(clip)?;
    Ok((0..d.t).filter(|&t| frame_is_zero(clip, &d, t)).count() as f64 / d.t as f64)
}
