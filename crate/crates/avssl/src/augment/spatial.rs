//! Per-clip-consistent spatial augmentation of video frames.
//!
//! One draw of (crop rectangle, resize target, horizontal-flip bit, color
//! jitter factors) applies identically to every frame of a clip.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::AugmentError;
use crate::data::FrameSequence;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialParams {
    pub crop_y: usize,
    pub crop_x: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub flip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl SpatialParams {
    /// Identity params for a full frame of the given size.
    pub fn identity(h: usize, w: usize) -> Self {
        SpatialParams {
            crop_y: 0,
            crop_x: 0,
            crop_h: h,
            crop_w: w,
            out_h: h,
            out_w: w,
            flip: false,
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
        }
    }
}

/// Draws spatial parameters: a square crop of side `scale·min(h, w)` with
/// `scale ~ U[min_scale, 1]` at a uniform position, resized to
/// `crop_size × crop_size`, a fair flip bit, and jitter factors in
/// `[1 − jitter, 1 + jitter]`.
pub fn draw_spatial(
    crop_size: usize,
    min_scale: f64,
    jitter: f64,
    h: usize,
    w: usize,
    rng: &mut ChaCha8Rng,
) -> SpatialParams {
    let max_side = h.min(w);
    let scale: f64 = rng.gen_range(min_scale..=1.0);
    let side = ((scale * max_side as f64) + 0.5).floor().max(1.0) as usize;
    let side = side.min(max_side);
    let crop_y = rng.gen_range(0..=h - side);
    let crop_x = rng.gen_range(0..=w - side);
    let flip = rng.gen::<bool>();
    let (brightness, contrast, saturation) = if jitter > 0.0 {
        (
            rng.gen_range(1.0 - jitter..=1.0 + jitter),
            rng.gen_range(1.0 - jitter..=1.0 + jitter),
            rng.gen_range(1.0 - jitter..=1.0 + jitter),
        )
    } else {
        (1.0, 1.0, 1.0)
    };
    SpatialParams {
        crop_y,
        crop_x,
        crop_h: side,
        crop_w: side,
        out_h: crop_size,
        out_w: crop_size,
        flip,
        brightness,
        contrast,
        saturation,
    }
}

/// Applies one spatial draw to every frame of the clip.
pub fn apply_spatial(
    video: &FrameSequence,
    params: &SpatialParams,
) -> Result<FrameSequence, AugmentError> {
    let (t, h, w) = (video.num_frames(), video.height(), video.width());
    if params.crop_y + params.crop_h > h || params.crop_x + params.crop_w > w {
        return Err(AugmentError::CropTooLarge {
            crop: (params.crop_h, params.crop_w),
            frame: (h, w),
        });
    }
    let (oh, ow) = (params.out_h, params.out_w);
    let src = video.frames.data();
    let mut out = vec![0.0; t * oh * ow * 3];

    let resize_identity = params.crop_h == oh && params.crop_w == ow;
    for ti in 0..t {
        let frame = &src[ti * h * w * 3..(ti + 1) * h * w * 3];
        let dst = &mut out[ti * oh * ow * 3..(ti + 1) * oh * ow * 3];
        for y in 0..oh {
            let sy = if resize_identity { y } else { y * params.crop_h / oh };
            for x in 0..ow {
                let sx = if resize_identity { x } else { x * params.crop_w / ow };
                let sx = if params.flip { params.crop_w - 1 - sx } else { sx };
                let s = ((params.crop_y + sy) * w + params.crop_x + sx) * 3;
                let d = (y * ow + x) * 3;
                dst[d..d + 3].copy_from_slice(&frame[s..s + 3]);
            }
        }
    }

    let unit_jitter =
        params.brightness == 1.0 && params.contrast == 1.0 && params.saturation == 1.0;
    if !unit_jitter {
        for ti in 0..t {
            let frame = &mut out[ti * oh * ow * 3..(ti + 1) * oh * ow * 3];
            let mean: f64 = frame.iter().sum::<f64>() / frame.len() as f64;
            for px in frame.chunks_mut(3) {
                let gray = (px[0] + px[1] + px[2]) / 3.0;
                for v in px.iter_mut() {
                    let saturated = gray + (*v - gray) * params.saturation;
                    let contrasted = mean + (saturated - mean) * params.contrast;
                    *v = (contrasted * params.brightness).clamp(0.0, 1.0);
                }
            }
        }
    }

    let frames = Tensor::new(vec![t, oh, ow, 3], out).expect("spatial shape");
    FrameSequence::new(frames, video.fps).map_err(Into::into)
}
