//! The four spatio-temporal transforms.
//!
//! All of them act on a generic temporal signal: a tensor whose leading axis
//! is time (audio samples, or video frames with everything behind the time
//! axis treated as one flat slice). They preserve temporal length exactly,
//! and at α = 0 every one of them is the identity map.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{frac_to_index, AugKind, AugmentError, DrawnParams, SignalDomain};
use crate::rng::randn;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadeCurve {
    Linear,
    Logarithmic,
    Exponential,
    QuarterSine,
    HalfSine,
}

impl FadeCurve {
    pub const ALL: [FadeCurve; 5] = [
        FadeCurve::Linear,
        FadeCurve::Logarithmic,
        FadeCurve::Exponential,
        FadeCurve::QuarterSine,
        FadeCurve::HalfSine,
    ];

    /// Monotone gain with `g(0) = 0` and `g(1) = 1`.
    pub fn gain(&self, u: f64) -> f64 {
        match self {
            FadeCurve::Linear => u,
            FadeCurve::Logarithmic => (1.0 + 9.0 * u).log10(),
            FadeCurve::Exponential => ((4.0 * u).exp() - 1.0) / (4f64.exp() - 1.0),
            FadeCurve::QuarterSine => (u * std::f64::consts::FRAC_PI_2).sin(),
            FadeCurve::HalfSine => (1.0 - (u * std::f64::consts::PI).cos()) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskFill {
    Noise,
    Constant,
}

/// Draws the realized parameters for one temporal kind at intensity α.
pub fn draw_temporal(kind: &AugKind, alpha: f64, rng: &mut ChaCha8Rng) -> DrawnParams {
    match kind {
        AugKind::Fade => {
            let curve = FadeCurve::ALL[rng.gen_range(0..FadeCurve::ALL.len())];
            // each side independent, at most α/2 of the clip
            let left_frac = rng.gen_range(0.0..=alpha / 2.0);
            let right_frac = rng.gen_range(0.0..=alpha / 2.0);
            DrawnParams::Fade {
                curve,
                left_frac,
                right_frac,
            }
        }
        AugKind::TimeMask => {
            let len_frac = rng.gen_range(0.0..=alpha);
            let start_frac = rng.gen_range(0.0..=1.0 - len_frac);
            let fill = if rng.gen::<bool>() {
                MaskFill::Noise
            } else {
                MaskFill::Constant
            };
            DrawnParams::TimeMask {
                start_frac,
                len_frac,
                fill,
                noise_seed: rng.gen(),
            }
        }
        AugKind::TimeShift => DrawnParams::TimeShift {
            shift_frac: rng.gen_range(-alpha..=alpha),
        },
        AugKind::Resample => DrawnParams::Resample {
            factor: rng.gen_range(1.0 - alpha..=1.0),
        },
        _ => unreachable!("draw_temporal on non-temporal kind"),
    }
}

/// Applies a drawn temporal transform to a leading-axis-time tensor.
pub fn apply_temporal(
    signal: &Tensor,
    domain: SignalDomain,
    params: &DrawnParams,
) -> Result<Tensor, AugmentError> {
    match params {
        DrawnParams::Fade {
            curve,
            left_frac,
            right_frac,
        } => Ok(fade(signal, *curve, *left_frac, *right_frac)),
        DrawnParams::TimeMask {
            start_frac,
            len_frac,
            fill,
            noise_seed,
        } => Ok(time_mask(signal, domain, *start_frac, *len_frac, *fill, *noise_seed)),
        DrawnParams::TimeShift { shift_frac } => Ok(time_shift(signal, *shift_frac)),
        DrawnParams::Resample { factor } => resample(signal, *factor),
        other => Err(AugmentError::InvalidSpec(format!(
            "{other} is not a temporal transform"
        ))),
    }
}

fn time_extent(signal: &Tensor) -> (usize, usize) {
    let t = signal.shape()[0];
    (t, signal.len() / t)
}

/// Multiplies the signal by a fade envelope: rising over the left region,
/// falling over the right, 1 in between. Video frames fade toward black.
pub fn fade(signal: &Tensor, curve: FadeCurve, left_frac: f64, right_frac: f64) -> Tensor {
    let (t, stride) = time_extent(signal);
    let left = frac_to_index(left_frac, t);
    let right = frac_to_index(right_frac, t);
    if left == 0 && right == 0 {
        return signal.clone();
    }
    let mut data = signal.data().to_vec();
    for ti in 0..t {
        let mut env = 1.0;
        if ti < left {
            env *= curve.gain(ti as f64 / left as f64);
        }
        if ti + right >= t {
            env *= curve.gain((t - 1 - ti) as f64 / right as f64);
        }
        if env != 1.0 {
            for v in &mut data[ti * stride..(ti + 1) * stride] {
                *v *= env;
            }
        }
    }
    Tensor::new(signal.shape().to_vec(), data).expect("fade shape")
}

/// Replaces the time slices in `[start, start+len)` with noise or a constant;
/// nothing outside the window changes.
pub fn time_mask(
    signal: &Tensor,
    domain: SignalDomain,
    start_frac: f64,
    len_frac: f64,
    fill: MaskFill,
    noise_seed: u64,
) -> Tensor {
    let (t, stride) = time_extent(signal);
    let start = frac_to_index(start_frac, t);
    let len = frac_to_index(len_frac, t);
    let end = (start + len).min(t);
    if start >= end {
        return signal.clone();
    }
    let mut data = signal.data().to_vec();
    match fill {
        MaskFill::Constant => {
            let c = match domain {
                SignalDomain::Audio => 0.0,
                SignalDomain::Video => 0.5,
            };
            for v in &mut data[start * stride..end * stride] {
                *v = c;
            }
        }
        MaskFill::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let (lo, hi) = match domain {
                SignalDomain::Audio => (-1.0, 1.0),
                SignalDomain::Video => (0.0, 1.0),
            };
            for v in &mut data[start * stride..end * stride] {
                *v = randn(&mut rng).clamp(lo, hi);
            }
        }
    }
    Tensor::new(signal.shape().to_vec(), data).expect("time_mask shape")
}

/// Circular rotation along time: slices rolling beyond the last position
/// re-enter at the first.
pub fn time_shift(signal: &Tensor, shift_frac: f64) -> Tensor {
    let (t, stride) = time_extent(signal);
    let amount = frac_to_index(shift_frac.abs(), t) % t;
    if amount == 0 {
        return signal.clone();
    }
    let shift = if shift_frac >= 0.0 { amount } else { t - amount };
    let src = signal.data();
    let mut data = vec![0.0; src.len()];
    for ti in 0..t {
        let from = (ti + t - shift) % t;
        data[ti * stride..(ti + 1) * stride]
            .copy_from_slice(&src[from * stride..(from + 1) * stride]);
    }
    Tensor::new(signal.shape().to_vec(), data).expect("time_shift shape")
}

/// Nearest-neighbor decimation to `factor` of the original rate, then a
/// nearest-neighbor hold back to the original length, leaving repetitive
/// slices. `factor` must be in `(0, 1]`.
pub fn resample(signal: &Tensor, factor: f64) -> Result<Tensor, AugmentError> {
    let (t, stride) = time_extent(signal);
    let m = frac_to_index(factor, t);
    if m == 0 {
        return Err(AugmentError::EmptyResample);
    }
    if m >= t {
        return Ok(signal.clone());
    }
    let src = signal.data();
    // decimate: kept[j] comes from source index floor(j·t/m)
    let kept: Vec<usize> = (0..m).map(|j| j * t / m).collect();
    let mut data = vec![0.0; src.len()];
    for ti in 0..t {
        let j = ti * m / t;
        let from = kept[j];
        data[ti * stride..(ti + 1) * stride]
            .copy_from_slice(&src[from * stride..(from + 1) * stride]);
    }
    Ok(Tensor::new(signal.shape().to_vec(), data).expect("resample shape"))
}
