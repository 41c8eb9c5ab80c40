//! Plain spatial-domain reference implementations of every network op.
//!
//! Straightforward loops, `(batch, channels, height, width)` tensors in
//! `f64`. Nothing here shares code with the transform-domain path; the
//! equivalence tests compare against these functions.

use crate::error::{Error, Result};
use crate::model::SpatialModel;
use crate::ops::{BatchNormParams, BnMode};
use crate::tensor::DenseTensor;

/// `(batch, channels, height, width)` activations.
pub type SpatialFeatureTensor = DenseTensor<f64>;

fn dims4(x: &SpatialFeatureTensor) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::ShapeMismatch(format!("expected (batch, channels, h, w), got {:?}", x.shape()))),
    }
}

/// Cross-correlation with zero "same" padding; output is `h / stride × w / stride`.
pub fn spatial_conv(x: &SpatialFeatureTensor, kernel: &DenseTensor<f64>, stride: usize) -> Result<SpatialFeatureTensor> {
    let (n, cin, h, w) = dims4(x)?;
    let (cout, kcin, kh, kw) = match *kernel.shape() {
        [o, i, kh, kw] => (o, i, kh, kw),
        _ => return Err(Error::ShapeMismatch(format!("kernel {:?}", kernel.shape()))),
    };
    if kcin != cin {
        return Err(Error::ShapeMismatch(format!("kernel expects {kcin} input channels, got {cin}")));
    }
    let (oh, ow) = (h / stride, w / stride);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = DenseTensor::zeros(&[n, cout, oh, ow])?;
    for b in 0..n {
        for o in 0..cout {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let sy = (y * stride) as isize + i as isize - ph;
                                let sx = (xo * stride) as isize + j as isize - pw;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    acc += kernel.get(&[o, c, i, j]) * x.get(&[b, c, sy as usize, sx as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[b, o, y, xo], acc);
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel statistics over batch and all pixels: `(mean, population variance)`.
pub fn channel_stats(x: &SpatialFeatureTensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = dims4(x)?;
    let count = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    s += x.get(&[b, ch, y, xx]);
                }
            }
        }
        let mu = s / count;
        let mut v = 0.0;
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    v += (x.get(&[b, ch, y, xx]) - mu).powi(2);
                }
            }
        }
        mean[ch] = mu;
        var[ch] = v / count;
    }
    Ok((mean, var))
}

/// `(x − μ) / √(σ² + ε) · γ + β`. Train mode uses batch statistics and
/// updates the running averages; eval mode uses the running averages.
pub fn spatial_batchnorm(x: &SpatialFeatureTensor, params: &mut BatchNormParams, mode: BnMode) -> Result<SpatialFeatureTensor> {
    let (n, c, h, w) = dims4(x)?;
    if params.channels() != c {
        return Err(Error::ShapeMismatch(format!("{c} channels but batch norm has {}", params.channels())));
    }
    let (mean, var) = match mode {
        BnMode::Eval => (params.running_mean.clone(), params.running_var.clone()),
        BnMode::Train => {
            let (mean, var) = channel_stats(x)?;
            params.update_running(&mean, &var, n * h * w);
            (mean, var)
        }
    };
    let mut out = x.clone();
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x.get(&[b, ch, y, xx]);
                    let norm = (v - mean[ch]) / (var[ch] + params.epsilon).sqrt();
                    out.set(&[b, ch, y, xx], norm * params.gamma[ch] + params.beta[ch]);
                }
            }
        }
    }
    Ok(out)
}

pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

pub fn spatial_relu(x: &SpatialFeatureTensor) -> SpatialFeatureTensor {
    x.map(relu)
}

pub fn spatial_add(a: &SpatialFeatureTensor, b: &SpatialFeatureTensor) -> Result<SpatialFeatureTensor> {
    a.add(b)
}

/// Per-channel mean, `(batch, channels)`.
pub fn spatial_gap(x: &SpatialFeatureTensor) -> Result<DenseTensor<f64>> {
    let (n, c, h, w) = dims4(x)?;
    DenseTensor::from_fn(&[n, c], |i| {
        let mut s = 0.0;
        for y in 0..h {
            for xx in 0..w {
                s += x.get(&[i[0], i[1], y, xx]);
            }
        }
        s / (h * w) as f64
    })
}

/// Fully connected head: `(batch, features) → (batch, classes)`.
pub fn fully_connected(features: &DenseTensor<f64>, weight: &DenseTensor<f64>, bias: &[f64]) -> Result<DenseTensor<f64>> {
    let (n, f) = match *features.shape() {
        [n, f] => (n, f),
        _ => return Err(Error::ShapeMismatch(format!("features {:?}", features.shape()))),
    };
    let classes = bias.len();
    if weight.shape() != [classes, f] {
        return Err(Error::ShapeMismatch(format!("fc weight {:?} for {f} features, {classes} classes", weight.shape())));
    }
    DenseTensor::from_fn(&[n, classes], |i| {
        bias[i[1]] + (0..f).map(|j| weight.get(&[i[1], j]) * features.get(&[i[0], j])).sum::<f64>()
    })
}

/// Reference forward pass with eval-mode batch norm and exact ReLu.
///
/// Per residual block:
/// `relu(bn2(conv2(relu(bn1(conv1 x))))) + shortcut(x)`, the shortcut being
/// the identity or a 1×1 projection.
pub fn spatial_forward(model: &SpatialModel, input: &SpatialFeatureTensor) -> Result<DenseTensor<f64>> {
    let (_, c, h, w) = dims4(input)?;
    let spec = &model.spec;
    if c != spec.input_channels || h != spec.height || w != spec.width {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} does not match network input {}x{}x{}",
            input.shape(),
            spec.input_channels,
            spec.height,
            spec.width
        )));
    }
    let norm = model.normalization;
    let mut x = input.map(|v| (v - norm.mean) / norm.scale);
    for (block, &stride) in model.blocks.iter().zip(&spec.strides) {
        let mut bn1 = block.bn1.clone();
        let mut bn2 = block.bn2.clone();
        let y = spatial_conv(&x, &block.conv1, stride)?;
        let y = spatial_relu(&spatial_batchnorm(&y, &mut bn1, BnMode::Eval)?);
        let y = spatial_conv(&y, &block.conv2, 1)?;
        let y = spatial_relu(&spatial_batchnorm(&y, &mut bn2, BnMode::Eval)?);
        let shortcut = match &block.projection {
            Some(p) => spatial_conv(&x, p, stride)?,
            None => x,
        };
        x = spatial_add(&y, &shortcut)?;
    }
    fully_connected(&spatial_gap(&x)?, &model.fc_weight, &model.fc_bias)
}
