//! Residual network building blocks applied directly to JPEG coefficients:
//! precomputed convolution maps, batch normalization, component-wise
//! addition and global average pooling.

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Scalar};
use crate::transform::{BlockCodec, JpegTransformPair, PlaneGeometry, QuantTable};

/// Network activation in the JPEG transform domain:
/// `(batch, channels, block_rows, block_cols, 64)`, one table for all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor<T> {
    data: DenseTensor<T>,
    quant: QuantTable,
}

impl<T: Scalar> CoefficientTensor<T> {
    pub fn new(data: DenseTensor<T>, quant: QuantTable) -> Result<Self> {
        if data.rank() != 5 || data.shape()[4] != 64 {
            return Err(Error::ShapeMismatch(format!(
                "coefficient tensor must be (batch, channels, rows, cols, 64), got {:?}",
                data.shape()
            )));
        }
        Ok(CoefficientTensor { data, quant })
    }

    pub fn zeros(batch: usize, channels: usize, geometry: PlaneGeometry, quant: QuantTable) -> Result<Self> {
        let data = DenseTensor::zeros(&[batch, channels, geometry.block_rows(), geometry.block_cols(), 64])?;
        Ok(CoefficientTensor { data, quant })
    }

    /// Encodes a spatial `(batch, channels, height, width)` tensor without rounding.
    pub fn from_spatial(x: &DenseTensor<f64>, quant: QuantTable) -> Result<Self> {
        if x.rank() != 4 {
            return Err(Error::ShapeMismatch(format!("expected (batch, channels, h, w), got {:?}", x.shape())));
        }
        let s = x.shape();
        let geometry = PlaneGeometry::new(s[2], s[3])?;
        let codec = BlockCodec::new(geometry, quant);
        let coeffs: Vec<T> = codec.encode_planes(x.data()).into_iter().map(T::from_real).collect();
        let data = DenseTensor::new(vec![s[0], s[1], geometry.block_rows(), geometry.block_cols(), 64], coeffs)?;
        Ok(CoefficientTensor { data, quant })
    }

    /// Decodes to a spatial `(batch, channels, height, width)` tensor in `f64`.
    pub fn to_spatial(&self) -> DenseTensor<f64> {
        let g = self.geometry();
        let codec = BlockCodec::new(g, self.quant);
        let coeffs: Vec<f64> = self.data.data().iter().map(|v| v.to_real()).collect();
        DenseTensor::new(vec![self.batch(), self.channels(), g.height(), g.width()], codec.decode_planes(&coeffs))
            .expect("shape preserved by codec")
    }

    pub fn data(&self) -> &DenseTensor<T> {
        &self.data
    }

    pub fn into_data(self) -> DenseTensor<T> {
        self.data
    }

    pub fn quant(&self) -> &QuantTable {
        &self.quant
    }

    pub fn batch(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn block_rows(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn block_cols(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn num_blocks(&self) -> usize {
        self.block_rows() * self.block_cols()
    }

    pub fn geometry(&self) -> PlaneGeometry {
        PlaneGeometry::new(self.block_rows() * 8, self.block_cols() * 8).expect("block-aligned by construction")
    }

    pub fn cast<U: Scalar>(&self) -> CoefficientTensor<U> {
        CoefficientTensor { data: self.data.cast(), quant: self.quant }
    }

    /// Re-expresses the same planes under another table: `c_k · q_k / q'_k`.
    pub fn requantize(&self, target: QuantTable) -> Self {
        if target == self.quant {
            return self.clone();
        }
        let ratio: Vec<T> = (0..64).map(|k| T::from_real(self.quant.get(k) / target.get(k))).collect();
        let mut data = self.data.clone();
        for block in data.data_mut().chunks_exact_mut(64) {
            for (c, &r) in block.iter_mut().zip(&ratio) {
                *c *= r;
            }
        }
        CoefficientTensor { data, quant: target }
    }

    /// Applies `pixel ↦ (pixel + offset) · scale` to every plane: all
    /// coefficients scale, and the offset lands on DC only.
    pub fn affine(&self, scale: f64, offset: f64) -> Self {
        let dc_shift = T::from_real(offset * scale * 8.0 / self.quant.get(0));
        let scale = T::from_real(scale);
        let mut data = self.data.clone();
        for block in data.data_mut().chunks_exact_mut(64) {
            for c in block.iter_mut() {
                *c *= scale;
            }
            block[0] += dc_shift;
        }
        CoefficientTensor { data, quant: self.quant }
    }

    pub(crate) fn with_data(&self, data: DenseTensor<T>) -> Self {
        CoefficientTensor { data, quant: self.quant }
    }
}

/// Reshapes `J̃` into a batch of single-channel images, one per coefficient
/// basis function: `(block_rows · block_cols · 64, 1, height, width)`.
pub fn explode_decoder(pair: &JpegTransformPair) -> Result<DenseTensor<f64>> {
    let g = pair.geometry;
    pair.inverse.reshape(&[g.coefficients(), 1, g.height(), g.width()])
}

/// Precomputed JPEG-domain convolution `Ξ`.
///
/// `xi` has shape `(in_ch, in_rows, in_cols, 64, out_ch, out_rows, out_cols, 64)`
/// and is applied as one `(batch × in_dim) · (in_dim × out_dim)` product.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvMap<T> {
    pub xi: DenseTensor<T>,
    pub stride: usize,
    pub kernel_size: (usize, usize),
    /// Source spatial kernel `(out_ch, in_ch, kh, kw)`.
    pub kernel: DenseTensor<f64>,
    pub in_geometry: PlaneGeometry,
    pub out_geometry: PlaneGeometry,
    pub in_quant: QuantTable,
    pub out_quant: QuantTable,
}

impl<T: Scalar> ConvMap<T> {
    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    fn in_dim(&self) -> usize {
        self.in_channels() * self.in_geometry.coefficients()
    }

    fn out_dim(&self) -> usize {
        self.out_channels() * self.out_geometry.coefficients()
    }

    /// Reassembles a map from a stored `xi` tensor, validating its shape.
    pub fn from_parts(
        xi: DenseTensor<T>,
        kernel: DenseTensor<f64>,
        in_geometry: PlaneGeometry,
        stride: usize,
        in_quant: QuantTable,
        out_quant: QuantTable,
    ) -> Result<Self> {
        let (out_ch, in_ch, kh, kw) = kernel_dims(&kernel)?;
        let out_geometry = in_geometry.strided(stride)?;
        let expect = [
            in_ch,
            in_geometry.block_rows(),
            in_geometry.block_cols(),
            64,
            out_ch,
            out_geometry.block_rows(),
            out_geometry.block_cols(),
            64,
        ];
        if xi.shape() != expect {
            return Err(Error::ShapeMismatch(format!("stored map {:?}, expected {expect:?}", xi.shape())));
        }
        Ok(ConvMap { xi, stride, kernel_size: (kh, kw), kernel, in_geometry, out_geometry, in_quant, out_quant })
    }
}

fn kernel_dims(kernel: &DenseTensor<f64>) -> Result<(usize, usize, usize, usize)> {
    match *kernel.shape() {
        [o, i, kh, kw] => Ok((o, i, kh, kw)),
        _ => Err(Error::ShapeMismatch(format!("kernel must be (out, in, kh, kw), got {:?}", kernel.shape()))),
    }
}

/// Cross-correlates a batch of single-channel images with `out_ch` filters,
/// zero "same" padding. `images` is `(count, h, w)`, `filters` is
/// `(out_ch, kh, kw)`; the result is `(count, out_ch, h / stride, w / stride)`.
fn correlate_batch(
    images: &[f64],
    count: usize,
    (h, w): (usize, usize),
    filters: &[f64],
    out_ch: usize,
    (kh, kw): (usize, usize),
    stride: usize,
) -> Vec<f64> {
    let (oh, ow) = (h / stride, w / stride);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; count * out_ch * oh * ow];
    for b in 0..count {
        let img = &images[b * h * w..(b + 1) * h * w];
        for o in 0..out_ch {
            let dst = &mut out[(b * out_ch + o) * oh * ow..(b * out_ch + o + 1) * oh * ow];
            for i in 0..kh {
                for j in 0..kw {
                    let wgt = filters[(o * kh + i) * kw + j];
                    if wgt == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let sy = (y * stride) as isize + i as isize - ph;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let row = &img[sy as usize * w..(sy as usize + 1) * w];
                        let drow = &mut dst[y * ow..(y + 1) * ow];
                        for (x, d) in drow.iter_mut().enumerate() {
                            let sx = (x * stride) as isize + j as isize - pw;
                            if sx >= 0 && sx < w as isize {
                                *d += wgt * row[sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Builds `Ξ` for a spatial kernel.
///
/// Every basis image of the exploded decoder is convolved with the kernel
/// for each (input, output) channel pair, then encoded with the forward map
/// of the output geometry and table. Arithmetic runs in `f64`; rows are
/// narrowed to `T` as each input channel completes.
pub fn build_conv_map<T: Scalar>(
    kernel: &DenseTensor<f64>,
    in_geometry: PlaneGeometry,
    stride: usize,
    in_quant: QuantTable,
    out_quant: QuantTable,
) -> Result<ConvMap<T>> {
    let (out_ch, in_ch, kh, kw) = kernel_dims(kernel)?;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::ShapeMismatch(format!("kernel {kh}x{kw} must have odd extents")));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::StrideUnsupported(stride));
    }
    let out_geometry = in_geometry.strided(stride)?;

    let pair = JpegTransformPair::new(in_geometry, in_quant)?;
    let basis = explode_decoder(&pair)?;
    let n_basis = in_geometry.coefficients();
    let codec = BlockCodec::new(out_geometry, out_quant);
    let out_dim = out_ch * out_geometry.coefficients();

    let mut xi = Vec::with_capacity(in_ch * n_basis * out_dim);
    const CHUNK: usize = 128;
    for p in 0..in_ch {
        // filters[o, i, j] = kernel[o, p, i, j]
        let mut filters = Vec::with_capacity(out_ch * kh * kw);
        for o in 0..out_ch {
            for i in 0..kh {
                for j in 0..kw {
                    filters.push(kernel.get(&[o, p, i, j]));
                }
            }
        }
        for start in (0..n_basis).step_by(CHUNK) {
            let count = CHUNK.min(n_basis - start);
            let images = &basis.data()[start * in_geometry.pixels()..(start + count) * in_geometry.pixels()];
            let convolved = correlate_batch(
                images,
                count,
                (in_geometry.height(), in_geometry.width()),
                &filters,
                out_ch,
                (kh, kw),
                stride,
            );
            // (count, out_ch, h', w') -> (count, out_ch, rows', cols', 64)
            let encoded = codec.encode_planes(&convolved);
            xi.extend(encoded.into_iter().map(T::from_real));
        }
    }
    let xi = DenseTensor::new(
        vec![
            in_ch,
            in_geometry.block_rows(),
            in_geometry.block_cols(),
            64,
            out_ch,
            out_geometry.block_rows(),
            out_geometry.block_cols(),
            64,
        ],
        xi,
    )?;
    Ok(ConvMap {
        xi,
        stride,
        kernel_size: (kh, kw),
        kernel: kernel.clone(),
        in_geometry,
        out_geometry,
        in_quant,
        out_quant,
    })
}

/// Applies `Ξ` to a batch of coefficient tensors.
pub fn apply_conv<T: Scalar>(map: &ConvMap<T>, x: &CoefficientTensor<T>) -> Result<CoefficientTensor<T>> {
    let g = map.in_geometry;
    if x.channels() != map.in_channels() || x.block_rows() != g.block_rows() || x.block_cols() != g.block_cols() {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} does not match map input ({} channels, {}x{} blocks)",
            x.data().shape(),
            map.in_channels(),
            g.block_rows(),
            g.block_cols()
        )));
    }
    if *x.quant() != map.in_quant {
        return Err(Error::QuantMismatch);
    }
    let n = x.batch();
    let mut out = vec![T::zero(); n * map.out_dim()];
    T::gemm(n, map.in_dim(), map.out_dim(), x.data().data(), map.xi.data(), &mut out, false);
    let og = map.out_geometry;
    let data = DenseTensor::new(vec![n, map.out_channels(), og.block_rows(), og.block_cols(), 64], out)?;
    CoefficientTensor::new(data, map.out_quant)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

impl BatchNormParams {
    /// `gamma = 1, beta = 0`, zero mean and unit variance running stats.
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: DEFAULT_BN_EPSILON,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::ShapeMismatch("batch norm parameter lengths differ".into()));
        }
        if self.running_var.iter().any(|&v| v < 0.0) || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::ShapeMismatch("batch norm requires running_var >= 0 and epsilon > 0".into()));
        }
        Ok(())
    }

    /// Folds a batch's statistics into the running averages. `count` is the
    /// number of pixels the variance was taken over.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let m = self.momentum;
        let unbiased = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * var[c] * unbiased;
        }
    }
}

/// Batch normalization on coefficients.
///
/// The channel mean is read from DC alone (`DC · q0 / 8` is the block mean),
/// centering touches DC alone, and the variance of the centered channel is
/// the mean squared dequantized coefficient per pixel, since the DCT is
/// orthonormal. Scaling multiplies every coefficient; the shift lands on DC.
pub fn jpeg_batchnorm<T: Scalar>(
    x: &CoefficientTensor<T>,
    params: &mut BatchNormParams,
    mode: BnMode,
) -> Result<CoefficientTensor<T>> {
    params.validate()?;
    let channels = x.channels();
    if params.channels() != channels {
        return Err(Error::ShapeMismatch(format!(
            "{channels} channels but batch norm has {}",
            params.channels()
        )));
    }
    let quant = *x.quant();
    let dc_scale = quant.dc_to_mean();
    let nb = x.num_blocks();
    let n = x.batch();
    let plane = nb * 64;
    let data = x.data().data();

    let (mean, var) = match mode {
        BnMode::Eval => (params.running_mean.clone(), params.running_var.clone()),
        BnMode::Train => {
            let q2: Vec<f64> = (0..64).map(|k| quant.get(k) * quant.get(k)).collect();
            let mut mean = vec![0.0; channels];
            let mut var = vec![0.0; channels];
            for c in 0..channels {
                let mut dc_sum = 0.0;
                for b in 0..n {
                    let off = (b * channels + c) * plane;
                    for blk in data[off..off + plane].chunks_exact(64) {
                        dc_sum += blk[0].to_real();
                    }
                }
                let mu = dc_sum * dc_scale / (n * nb) as f64;
                let dc_center = mu / dc_scale;
                let mut energy = 0.0;
                for b in 0..n {
                    let off = (b * channels + c) * plane;
                    for blk in data[off..off + plane].chunks_exact(64) {
                        let dc = blk[0].to_real() - dc_center;
                        energy += dc * dc * q2[0];
                        for k in 1..64 {
                            let v = blk[k].to_real();
                            energy += v * v * q2[k];
                        }
                    }
                }
                mean[c] = mu;
                var[c] = energy / (64 * n * nb) as f64;
            }
            params.update_running(&mean, &var, n * nb * 64);
            (mean, var)
        }
    };

    let mut out = x.data().clone();
    let out_data = out.data_mut();
    for c in 0..channels {
        let scale = params.gamma[c] / (var[c] + params.epsilon).sqrt();
        let dc_offset = (params.beta[c] - mean[c] * scale) / dc_scale;
        let (scale_t, dc_t) = (T::from_real(scale), T::from_real(dc_offset));
        for b in 0..n {
            let off = (b * channels + c) * plane;
            for blk in out_data[off..off + plane].chunks_exact_mut(64) {
                for v in blk.iter_mut() {
                    *v *= scale_t;
                }
                blk[0] += dc_t;
            }
        }
    }
    Ok(x.with_data(out))
}

/// Component-wise sum of two coefficient tensors.
pub fn jpeg_add<T: Scalar>(a: &CoefficientTensor<T>, b: &CoefficientTensor<T>) -> Result<CoefficientTensor<T>> {
    if a.quant() != b.quant() {
        return Err(Error::QuantMismatch);
    }
    Ok(a.with_data(a.data().add(b.data())?))
}

/// Per-channel spatial mean, `(batch, channels)`, read from DC coefficients.
pub fn global_avg_pool<T: Scalar>(x: &CoefficientTensor<T>) -> DenseTensor<f64> {
    let (n, channels, nb) = (x.batch(), x.channels(), x.num_blocks());
    let dc_scale = x.quant().dc_to_mean();
    let data = x.data().data();
    let mut out = Vec::with_capacity(n * channels);
    for b in 0..n {
        for c in 0..channels {
            let off = (b * channels + c) * nb * 64;
            let sum: f64 = data[off..off + nb * 64].chunks_exact(64).map(|blk| blk[0].to_real()).sum();
            out.push(if nb == 1 { sum * dc_scale } else { sum * dc_scale / nb as f64 });
        }
    }
    DenseTensor::new(vec![n, channels], out).expect("non-empty batch")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coeffs(rng: &mut ChaCha8Rng, shape: [usize; 4], quant: QuantTable) -> CoefficientTensor<f64> {
        let x = DenseTensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)).unwrap();
        CoefficientTensor::from_spatial(&x, quant).unwrap()
    }

    #[test]
    fn explode_decoder_shapes() {
        let q = QuantTable::ones();
        let pair = JpegTransformPair::new(PlaneGeometry::new(32, 32).unwrap(), q).unwrap();
        let j = explode_decoder(&pair).unwrap();
        assert_eq!(j.shape(), &[1024, 1, 32, 32]);
        assert_eq!(j.reshape(pair.inverse.shape()).unwrap(), pair.inverse);
        let pair = JpegTransformPair::new(PlaneGeometry::new(8, 8).unwrap(), q).unwrap();
        assert_eq!(explode_decoder(&pair).unwrap().shape(), &[64, 1, 8, 8]);
    }

    #[test]
    fn identity_kernel_gives_identity_map() {
        let g = PlaneGeometry::new(16, 16).unwrap();
        let q = QuantTable::luma_quality(80).unwrap();
        let kernel = DenseTensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let map = build_conv_map::<f64>(&kernel, g, 1, q, q).unwrap();
        let n = g.coefficients();
        let eye = DenseTensor::<f64>::identity(n).unwrap();
        assert!(map.xi.reshape(&[n, n]).unwrap().max_abs_diff(&eye).unwrap() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_coeffs(&mut rng, [2, 1, 16, 16], q);
        let y = apply_conv(&map, &x).unwrap();
        assert!(y.data().max_abs_diff(x.data()).unwrap() < 1e-10);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let g = PlaneGeometry::new(16, 16).unwrap();
        let q = QuantTable::ones();
        let kernel = DenseTensor::zeros(&[2, 1, 3, 3]).unwrap();
        let map = build_conv_map::<f64>(&kernel, g, 2, q, q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_coeffs(&mut rng, [1, 1, 16, 16], q);
        let y = apply_conv(&map, &x).unwrap();
        assert_eq!(y.data().shape(), &[1, 2, 1, 1, 64]);
        assert!(y.data().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn averaging_kernel_on_constant_plane() {
        let g = PlaneGeometry::new(16, 16).unwrap();
        let q = QuantTable::ones();
        let kernel = DenseTensor::new(vec![1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let map = build_conv_map::<f64>(&kernel, g, 1, q, q).unwrap();
        let c = 2.5;
        let x = DenseTensor::new(vec![1, 1, 16, 16], vec![c; 256]).unwrap();
        let y = apply_conv(&map, &CoefficientTensor::from_spatial(&x, q).unwrap()).unwrap().to_spatial();
        for h in 0..16 {
            for w in 0..16 {
                let rows = if h == 0 || h == 15 { 2.0 } else { 3.0 };
                let cols = if w == 0 || w == 15 { 2.0 } else { 3.0 };
                let expect = c * rows * cols / 9.0;
                assert!((y.get(&[0, 0, h, w]) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kernel = DenseTensor::from_fn(&[2, 2, 3, 3], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let g = PlaneGeometry::new(16, 16).unwrap();
        let q = QuantTable::annex_k_luma();
        let a = build_conv_map::<f32>(&kernel, g, 2, q, q).unwrap();
        let b = build_conv_map::<f32>(&kernel, g, 2, q, q).unwrap();
        assert_eq!(a.xi.data(), b.xi.data());
    }

    #[test]
    fn conv_map_errors() {
        let g = PlaneGeometry::new(16, 16).unwrap();
        let q = QuantTable::ones();
        let even = DenseTensor::zeros(&[1, 1, 2, 2]).unwrap();
        assert!(matches!(build_conv_map::<f64>(&even, g, 1, q, q), Err(Error::ShapeMismatch(_))));
        let k = DenseTensor::zeros(&[1, 1, 3, 3]).unwrap();
        assert!(matches!(build_conv_map::<f64>(&k, g, 3, q, q), Err(Error::StrideUnsupported(3))));
        // 8x8 with stride 2 leaves a 4x4 plane.
        let small = PlaneGeometry::new(8, 8).unwrap();
        assert!(matches!(build_conv_map::<f64>(&k, small, 2, q, q), Err(Error::GeometryError(_))));

        let map = build_conv_map::<f64>(&k, g, 1, q, q).unwrap();
        let wrong_q = CoefficientTensor::<f64>::zeros(1, 1, g, QuantTable::annex_k_luma()).unwrap();
        assert!(matches!(apply_conv(&map, &wrong_q), Err(Error::QuantMismatch)));
        let wrong_c = CoefficientTensor::<f64>::zeros(1, 2, g, q).unwrap();
        assert!(matches!(apply_conv(&map, &wrong_c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn add_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = QuantTable::ones();
        let a = random_coeffs(&mut rng, [2, 3, 8, 16], q);
        let zero = CoefficientTensor::zeros(2, 3, a.geometry(), q).unwrap();
        assert_eq!(jpeg_add(&a, &zero).unwrap(), a);
        let neg = a.with_data(a.data().scale(-1.0));
        assert!(jpeg_add(&a, &neg).unwrap().data().data().iter().all(|&v| v == 0.0));
        let other = CoefficientTensor::zeros(2, 3, a.geometry(), QuantTable::annex_k_luma()).unwrap();
        assert!(matches!(jpeg_add(&a, &other), Err(Error::QuantMismatch)));
    }

    #[test]
    fn gap_reads_dc() {
        let mut q = [1u16; 64];
        q[0] = 8;
        let q = QuantTable::new(&q).unwrap();
        let mut data = DenseTensor::zeros(&[1, 1, 1, 1, 64]).unwrap();
        data.set(&[0, 0, 0, 0, 0], 3.75);
        let x = CoefficientTensor::new(data, q).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[3.75]);

        let c = DenseTensor::new(vec![1, 2, 16, 16], [vec![1.5; 256], vec![-4.0; 256]].concat()).unwrap();
        let x = CoefficientTensor::<f64>::from_spatial(&c, QuantTable::annex_k_luma()).unwrap();
        let gap = global_avg_pool(&x);
        assert!((gap.data()[0] - 1.5).abs() < 1e-12 && (gap.data()[1] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_constant_channel() {
        let q = QuantTable::luma_quality(50).unwrap();
        let x = DenseTensor::new(vec![2, 1, 8, 8], vec![7.0; 128]).unwrap();
        let x = CoefficientTensor::<f64>::from_spatial(&x, q).unwrap();
        let mut p = BatchNormParams::identity(1);
        p.beta[0] = 0.5;
        let y = jpeg_batchnorm(&x, &mut p, BnMode::Train).unwrap();
        for blk in y.data().data().chunks_exact(64) {
            assert!((blk[0] - 0.5 * 8.0 / q.get(0)).abs() < 1e-9);
            assert!(blk[1..].iter().all(|v| v.abs() < 1e-9));
        }
        assert!((p.running_mean[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = QuantTable::ones();
        let mut x = DenseTensor::from_fn(&[4, 2, 16, 16], |_| rng.gen_range(-1.0..1.0)).unwrap();
        // Standardize each channel spatially.
        let plane = 256;
        for c in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|b| x.data()[(b * 2 + c) * plane..(b * 2 + c + 1) * plane].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for b in 0..4 {
                for v in &mut x.data_mut()[(b * 2 + c) * plane..(b * 2 + c + 1) * plane] {
                    *v = (*v - mean) / var.sqrt();
                }
            }
        }
        let cx = CoefficientTensor::<f64>::from_spatial(&x, q).unwrap();
        let mut p = BatchNormParams::identity(2);
        p.epsilon = 1e-12;
        let y = jpeg_batchnorm(&cx, &mut p, BnMode::Train).unwrap();
        assert!(y.data().max_abs_diff(cx.data()).unwrap() < 1e-6);
    }

    #[test]
    fn batchnorm_channel_mismatch() {
        let q = QuantTable::ones();
        let x = CoefficientTensor::<f64>::zeros(1, 2, PlaneGeometry::new(8, 8).unwrap(), q).unwrap();
        let mut p = BatchNormParams::identity(3);
        assert!(matches!(jpeg_batchnorm(&x, &mut p, BnMode::Eval), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn requantize_and_affine_preserve_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DenseTensor::from_fn(&[1, 1, 16, 8], |_| rng.gen_range(0.0..255.0)).unwrap();
        let a = CoefficientTensor::<f64>::from_spatial(&x, QuantTable::annex_k_luma()).unwrap();
        let b = a.requantize(QuantTable::ones());
        assert!(b.to_spatial().max_abs_diff(&x).unwrap() < 1e-9);
        let shifted = a.affine(0.5, -128.0).to_spatial();
        let expect = x.map(|v| (v - 128.0) * 0.5);
        assert!(shifted.max_abs_diff(&expect).unwrap() < 1e-9);
    }
}
