//! The residual classifier in both domains and the conversion between them.
//!
//! Three residual blocks, the last two downsampling by 2, so a 32×32 input
//! ends as one 8×8 block per channel. Each block computes
//! `relu(bn2(conv2(relu(bn1(conv1 x))))) + shortcut(x)`, where the shortcut
//! is a 1×1 projection whenever the stride or channel count changes. The
//! head is global average pooling followed by a fully connected layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asm::{apx_relu, asm_relu, build_harmonic_mixing, FrequencyBudget, HarmonicMixingTensor};
use crate::error::{Error, Result};
use crate::ops::{
    apply_conv, build_conv_map, global_avg_pool, jpeg_add, jpeg_batchnorm, BatchNormParams, BnMode,
    CoefficientTensor, ConvMap, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM,
};
use crate::spatial::fully_connected;
use crate::tensor::{DenseTensor, Scalar};
use crate::transform::{PlaneGeometry, QuantTable};
use crate::weights::{Domain, ModelWeights, WeightTensor, WeightsMetadata};

/// Architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Output channels of each residual block.
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel_size: usize,
    pub num_classes: usize,
}

impl NetworkSpec {
    /// One-channel 32×32 input, channel plan 16/32/64, ten classes.
    pub fn standard() -> Self {
        Self::with_channels(1, [16, 32, 64], 10)
    }

    pub fn with_channels(input_channels: usize, channels: [usize; 3], num_classes: usize) -> Self {
        NetworkSpec {
            input_channels,
            height: 32,
            width: 32,
            channels: channels.to_vec(),
            strides: vec![1, 2, 2],
            kernel_size: 3,
            num_classes,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn block_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.input_channels
        } else {
            self.channels[i - 1]
        }
    }

    pub fn needs_projection(&self, i: usize) -> bool {
        self.strides[i] != 1 || self.block_in_channels(i) != self.channels[i]
    }

    /// Input geometry of each block.
    pub fn block_geometries(&self) -> Result<Vec<PlaneGeometry>> {
        let mut g = PlaneGeometry::new(self.height, self.width)?;
        let mut out = Vec::with_capacity(self.num_blocks());
        for &s in &self.strides {
            out.push(g);
            g = g.strided(s)?;
        }
        Ok(out)
    }

    pub fn output_geometry(&self) -> Result<PlaneGeometry> {
        let last = *self.block_geometries()?.last().ok_or_else(|| Error::ShapeMismatch("no blocks".into()))?;
        last.strided(*self.strides.last().unwrap())
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::ShapeMismatch("channel plan and strides must be non-empty and equal length".into()));
        }
        if let Some(&s) = self.strides.iter().find(|&&s| s != 1 && s != 2) {
            return Err(Error::StrideUnsupported(s));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if self.input_channels == 0 || self.num_classes == 0 || self.channels.contains(&0) {
            return Err(Error::ShapeMismatch("channel counts must be positive".into()));
        }
        let out = self.output_geometry()?;
        if out.num_blocks() != 1 {
            return Err(Error::GeometryError(format!(
                "final feature map is {}x{}, expected a single 8x8 block",
                out.height(),
                out.width()
            )));
        }
        Ok(())
    }
}

/// Pixel normalization applied before the first convolution:
/// `x = (pixel − mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNormalization {
    pub mean: f64,
    pub scale: f64,
}

impl InputNormalization {
    pub const IDENTITY: InputNormalization = InputNormalization { mean: 0.0, scale: 1.0 };
}

impl Default for InputNormalization {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlockWeights {
    pub conv1: DenseTensor<f64>,
    pub bn1: BatchNormParams,
    pub conv2: DenseTensor<f64>,
    pub bn2: BatchNormParams,
    pub projection: Option<DenseTensor<f64>>,
}

/// Spatial-domain model with typed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialModel {
    pub spec: NetworkSpec,
    pub blocks: Vec<ResidualBlockWeights>,
    pub fc_weight: DenseTensor<f64>,
    pub fc_bias: Vec<f64>,
    pub normalization: InputNormalization,
}

fn bn_names(prefix: &str) -> [String; 4] {
    ["gamma", "beta", "running_mean", "running_var"].map(|f| format!("{prefix}.{f}"))
}

impl SpatialModel {
    /// Random weights: He-uniform convolutions, batch norm parameters near
    /// the identity, uniform fully connected head.
    pub fn random(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = spec.kernel_size;
        let conv = |rng: &mut ChaCha8Rng, out: usize, inp: usize, k: usize| {
            let bound = (6.0 / (inp * k * k) as f64).sqrt();
            DenseTensor::from_fn(&[out, inp, k, k], |_| rng.gen_range(-bound..bound)).expect("positive dims")
        };
        let bn = |rng: &mut ChaCha8Rng, c: usize| BatchNormParams {
            gamma: (0..c).map(|_| rng.gen_range(0.8..1.2)).collect(),
            beta: (0..c).map(|_| rng.gen_range(-0.2..0.2)).collect(),
            running_mean: (0..c).map(|_| rng.gen_range(-0.2..0.2)).collect(),
            running_var: (0..c).map(|_| rng.gen_range(0.5..1.5)).collect(),
            epsilon: DEFAULT_BN_EPSILON,
            momentum: DEFAULT_BN_MOMENTUM,
        };
        let mut blocks = Vec::new();
        for i in 0..spec.num_blocks() {
            let (cin, cout) = (spec.block_in_channels(i), spec.channels[i]);
            let conv1 = conv(&mut rng, cout, cin, k);
            let bn1 = bn(&mut rng, cout);
            let conv2 = conv(&mut rng, cout, cout, k);
            let bn2 = bn(&mut rng, cout);
            let projection = spec.needs_projection(i).then(|| conv(&mut rng, cout, cin, 1));
            blocks.push(ResidualBlockWeights { conv1, bn1, conv2, bn2, projection });
        }
        let feat = *spec.channels.last().unwrap();
        let bound = 1.0 / (feat as f64).sqrt();
        let fc_weight = DenseTensor::from_fn(&[spec.num_classes, feat], |_| rng.gen_range(-bound..bound))?;
        let fc_bias = (0..spec.num_classes).map(|_| rng.gen_range(-bound..bound)).collect();
        Ok(SpatialModel { spec: spec.clone(), blocks, fc_weight, fc_bias, normalization: InputNormalization::IDENTITY })
    }

    /// Every convolution and fully connected weight zero, identity batch
    /// norms; only the fully connected bias is kept from `bias`.
    pub fn zeros(spec: &NetworkSpec, bias: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if bias.len() != spec.num_classes {
            return Err(Error::ShapeMismatch(format!("{} biases for {} classes", bias.len(), spec.num_classes)));
        }
        let k = spec.kernel_size;
        let blocks = (0..spec.num_blocks())
            .map(|i| {
                let (cin, cout) = (spec.block_in_channels(i), spec.channels[i]);
                Ok(ResidualBlockWeights {
                    conv1: DenseTensor::zeros(&[cout, cin, k, k])?,
                    bn1: BatchNormParams::identity(cout),
                    conv2: DenseTensor::zeros(&[cout, cout, k, k])?,
                    bn2: BatchNormParams::identity(cout),
                    projection: if spec.needs_projection(i) { Some(DenseTensor::zeros(&[cout, cin, 1, 1])?) } else { None },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let fc_weight = DenseTensor::zeros(&[spec.num_classes, *spec.channels.last().unwrap()])?;
        Ok(SpatialModel { spec: spec.clone(), blocks, fc_weight, fc_bias: bias, normalization: InputNormalization::IDENTITY })
    }

    pub fn from_weights(weights: &ModelWeights) -> Result<Self> {
        let spec = weights.metadata.network.clone();
        spec.validate()?;
        let eps = weights.metadata.bn_epsilon;
        let k = spec.kernel_size;
        let read_bn = |prefix: &str, c: usize| -> Result<BatchNormParams> {
            let [g, b, m, v] = bn_names(prefix);
            let p = BatchNormParams {
                gamma: weights.require(&g, &[c])?.into_data(),
                beta: weights.require(&b, &[c])?.into_data(),
                running_mean: weights.require(&m, &[c])?.into_data(),
                running_var: weights.require(&v, &[c])?.into_data(),
                epsilon: eps,
                momentum: DEFAULT_BN_MOMENTUM,
            };
            p.validate()?;
            Ok(p)
        };
        let mut blocks = Vec::new();
        for i in 0..spec.num_blocks() {
            let (cin, cout) = (spec.block_in_channels(i), spec.channels[i]);
            let projection = if spec.needs_projection(i) {
                Some(weights.require(&format!("block{i}.proj.weight"), &[cout, cin, 1, 1])?)
            } else {
                None
            };
            blocks.push(ResidualBlockWeights {
                conv1: weights.require(&format!("block{i}.conv1.weight"), &[cout, cin, k, k])?,
                bn1: read_bn(&format!("block{i}.bn1"), cout)?,
                conv2: weights.require(&format!("block{i}.conv2.weight"), &[cout, cout, k, k])?,
                bn2: read_bn(&format!("block{i}.bn2"), cout)?,
                projection,
            });
        }
        let feat = *spec.channels.last().unwrap();
        Ok(SpatialModel {
            fc_weight: weights.require("fc.weight", &[spec.num_classes, feat])?,
            fc_bias: weights.require("fc.bias", &[spec.num_classes])?.into_data(),
            blocks,
            spec,
            normalization: weights.metadata.normalization,
        })
    }

    /// Serializes into a spatial-domain container.
    pub fn to_weights(&self, quant: QuantTable, budget: FrequencyBudget) -> ModelWeights {
        let eps = self.blocks.first().map_or(DEFAULT_BN_EPSILON, |b| b.bn1.epsilon);
        let mut w = ModelWeights::new(WeightsMetadata {
            domain: Domain::Spatial,
            quant,
            budget,
            normalization: self.normalization,
            bn_epsilon: eps,
            network: self.spec.clone(),
        });
        let vec = |v: &[f64]| WeightTensor::F64(DenseTensor::new(vec![v.len()], v.to_vec()).expect("non-empty"));
        for (i, b) in self.blocks.iter().enumerate() {
            w.insert(format!("block{i}.conv1.weight"), WeightTensor::F64(b.conv1.clone()));
            for (name, p) in [("bn1", &b.bn1), ("bn2", &b.bn2)] {
                let [g, be, m, v] = bn_names(&format!("block{i}.{name}"));
                w.insert(g, vec(&p.gamma));
                w.insert(be, vec(&p.beta));
                w.insert(m, vec(&p.running_mean));
                w.insert(v, vec(&p.running_var));
            }
            w.insert(format!("block{i}.conv2.weight"), WeightTensor::F64(b.conv2.clone()));
            if let Some(p) = &b.projection {
                w.insert(format!("block{i}.proj.weight"), WeightTensor::F64(p.clone()));
            }
        }
        w.insert("fc.weight", WeightTensor::F64(self.fc_weight.clone()));
        w.insert("fc.bias", vec(&self.fc_bias));
        w
    }
}

/// Which transform-domain ReLu the model applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluVariant {
    Asm,
    Apx,
}

#[derive(Debug, Clone)]
pub struct JpegResidualBlock<T> {
    pub conv1: ConvMap<T>,
    pub bn1: BatchNormParams,
    pub conv2: ConvMap<T>,
    pub bn2: BatchNormParams,
    pub projection: Option<ConvMap<T>>,
}

/// Transform-domain model: precomputed convolution maps, batch norm
/// parameters, ReLu budget, and the untouched fully connected head.
#[derive(Debug, Clone)]
pub struct JpegModel<T> {
    pub spec: NetworkSpec,
    pub quant: QuantTable,
    pub budget: FrequencyBudget,
    pub relu: ReluVariant,
    pub normalization: InputNormalization,
    pub blocks: Vec<JpegResidualBlock<T>>,
    pub fc_weight: DenseTensor<f64>,
    pub fc_bias: Vec<f64>,
    pub mixing: HarmonicMixingTensor<T>,
}

/// Converts spatial weights to a transform-domain model: every convolution
/// becomes a precomputed map, batch norm parameters carry over with eval
/// semantics, the head is unchanged, ReLu becomes ASM at the given budget.
pub fn convert_model<T: Scalar>(
    spatial: &ModelWeights,
    spec: &NetworkSpec,
    quant: QuantTable,
    budget: FrequencyBudget,
) -> Result<JpegModel<T>> {
    if &spatial.metadata.network != spec {
        return Err(Error::ShapeMismatch("weights were saved for a different network".into()));
    }
    JpegModel::from_spatial(&SpatialModel::from_weights(spatial)?, quant, budget)
}

impl<T: Scalar> JpegModel<T> {
    pub fn from_spatial(model: &SpatialModel, quant: QuantTable, budget: FrequencyBudget) -> Result<Self> {
        Self::assemble(model, quant, budget, |_, kernel, g, stride| build_conv_map(kernel, g, stride, quant, quant))
    }

    fn assemble(
        model: &SpatialModel,
        quant: QuantTable,
        budget: FrequencyBudget,
        mut map: impl FnMut(&str, &DenseTensor<f64>, PlaneGeometry, usize) -> Result<ConvMap<T>>,
    ) -> Result<Self> {
        let spec = &model.spec;
        spec.validate()?;
        let geometries = spec.block_geometries()?;
        let mut blocks = Vec::with_capacity(model.blocks.len());
        for (i, (b, (&g, &stride))) in model.blocks.iter().zip(geometries.iter().zip(&spec.strides)).enumerate() {
            let projection = match &b.projection {
                Some(p) => Some(map(&format!("block{i}.proj"), p, g, stride)?),
                None => None,
            };
            blocks.push(JpegResidualBlock {
                conv1: map(&format!("block{i}.conv1"), &b.conv1, g, stride)?,
                bn1: b.bn1.clone(),
                conv2: map(&format!("block{i}.conv2"), &b.conv2, g.strided(stride)?, 1)?,
                bn2: b.bn2.clone(),
                projection,
            });
        }
        Ok(JpegModel {
            spec: spec.clone(),
            quant,
            budget,
            relu: ReluVariant::Asm,
            normalization: model.normalization,
            blocks,
            fc_weight: model.fc_weight.clone(),
            fc_bias: model.fc_bias.clone(),
            mixing: build_harmonic_mixing(quant),
        })
    }

    /// Loads a model from either container domain. A JPEG-domain container
    /// supplies its precomputed maps; a spatial one is converted with the
    /// table and budget recorded in its metadata.
    /// The container is consumed so large maps move rather than copy.
    pub fn from_weights(mut weights: ModelWeights) -> Result<Self> {
        let spatial = SpatialModel::from_weights(&weights)?;
        let meta = weights.metadata.clone();
        match meta.domain {
            Domain::Spatial => Self::from_spatial(&spatial, meta.quant, meta.budget),
            Domain::Jpeg => Self::assemble(&spatial, meta.quant, meta.budget, |name, kernel, g, stride| {
                let xi = weights
                    .take(&format!("{name}.xi"))
                    .ok_or_else(|| Error::ShapeMismatch(format!("missing map `{name}.xi`")))?
                    .into_scalar::<T>();
                ConvMap::from_parts(xi, kernel.clone(), g, stride, meta.quant, meta.quant)
            }),
        }
    }

    /// JPEG-domain container: the spatial entries plus each precomputed map,
    /// moved out of the model.
    pub fn into_weights(self) -> ModelWeights {
        let spatial = self.to_spatial_model();
        let mut w = spatial.to_weights(self.quant, self.budget);
        w.metadata.domain = Domain::Jpeg;
        for (i, b) in self.blocks.into_iter().enumerate() {
            w.insert(format!("block{i}.conv1.xi"), WeightTensor::from_scalar(b.conv1.xi));
            w.insert(format!("block{i}.conv2.xi"), WeightTensor::from_scalar(b.conv2.xi));
            if let Some(p) = b.projection {
                w.insert(format!("block{i}.proj.xi"), WeightTensor::from_scalar(p.xi));
            }
        }
        w
    }

    /// Source weights recovered from the provenance kernels.
    pub fn to_spatial_model(&self) -> SpatialModel {
        SpatialModel {
            spec: self.spec.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResidualBlockWeights {
                    conv1: b.conv1.kernel.clone(),
                    bn1: b.bn1.clone(),
                    conv2: b.conv2.kernel.clone(),
                    bn2: b.bn2.clone(),
                    projection: b.projection.as_ref().map(|p| p.kernel.clone()),
                })
                .collect(),
            fc_weight: self.fc_weight.clone(),
            fc_bias: self.fc_bias.clone(),
            normalization: self.normalization,
        }
    }

    pub fn with_budget(mut self, budget: FrequencyBudget) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_relu(mut self, relu: ReluVariant) -> Self {
        self.relu = relu;
        self
    }

    fn relu(&self, x: &CoefficientTensor<T>) -> Result<CoefficientTensor<T>> {
        match self.relu {
            ReluVariant::Asm => asm_relu(x, self.budget, &self.mixing),
            ReluVariant::Apx => apx_relu(x, self.budget, &self.quant),
        }
    }

    /// Logits `(batch, classes)` for coefficients of un-normalized input planes.
    pub fn forward(&self, input: &CoefficientTensor<T>) -> Result<DenseTensor<f64>> {
        forward(self, input)
    }
}

/// Transform-domain forward pass with eval-mode batch norm.
pub fn forward<T: Scalar>(model: &JpegModel<T>, input: &CoefficientTensor<T>) -> Result<DenseTensor<f64>> {
    let spec = &model.spec;
    if *input.quant() != model.quant {
        return Err(Error::QuantMismatch);
    }
    if input.channels() != spec.input_channels
        || input.block_rows() * 8 != spec.height
        || input.block_cols() * 8 != spec.width
    {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} does not match network input {}x{}x{}",
            input.data().shape(),
            spec.input_channels,
            spec.height,
            spec.width
        )));
    }
    let norm = model.normalization;
    let mut x = if norm == InputNormalization::IDENTITY {
        input.clone()
    } else {
        input.affine(1.0 / norm.scale, -norm.mean)
    };
    for block in &model.blocks {
        let mut bn1 = block.bn1.clone();
        let mut bn2 = block.bn2.clone();
        let y = apply_conv(&block.conv1, &x)?;
        let y = model.relu(&jpeg_batchnorm(&y, &mut bn1, BnMode::Eval)?)?;
        let y = apply_conv(&block.conv2, &y)?;
        let y = model.relu(&jpeg_batchnorm(&y, &mut bn2, BnMode::Eval)?)?;
        let shortcut = match &block.projection {
            Some(p) => apply_conv(p, &x)?,
            None => x,
        };
        x = jpeg_add(&y, &shortcut)?;
    }
    fully_connected(&global_avg_pool(&x), &model.fc_weight, &model.fc_bias)
}

/// Index of the largest logit in each row.
pub fn argmax_rows(logits: &DenseTensor<f64>) -> Vec<usize> {
    let classes = *logits.shape().last().unwrap();
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Agreement between two sets of logits for the same inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitComparison {
    pub inputs: usize,
    pub max_abs_diff: f64,
    pub mean_abs_diff: f64,
    /// Fraction of inputs whose argmax agrees.
    pub argmax_agreement: f64,
}

pub fn compare_logits(a: &DenseTensor<f64>, b: &DenseTensor<f64>) -> Result<LogitComparison> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(Error::ShapeMismatch(format!("logits {:?} vs {:?}", a.shape(), b.shape())));
    }
    let diffs: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect();
    let agree = argmax_rows(a).iter().zip(argmax_rows(b)).filter(|(x, y)| **x == *y).count();
    let inputs = a.shape()[0];
    Ok(LogitComparison {
        inputs,
        max_abs_diff: diffs.iter().copied().fold(0.0, f64::max),
        mean_abs_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
        argmax_agreement: agree as f64 / inputs as f64,
    })
}

/// Wall-clock inference rates on one workload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputReport {
    /// Images pushed through each model in total.
    pub images: usize,
    pub jpeg_seconds: f64,
    pub spatial_seconds: f64,
}

impl ThroughputReport {
    pub fn jpeg_rate(&self) -> f64 {
        self.images as f64 / self.jpeg_seconds
    }

    pub fn spatial_rate(&self) -> f64 {
        self.images as f64 / self.spatial_seconds
    }

    /// JPEG-domain rate over spatial rate.
    pub fn ratio(&self) -> f64 {
        self.jpeg_rate() / self.spatial_rate()
    }
}

/// Times `reps` forward passes of the same batch through both models. The
/// JPEG model receives coefficients, encoded once outside the timed region.
pub fn measure_throughput<T: Scalar>(
    jpeg: &JpegModel<T>,
    spatial: &SpatialModel,
    batch: &DenseTensor<f64>,
    reps: usize,
) -> Result<ThroughputReport> {
    let coeffs = CoefficientTensor::<f64>::from_spatial(batch, jpeg.quant)?.cast::<T>();
    let start = std::time::Instant::now();
    for _ in 0..reps {
        std::hint::black_box(jpeg.forward(&coeffs)?);
    }
    let jpeg_seconds = start.elapsed().as_secs_f64();
    let start = std::time::Instant::now();
    for _ in 0..reps {
        std::hint::black_box(crate::spatial::spatial_forward(spatial, batch)?);
    }
    let spatial_seconds = start.elapsed().as_secs_f64();
    Ok(ThroughputReport { images: batch.shape()[0] * reps, jpeg_seconds, spatial_seconds })
}

/// Random inputs shaped for `spec`: uniform noise around a per-image
/// brightness in `[0, 1)`, with a per-image contrast in `[0, 2)`.
pub fn random_inputs(spec: &NetworkSpec, count: usize, seed: u64) -> DenseTensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_image = spec.input_channels * spec.height * spec.width;
    let data = (0..count)
        .flat_map(|_| {
            let (brightness, contrast) = (rng.gen::<f64>(), 2.0 * rng.gen::<f64>());
            (0..per_image).map(|_| brightness + contrast * (rng.gen::<f64>() - 0.5)).collect::<Vec<_>>()
        })
        .collect();
    DenseTensor::new(vec![count, spec.input_channels, spec.height, spec.width], data).expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::spatial_forward;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_channels: 1,
            height: 16,
            width: 16,
            channels: vec![2, 3],
            strides: vec![1, 2],
            kernel_size: 3,
            num_classes: 4,
        }
    }

    fn random_input(seed: u64, spec: &NetworkSpec, n: usize) -> DenseTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(&[n, spec.input_channels, spec.height, spec.width], |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn spec_validation() {
        NetworkSpec::standard().validate().unwrap();
        tiny_spec().validate().unwrap();
        let mut bad = NetworkSpec::standard();
        bad.strides = vec![1, 1, 2];
        assert!(matches!(bad.validate(), Err(Error::GeometryError(_))));
        bad.strides = vec![1, 2, 4];
        assert!(matches!(bad.validate(), Err(Error::StrideUnsupported(4))));
        let spec = NetworkSpec::standard();
        assert!(spec.needs_projection(0) && spec.needs_projection(1) && spec.needs_projection(2));
        let g = spec.block_geometries().unwrap();
        assert_eq!((g[0].height(), g[1].height(), g[2].height()), (32, 32, 16));
    }

    #[test]
    fn weights_round_trip_through_container() {
        let m = SpatialModel::random(&tiny_spec(), 3).unwrap();
        let w = m.to_weights(QuantTable::ones(), FrequencyBudget::FULL);
        let back = SpatialModel::from_weights(&ModelWeights::from_bytes(&w.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_entry_is_shape_mismatch() {
        let m = SpatialModel::random(&tiny_spec(), 3).unwrap();
        let mut w = m.to_weights(QuantTable::ones(), FrequencyBudget::FULL);
        w.take("block1.proj.weight");
        assert!(matches!(SpatialModel::from_weights(&w), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_model_outputs_bias() {
        let spec = tiny_spec();
        let bias = vec![0.5, -1.0, 2.0, 0.25];
        let m = SpatialModel::zeros(&spec, bias.clone()).unwrap();
        let x = random_input(1, &spec, 3);
        let spatial = spatial_forward(&m, &x).unwrap();
        let jm = JpegModel::<f64>::from_spatial(&m, QuantTable::ones(), FrequencyBudget::new(3).unwrap()).unwrap();
        let jpeg = jm.forward(&CoefficientTensor::from_spatial(&x, QuantTable::ones()).unwrap()).unwrap();
        for row in 0..3 {
            for c in 0..4 {
                assert!((spatial.get(&[row, c]) - bias[c]).abs() < 1e-12);
                assert!((jpeg.get(&[row, c]) - bias[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_budget_matches_spatial() {
        let spec = tiny_spec();
        let m = SpatialModel::random(&spec, 7).unwrap();
        let x = random_input(2, &spec, 5);
        let expect = spatial_forward(&m, &x).unwrap();
        for quant in [QuantTable::ones(), QuantTable::luma_quality(50).unwrap()] {
            let jm = JpegModel::<f64>::from_spatial(&m, quant, FrequencyBudget::FULL).unwrap();
            let got = jm.forward(&CoefficientTensor::from_spatial(&x, quant).unwrap()).unwrap();
            assert!(got.max_abs_diff(&expect).unwrap() < 1e-9);
        }
    }

    #[test]
    fn normalization_is_applied_in_both_domains() {
        let spec = tiny_spec();
        let mut m = SpatialModel::random(&spec, 8).unwrap();
        m.normalization = InputNormalization { mean: 100.0, scale: 50.0 };
        let x = random_input(3, &spec, 2).map(|v| 128.0 + 100.0 * v);
        let expect = spatial_forward(&m, &x).unwrap();
        let quant = QuantTable::annex_k_luma();
        let jm = JpegModel::<f64>::from_spatial(&m, quant, FrequencyBudget::FULL).unwrap();
        let got = jm.forward(&CoefficientTensor::from_spatial(&x, quant).unwrap()).unwrap();
        assert!(got.max_abs_diff(&expect).unwrap() < 1e-9);
    }

    #[test]
    fn residual_identity_block() {
        // Zero convolutions and identity batch norm pass the input through.
        let spec = NetworkSpec {
            input_channels: 2,
            height: 16,
            width: 16,
            channels: vec![2],
            strides: vec![2],
            kernel_size: 3,
            num_classes: 2,
        };
        let mut m = SpatialModel::zeros(&spec, vec![0.0, 0.0]).unwrap();
        for b in &mut m.blocks {
            b.bn1.running_var = vec![1.0 - b.bn1.epsilon; 2];
            b.bn2.running_var = vec![1.0 - b.bn2.epsilon; 2];
            // Identity projection 2->2 at stride 2.
            b.projection = Some(DenseTensor::from_fn(&[2, 2, 1, 1], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap());
        }
        m.fc_weight = DenseTensor::identity(2).unwrap();
        let x = random_input(4, &spec, 3);
        let subsampled_mean = |b: usize, c: usize| {
            let mut s = 0.0;
            for y in (0..16).step_by(2) {
                for xx in (0..16).step_by(2) {
                    s += x.get(&[b, c, y, xx]);
                }
            }
            s / 64.0
        };
        let spatial = spatial_forward(&m, &x).unwrap();
        let jm = JpegModel::<f64>::from_spatial(&m, QuantTable::ones(), FrequencyBudget::new(2).unwrap()).unwrap();
        let jpeg = jm.forward(&CoefficientTensor::from_spatial(&x, QuantTable::ones()).unwrap()).unwrap();
        for b in 0..3 {
            for c in 0..2 {
                assert!((spatial.get(&[b, c]) - subsampled_mean(b, c)).abs() < 1e-12);
                assert!((jpeg.get(&[b, c]) - subsampled_mean(b, c)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn batch_permutation_permutes_logits() {
        let spec = tiny_spec();
        let m = SpatialModel::random(&spec, 9).unwrap();
        let jm = JpegModel::<f32>::from_spatial(&m, QuantTable::ones(), FrequencyBudget::new(5).unwrap()).unwrap();
        let x = random_input(5, &spec, 4);
        let plane = 256;
        let order = [2, 0, 3, 1];
        let permuted = DenseTensor::new(
            vec![4, 1, 16, 16],
            order.iter().flat_map(|&i| x.data()[i * plane..(i + 1) * plane].to_vec()).collect(),
        )
        .unwrap();
        let a = jm.forward(&CoefficientTensor::from_spatial(&x, QuantTable::ones()).unwrap()).unwrap();
        let b = jm.forward(&CoefficientTensor::from_spatial(&permuted, QuantTable::ones()).unwrap()).unwrap();
        for (row, &src) in order.iter().enumerate() {
            for c in 0..4 {
                assert_eq!(b.get(&[row, c]), a.get(&[src, c]));
            }
        }
    }

    #[test]
    fn jpeg_container_round_trip() {
        let spec = tiny_spec();
        let m = SpatialModel::random(&spec, 10).unwrap();
        let jm = JpegModel::<f32>::from_spatial(&m, QuantTable::annex_k_luma(), FrequencyBudget::new(4).unwrap()).unwrap();
        let w = jm.clone().into_weights();
        assert_eq!(w.metadata.domain, Domain::Jpeg);
        assert_eq!(w.get("block0.conv1.xi").unwrap().dtype(), crate::tensor::DType::F32);
        let back = JpegModel::<f32>::from_weights(ModelWeights::from_bytes(&w.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.blocks[1].projection.as_ref().unwrap().xi, jm.blocks[1].projection.as_ref().unwrap().xi);
        assert_eq!(back.budget, jm.budget);
        assert_eq!(back.to_spatial_model(), m);
    }

    #[test]
    fn convert_rejects_spec_mismatch_and_wrong_input() {
        let spec = tiny_spec();
        let w = SpatialModel::random(&spec, 1).unwrap().to_weights(QuantTable::ones(), FrequencyBudget::FULL);
        assert!(convert_model::<f64>(&w, &NetworkSpec::standard(), QuantTable::ones(), FrequencyBudget::FULL).is_err());
        let jm = convert_model::<f64>(&w, &spec, QuantTable::ones(), FrequencyBudget::FULL).unwrap();
        let x = CoefficientTensor::<f64>::zeros(1, 1, PlaneGeometry::new(16, 16).unwrap(), QuantTable::annex_k_luma()).unwrap();
        assert!(matches!(jm.forward(&x), Err(Error::QuantMismatch)));
        let x = CoefficientTensor::<f64>::zeros(1, 2, PlaneGeometry::new(16, 16).unwrap(), QuantTable::ones()).unwrap();
        assert!(matches!(jm.forward(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn argmax_picks_first_maximum() {
        let l = DenseTensor::new(vec![2, 3], vec![0.0, 2.0, 2.0, -1.0, -3.0, -2.0]).unwrap();
        assert_eq!(argmax_rows(&l), vec![1, 0]);
    }

    #[test]
    fn logit_comparison() {
        let a = DenseTensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = DenseTensor::new(vec![2, 2], vec![1.0, 0.5, 2.0, 1.0]).unwrap();
        let c = compare_logits(&a, &b).unwrap();
        assert_eq!(c.max_abs_diff, 2.0);
        assert_eq!(c.mean_abs_diff, 0.625);
        assert_eq!(c.argmax_agreement, 0.5);
    }

    #[test]
    fn throughput_counts_images() {
        let spec = tiny_spec();
        let m = SpatialModel::random(&spec, 1).unwrap();
        let jm = JpegModel::<f32>::from_spatial(&m, QuantTable::ones(), FrequencyBudget::FULL).unwrap();
        let r = measure_throughput(&jm, &m, &random_inputs(&spec, 3, 2), 2).unwrap();
        assert_eq!(r.images, 6);
        assert!(r.jpeg_rate() > 0.0 && r.spatial_rate() > 0.0 && r.ratio() > 0.0);
    }
}
