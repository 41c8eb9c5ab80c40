//! One function per subcommand.

use std::fmt::Write as _;

use jdr_core::io::{coefficients_for_network, load_pnm, parse_jpeg};
use jdr_core::model::{compare_logits, measure_throughput, random_inputs, ReluVariant};
use jdr_core::transform::round_coefficient;
use jdr_core::{
    argmax_rows, generate_test_blocks, relu_error_sweep, spatial_forward, CoefficientTensor, FrequencyBudget,
    InputNormalization, JpegModel, ModelWeights, NetworkSpec, QuantTable, SpatialModel,
};

use crate::config::{parse_budget, parse_quant, read_file, sig9, with_path, write_file, Failure};
use crate::Common;

/// Largest logit difference `equiv` accepts.
const EQUIV_TOLERANCE: f64 = 1e-4;
/// Both variants must reproduce exact ReLu this closely at the full budget.
const FULL_BUDGET_TOLERANCE: f64 = 1e-10;

impl Common {
    fn quant_or(&self, fallback: QuantTable) -> Result<QuantTable, Failure> {
        self.quant.as_deref().map_or(Ok(fallback), parse_quant)
    }

    fn budget_or(&self, fallback: FrequencyBudget) -> Result<FrequencyBudget, Failure> {
        self.budget.map_or(Ok(fallback), parse_budget)
    }
}

fn load_weights(path: &str) -> Result<ModelWeights, Failure> {
    ModelWeights::load(path).map_err(with_path(path))
}

/// Spatial model from a weight file, or random standard weights from the
/// seed, with the table and budget the flags or file select.
fn spatial_model(common: &Common, weights: Option<&str>) -> Result<(SpatialModel, QuantTable, FrequencyBudget), Failure> {
    match weights {
        Some(path) => {
            let w = load_weights(path)?;
            let model = SpatialModel::from_weights(&w).map_err(with_path(path))?;
            Ok((model, common.quant_or(w.metadata.quant)?, common.budget_or(w.metadata.budget)?))
        }
        None => Ok((
            SpatialModel::random(&NetworkSpec::standard(), common.seed)?,
            common.quant_or(QuantTable::ones())?,
            common.budget_or(FrequencyBudget::FULL)?,
        )),
    }
}

fn describe(spec: &NetworkSpec) -> String {
    let channels: Vec<String> = spec.channels.iter().map(usize::to_string).collect();
    format!(
        "{}x{}x{} input, channels {}, {} classes",
        spec.input_channels,
        spec.height,
        spec.width,
        channels.join("/"),
        spec.num_classes
    )
}

pub fn equiv(common: &Common, batch: usize, weights: Option<&str>) -> Result<(), Failure> {
    if batch == 0 {
        return Err(Failure::Usage("--batch must be positive".into()));
    }
    let (spatial, quant, budget) = spatial_model(common, weights)?;
    let jpeg = JpegModel::<f32>::from_spatial(&spatial, quant, budget)?;
    let x = random_inputs(&spatial.spec, batch, common.seed);
    let expect = spatial_forward(&spatial, &x)?;
    let got = jpeg.forward(&CoefficientTensor::<f64>::from_spatial(&x, quant)?.cast())?;
    let c = compare_logits(&expect, &got)?;
    println!("model: {}", describe(&spatial.spec));
    println!("inputs: {}", c.inputs);
    println!("budget: {}", budget.get());
    println!("max_abs_diff: {}", sig9(c.max_abs_diff));
    println!("mean_abs_diff: {}", sig9(c.mean_abs_diff));
    println!("argmax_agreement: {}%", sig9(100.0 * c.argmax_agreement));
    if c.max_abs_diff > EQUIV_TOLERANCE {
        return Err(Failure::Assertion(format!(
            "max logit difference {} exceeds {EQUIV_TOLERANCE}",
            sig9(c.max_abs_diff)
        )));
    }
    Ok(())
}

pub fn relu_bench(common: &Common, blocks: usize, out: Option<&str>) -> Result<(), Failure> {
    if blocks == 0 {
        return Err(Failure::Usage("--blocks must be positive".into()));
    }
    if common.budget.is_some() {
        return Err(Failure::Usage("relu-bench always sweeps budgets 1..=15; drop --budget".into()));
    }
    let quant = common.quant_or(QuantTable::ones())?;
    let rows = relu_error_sweep(&generate_test_blocks(blocks, common.seed), quant);
    let mut csv = String::from("budget,asm_rmse,apx_rmse\n");
    for r in &rows {
        writeln!(csv, "{},{},{}", r.budget.get(), sig9(r.asm_rmse), sig9(r.apx_rmse)).unwrap();
    }
    print!("{csv}");
    if let Some(path) = out {
        write_file(path, csv.as_bytes())?;
    }
    let (partial, full) = rows.split_at(rows.len() - 1);
    if let Some(r) = partial.iter().find(|r| r.asm_rmse > r.apx_rmse) {
        return Err(Failure::Assertion(format!("ASM error exceeds APX at budget {}", r.budget.get())));
    }
    if full[0].asm_rmse >= FULL_BUDGET_TOLERANCE || full[0].apx_rmse >= FULL_BUDGET_TOLERANCE {
        return Err(Failure::Assertion("ReLu is not exact at budget 15".into()));
    }
    Ok(())
}

/// Network input for one file, expressed under the model's table.
fn load_input(path: &str, model: &JpegModel<f32>) -> Result<CoefficientTensor<f32>, Failure> {
    let bytes = read_file(path)?;
    let coeffs = if bytes.starts_with(&[0xFF, 0xD8]) {
        let parsed = parse_jpeg(&bytes).map_err(with_path(path))?;
        // Stored coefficients describe pixels shifted down by 128.
        coefficients_for_network(&parsed).map_err(with_path(path))?.requantize(model.quant).affine(1.0, 128.0)
    } else {
        let image = load_pnm(&bytes, false).map_err(with_path(path))?;
        CoefficientTensor::from_spatial(&image.to_batch(), model.quant).map_err(with_path(path))?
    };
    let spec = &model.spec;
    if coeffs.channels() != spec.input_channels
        || coeffs.block_rows() * 8 != spec.height
        || coeffs.block_cols() * 8 != spec.width
    {
        return Err(Failure::Input(format!(
            "{path}: {} channel(s) of {}x{} do not match the network input {}",
            coeffs.channels(),
            coeffs.block_rows() * 8,
            coeffs.block_cols() * 8,
            describe(spec)
        )));
    }
    Ok(coeffs.cast())
}

pub fn infer(common: &Common, weights: Option<&str>, apx: bool, inputs: &[String]) -> Result<(), Failure> {
    let model = match weights {
        Some(path) => {
            let w = load_weights(path)?;
            let mut model = JpegModel::<f32>::from_weights(w).map_err(with_path(path))?;
            if let Some(q) = common.quant.as_deref() {
                let quant = parse_quant(q)?;
                if quant != model.quant {
                    model = JpegModel::from_spatial(&model.to_spatial_model(), quant, model.budget)?;
                }
            }
            let budget = common.budget_or(model.budget)?;
            model.with_budget(budget)
        }
        None => {
            let (spatial, quant, budget) = spatial_model(common, None)?;
            JpegModel::from_spatial(&spatial, quant, budget)?
        }
    };
    let model = model.with_relu(if apx { ReluVariant::Apx } else { ReluVariant::Asm });
    for path in inputs {
        let logits = model.forward(&load_input(path, &model)?)?;
        let values: Vec<String> = logits.data().iter().map(|&v| sig9(v)).collect();
        println!("{path}: class {} logits [{}]", argmax_rows(&logits)[0], values.join(", "));
    }
    Ok(())
}

pub fn encode(common: &Common, level_shift: bool, ycbcr: bool, input: &str, out: &str) -> Result<(), Failure> {
    let quant = common.quant_or(QuantTable::ones())?;
    let image = load_pnm(&read_file(input)?, ycbcr).map_err(with_path(input))?.pad_to_blocks();
    let mut pixels = image.to_batch();
    if level_shift {
        pixels = pixels.map(|v| v - 128.0);
    }
    let coeffs = CoefficientTensor::<f64>::from_spatial(&pixels, quant)?;
    let (channels, rows, cols) = (coeffs.channels(), coeffs.block_rows(), coeffs.block_cols());
    let mut bytes = format!("JCOEF v1 {channels} {rows} {cols}\n").into_bytes();
    for &c in coeffs.data().data() {
        bytes.extend_from_slice(&(round_coefficient(c) as i32).to_le_bytes());
    }
    write_file(out, &bytes)?;
    println!("{out}: {channels} channel(s), {rows}x{cols} blocks");
    Ok(())
}

pub fn throughput(common: &Common, batch: usize, reps: usize, weights: Option<&str>) -> Result<(), Failure> {
    if batch == 0 || reps == 0 {
        return Err(Failure::Usage("--batch and --reps must be positive".into()));
    }
    let (spatial, quant, budget) = spatial_model(common, weights)?;
    let jpeg = JpegModel::<f32>::from_spatial(&spatial, quant, budget)?;
    let x = random_inputs(&spatial.spec, batch, common.seed);
    let r = measure_throughput(&jpeg, &spatial, &x, reps)?;
    println!("model: {}", describe(&spatial.spec));
    println!("workload: {batch} images x {reps} reps = {} images per domain", r.images);
    println!("jpeg_images_per_sec: {:.3}", r.jpeg_rate());
    println!("spatial_images_per_sec: {:.3}", r.spatial_rate());
    println!("jpeg_over_spatial: {:.3}", r.ratio());
    Ok(())
}

pub fn convert(common: &Common, weights: &str, out: &str) -> Result<(), Failure> {
    let (spatial, quant, budget) = spatial_model(common, Some(weights))?;
    let jpeg = JpegModel::<f32>::from_spatial(&spatial, quant, budget)?;
    let w = jpeg.into_weights();
    w.save(out).map_err(with_path(out))?;
    println!("{out}: {} entries, budget {}", w.entries.len(), budget.get());
    Ok(())
}

pub fn init(
    common: &Common,
    out: &str,
    zero: bool,
    input_channels: usize,
    channels: &[usize],
    classes: usize,
    normalize: Option<&[f64]>,
) -> Result<(), Failure> {
    let mut strides = vec![2; channels.len()];
    if let Some(first) = strides.first_mut() {
        *first = 1;
    }
    let spec = NetworkSpec { input_channels, height: 32, width: 32, channels: channels.to_vec(), strides, kernel_size: 3, num_classes: classes };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut model = if zero {
        SpatialModel::zeros(&spec, (0..classes).map(|c| c as f64).collect())?
    } else {
        SpatialModel::random(&spec, common.seed)?
    };
    if let Some(&[mean, scale]) = normalize {
        if scale == 0.0 {
            return Err(Failure::Usage("--normalize scale must be non-zero".into()));
        }
        model.normalization = InputNormalization { mean, scale };
    }
    let w = model.to_weights(common.quant_or(QuantTable::ones())?, common.budget_or(FrequencyBudget::FULL)?);
    w.save(out).map_err(with_path(out))?;
    println!("{out}: {}", describe(&spec));
    Ok(())
}
