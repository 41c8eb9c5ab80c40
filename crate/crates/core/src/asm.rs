//! ReLu in the transform domain by Approximated Spatial Masking (ASM).
//!
//! A block's sign pattern is estimated from a low-frequency spatial
//! reconstruction, and the resulting 0/1 mask is multiplied into the
//! full-precision coefficients through the harmonic mixing tensor `H`, so
//! pixels with a correct mask keep their exact value. The APX baseline
//! instead applies ReLu to the approximation itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::CoefficientTensor;
use crate::tensor::{DenseTensor, Scalar};
use crate::transform::{block_forward, block_inverse, QuantTable, ZIGZAG_TO_NATURAL};

/// Number of spatial-frequency diagonals `alpha + beta` kept, `1..=15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct FrequencyBudget(usize);

impl FrequencyBudget {
    pub const FULL: FrequencyBudget = FrequencyBudget(15);

    pub fn new(n_freqs: usize) -> Result<Self> {
        if (1..=15).contains(&n_freqs) {
            Ok(FrequencyBudget(n_freqs))
        } else {
            Err(Error::InvalidBudget(n_freqs))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Whether frequency `(alpha, beta)` lies inside the budget.
    pub fn includes(self, alpha: usize, beta: usize) -> bool {
        alpha + beta < self.0
    }

    /// Per zigzag position: is the coefficient used by the approximation.
    pub fn zigzag_selection(self) -> [bool; 64] {
        let mut sel = [false; 64];
        for (k, &nat) in ZIGZAG_TO_NATURAL.iter().enumerate() {
            sel[k] = self.includes(nat / 8, nat % 8);
        }
        sel
    }

    pub fn coefficient_count(self) -> usize {
        self.zigzag_selection().iter().filter(|&&s| s).count()
    }
}

impl TryFrom<usize> for FrequencyBudget {
    type Error = Error;

    fn try_from(n: usize) -> Result<Self> {
        FrequencyBudget::new(n)
    }
}

impl From<FrequencyBudget> for usize {
    fn from(b: FrequencyBudget) -> usize {
        b.0
    }
}

/// Bilinear map taking a coefficient block and an 8×8 spatial mask to the
/// masked coefficient block, shape `(64, 8, 8, 64)` indexed `[k, m, n, k']`.
#[derive(Debug, Clone)]
pub struct HarmonicMixingTensor<T> {
    pub h: DenseTensor<T>,
    pub quant: QuantTable,
}

/// Builds `H` for a table: dequantize and un-zigzag `k`, inverse DCT onto
/// `(m, n)`, forward DCT back, zigzag and quantize onto `k'`.
pub fn build_harmonic_mixing<T: Scalar>(quant: QuantTable) -> HarmonicMixingTensor<T> {
    let inverse = block_inverse(&quant); // (k, m, n)
    let forward = block_forward(&quant); // (m, n, k')
    let h = DenseTensor::from_fn(&[64, 8, 8, 64], |i| {
        T::from_real(inverse.get(&[i[0], i[1], i[2]]) * forward.get(&[i[1], i[2], i[3]]))
    })
    .expect("static shape");
    HarmonicMixingTensor { h, quant }
}

impl<T: Scalar> HarmonicMixingTensor<T> {
    /// First half of the bilinear map: contracts each block with `H` over
    /// `k`, leaving one `(64 pixel × 64 coefficient)` matrix per block that
    /// any mask can then be applied to.
    pub fn mix(&self, blocks: &[T]) -> MixedBlocks<T> {
        assert_eq!(blocks.len() % 64, 0);
        let n = blocks.len() / 64;
        let mut mixed = vec![T::zero(); n * 64 * 64];
        T::gemm(n, 64, 64 * 64, blocks, self.h.data(), &mut mixed, false);
        MixedBlocks { mixed }
    }

    /// Masks a run of blocks: `out[b] = Σ_{k,mn} blocks[b,k] H[k,mn,:] mask[b,mn]`.
    pub fn apply(&self, blocks: &[T], masks: &[T], out: &mut [T]) {
        const CHUNK: usize = 256;
        for ((b, m), o) in blocks.chunks(CHUNK * 64).zip(masks.chunks(CHUNK * 64)).zip(out.chunks_mut(CHUNK * 64)) {
            let mixed = self.mix(b);
            for (i, (mask, dst)) in m.chunks_exact(64).zip(o.chunks_exact_mut(64)).enumerate() {
                mixed.apply_mask(i, mask, dst);
            }
        }
    }
}

/// Blocks contracted with `H`, awaiting a spatial mask.
pub struct MixedBlocks<T> {
    mixed: Vec<T>,
}

impl<T: Scalar> MixedBlocks<T> {
    pub fn len(&self) -> usize {
        self.mixed.len() / 4096
    }

    pub fn is_empty(&self) -> bool {
        self.mixed.is_empty()
    }

    /// Writes the masked coefficients of block `index` into `out`.
    pub fn apply_mask(&self, index: usize, mask: &[T], out: &mut [T]) {
        let m = &self.mixed[index * 4096..(index + 1) * 4096];
        out.iter_mut().for_each(|v| *v = T::zero());
        for (p, &g) in mask.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            for (o, &h) in out.iter_mut().zip(&m[p * 64..(p + 1) * 64]) {
                *o += g * h;
            }
        }
    }
}

/// Low-frequency reconstruction as a `(64 coefficient × 64 pixel)` matrix:
/// dequantize, keep the budgeted diagonals, inverse DCT.
#[derive(Debug, Clone)]
pub struct SpatialApproximator<T> {
    matrix: Vec<T>,
    pub budget: FrequencyBudget,
    pub quant: QuantTable,
}

impl<T: Scalar> SpatialApproximator<T> {
    pub fn new(budget: FrequencyBudget, quant: QuantTable) -> Self {
        let inverse = block_inverse(&quant).into_data();
        let sel = budget.zigzag_selection();
        let matrix = inverse
            .chunks_exact(64)
            .zip(sel)
            .flat_map(|(row, keep)| row.iter().map(move |&v| T::from_real(if keep { v } else { 0.0 })))
            .collect();
        SpatialApproximator { matrix, budget, quant }
    }

    /// Approximate pixels of consecutive blocks.
    pub fn approximate(&self, blocks: &[T]) -> Vec<T> {
        let n = blocks.len() / 64;
        let mut out = vec![T::zero(); blocks.len()];
        T::gemm(n, 64, 64, blocks, &self.matrix, &mut out, false);
        out
    }
}

/// Reconstructs one block from the coefficients inside the budget.
pub fn approx_spatial(block: &[f64; 64], budget: FrequencyBudget, quant: &QuantTable) -> [f64; 64] {
    let approx = SpatialApproximator::<f64>::new(budget, *quant).approximate(block);
    let mut out = [0.0; 64];
    out.copy_from_slice(&approx);
    out
}

/// Nonnegative mask: 1 where strictly positive, else 0.
pub fn nnm<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

pub fn nnm_mask(spatial: &[f64; 64]) -> [f64; 64] {
    spatial.map(nnm)
}

fn check_quant<T: Scalar>(coeffs: &CoefficientTensor<T>, quant: &QuantTable) -> Result<()> {
    if coeffs.quant() != quant {
        Err(Error::QuantMismatch)
    } else {
        Ok(())
    }
}

/// ASM ReLu: the mask comes from the budgeted approximation, the values
/// from the full coefficients.
pub fn asm_relu<T: Scalar>(
    coeffs: &CoefficientTensor<T>,
    budget: FrequencyBudget,
    h: &HarmonicMixingTensor<T>,
) -> Result<CoefficientTensor<T>> {
    check_quant(coeffs, &h.quant)?;
    let approx = SpatialApproximator::<T>::new(budget, h.quant);
    let blocks = coeffs.data().data();
    let masks: Vec<T> = approx.approximate(blocks).into_iter().map(nnm).collect();
    let mut out = vec![T::zero(); blocks.len()];
    h.apply(blocks, &masks, &mut out);
    CoefficientTensor::new(DenseTensor::new(coeffs.data().shape().to_vec(), out)?, h.quant)
}

/// APX ReLu: ReLu of the budgeted approximation, re-encoded.
pub fn apx_relu<T: Scalar>(
    coeffs: &CoefficientTensor<T>,
    budget: FrequencyBudget,
    quant: &QuantTable,
) -> Result<CoefficientTensor<T>> {
    check_quant(coeffs, quant)?;
    let approx = SpatialApproximator::<T>::new(budget, *quant);
    let blocks = coeffs.data().data();
    let rectified: Vec<T> = approx.approximate(blocks).into_iter().map(|v| v.max(T::zero())).collect();
    let forward: Vec<T> = block_forward(quant).data().iter().map(|&v| T::from_real(v)).collect();
    let mut out = vec![T::zero(); blocks.len()];
    T::gemm(blocks.len() / 64, 64, 64, &rectified, &forward, &mut out, false);
    CoefficientTensor::new(DenseTensor::new(coeffs.data().shape().to_vec(), out)?, *quant)
}

/// Random 4×4 blocks in `[-1, 1]` upsampled 2× with a box filter to 8×8.
pub fn generate_test_blocks(count: usize, seed: u64) -> Vec<[f64; 64]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let small: [f64; 16] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
            std::array::from_fn(|p| small[(p / 16) * 4 + (p % 8) / 2])
        })
        .collect()
}

/// Mean per-block RMSE against exact ReLu at one budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluErrorRow {
    pub budget: FrequencyBudget,
    pub asm_rmse: f64,
    pub apx_rmse: f64,
}

/// Pixel-value preservation of one ReLu variant over an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PreservationCount {
    /// Pixels whose approximate mask agrees with the exact sign.
    pub mask_correct: usize,
    /// Of those, pixels reproducing exact ReLu within tolerance.
    pub preserved: usize,
}

/// Runs ASM and APX on spatial blocks for every budget in `budgets` and
/// hands each block's spatial outputs to `visit(budget index, block, exact
/// relu, asm, apx, mask)`. Each block is mixed with `H` once.
fn sweep_blocks(
    blocks: &[[f64; 64]],
    budgets: &[FrequencyBudget],
    quant: QuantTable,
    mut visit: impl FnMut(usize, &[f64; 64], &[f64; 64], &[f64], &[f64], &[f64]),
) {
    const CHUNK: usize = 512;
    let h = build_harmonic_mixing::<f64>(quant);
    let forward = block_forward(&quant).into_data();
    let inverse = block_inverse(&quant).into_data();
    let approximators: Vec<_> = budgets.iter().map(|&b| SpatialApproximator::<f64>::new(b, quant)).collect();
    for chunk in blocks.chunks(CHUNK) {
        let n = chunk.len();
        let pixels: Vec<f64> = chunk.iter().flatten().copied().collect();
        let mut coeffs = vec![0.0; n * 64];
        f64::gemm(n, 64, 64, &pixels, &forward, &mut coeffs, false);
        let exact: Vec<[f64; 64]> = chunk.iter().map(|b| b.map(|v| v.max(0.0))).collect();
        let mixed = h.mix(&coeffs);
        for (bi, approx) in approximators.iter().enumerate() {
            let approx_px = approx.approximate(&coeffs);
            let masks: Vec<f64> = approx_px.iter().map(|&v| nnm(v)).collect();
            let mut asm = vec![0.0; n * 64];
            for i in 0..n {
                mixed.apply_mask(i, &masks[i * 64..(i + 1) * 64], &mut asm[i * 64..(i + 1) * 64]);
            }
            let rectified: Vec<f64> = approx_px.iter().map(|v| v.max(0.0)).collect();
            let mut apx = vec![0.0; n * 64];
            f64::gemm(n, 64, 64, &rectified, &forward, &mut apx, false);
            let mut asm_px = vec![0.0; n * 64];
            let mut apx_px = vec![0.0; n * 64];
            f64::gemm(n, 64, 64, &asm, &inverse, &mut asm_px, false);
            f64::gemm(n, 64, 64, &apx, &inverse, &mut apx_px, false);
            for i in 0..n {
                let r = i * 64..(i + 1) * 64;
                visit(bi, &chunk[i], &exact[i], &asm_px[r.clone()], &apx_px[r.clone()], &masks[r]);
            }
        }
    }
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Mean RMSE of ASM and APX against exact ReLu in the spatial domain, for
/// budgets 1 through 15.
pub fn relu_error_sweep(blocks: &[[f64; 64]], quant: QuantTable) -> Vec<ReluErrorRow> {
    let budgets: Vec<_> = (1..=15).map(FrequencyBudget).collect();
    let mut sums = vec![(0.0, 0.0); budgets.len()];
    sweep_blocks(blocks, &budgets, quant, |bi, _, exact, asm, apx, _| {
        sums[bi].0 += rmse(asm, exact);
        sums[bi].1 += rmse(apx, exact);
    });
    let n = blocks.len().max(1) as f64;
    budgets
        .into_iter()
        .zip(sums)
        .map(|(budget, (a, p))| ReluErrorRow { budget, asm_rmse: a / n, apx_rmse: p / n })
        .collect()
}

/// Counts, for ASM and APX at one budget, how many pixels with a correct
/// mask reproduce exact ReLu within `tolerance`.
pub fn value_preservation(
    blocks: &[[f64; 64]],
    budget: FrequencyBudget,
    quant: QuantTable,
    tolerance: f64,
) -> (PreservationCount, PreservationCount) {
    let (mut asm_count, mut apx_count) = (PreservationCount::default(), PreservationCount::default());
    sweep_blocks(blocks, &[budget], quant, |_, pixels, exact, asm, apx, mask| {
        for p in 0..64 {
            // Both variants zero exactly the pixels where the approximation is not positive.
            if (mask[p] > 0.0) == (pixels[p] > 0.0) {
                asm_count.mask_correct += 1;
                asm_count.preserved += ((asm[p] - exact[p]).abs() <= tolerance) as usize;
                apx_count.mask_correct += 1;
                apx_count.preserved += ((apx[p] - exact[p]).abs() <= tolerance) as usize;
            }
        }
    });
    (asm_count, apx_count)
}
